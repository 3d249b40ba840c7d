#pragma once

#include <span>
#include <vector>

#include "dspnet/tape.hpp"

namespace dspnet {

// Differentiable ops recorded on a Tape. Every op validates shapes, throws
// DimensionError on mismatch, and rejects non-finite results.

template <class T>
Var<T> add(Var<T> a, Var<T> b);
template <class T>
Var<T> sub(Var<T> a, Var<T> b);
template <class T>
Var<T> mul(Var<T> a, Var<T> b);
template <class T>
Var<T> scale(Var<T> a, T s);
template <class T>
Var<T> relu(Var<T> x);

template <class T>
Var<T> sum(Var<T> x);
template <class T>
Var<T> mean(Var<T> x);

template <class T>
Var<T> reshape(Var<T> x, Shape shape);
/// [N x ...] -> [N x prod(...)]
template <class T>
Var<T> flatten(Var<T> x);

/// c = a * b for a [m x k], b [k x n]. Either operand may be a strided
/// parameter view.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b);

/// y = x * W^T + bias for x [N x in], W [out x in]. `bias` may be invalid.
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

/// Cross-correlation of x [N x C x H x W] with w [O x C x k x k].
/// Output extent (H + 2*pad - k) / stride + 1 must be integral.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, std::size_t stride, std::size_t pad);

/// Non-overlapping window x window mean pooling; H and W must divide evenly.
template <class T>
Var<T> avg_pool2d(Var<T> x, std::size_t window);

/// [N x C x H x W] -> [N x C]
template <class T>
Var<T> global_avg_pool(Var<T> x);

template <class T>
struct RunningStats {
    Tensor<T> mean;
    Tensor<T> var;

    RunningStats() = default;
    explicit RunningStats(std::size_t channels) : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)) {}
    std::size_t channels() const { return mean.size(); }
    friend bool operator==(const RunningStats&, const RunningStats&) = default;
};

enum class BnMode { train, eval };

struct BnOptions {
    BnMode mode = BnMode::train;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Per-channel normalization of x [N x C x ...] followed by gamma * xhat + beta.
/// Train mode uses batch statistics (biased variance) and, when `stats` is
/// non-null, folds them into it: r <- (1 - momentum) r + momentum b, with the
/// unbiased batch variance. Eval mode normalizes with `stats`.
template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, RunningStats<T>* stats, const BnOptions& opt);

/// Row-wise v / max(||v||, eps) over the last dimension.
template <class T>
Var<T> l2_normalize(Var<T> x, T eps = T(1e-12));

/// Mean over rows of -log softmax(logits)[label].
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels);

/// Mean over rows of KL(teacher || softmax(student_logits)). `teacher` holds
/// probabilities and carries no gradient.
template <class T>
Var<T> distill_kl(const Tensor<T>& teacher, Var<T> student_logits);

/// Row-wise softmax, no tape.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace dspnet
