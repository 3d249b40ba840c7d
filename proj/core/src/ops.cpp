#include "dspnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace dspnet {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

template <class T>
ConstMap<T> cmap(const MatRef<T>& m) {
    return ConstMap<T>(m.data, static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols),
                       Eigen::OuterStride<>(static_cast<Eigen::Index>(m.ld)));
}

template <class T>
ConstMap<T> cmap(const T* p, std::size_t rows, std::size_t cols) {
    return ConstMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                       Eigen::OuterStride<>(static_cast<Eigen::Index>(cols)));
}

template <class T>
MutMap<T> mmap(T* p, std::size_t rows, std::size_t cols) {
    return MutMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                     Eigen::OuterStride<>(static_cast<Eigen::Index>(cols)));
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

template <class T>
void require_same(Var<T> a, Var<T> b, const char* op) {
    require(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

struct ConvGeom {
    std::size_t n, c, h, w, o, k, stride, pad, ho, wo;
    std::size_t patch() const { return c * k * k; }
    std::size_t out_pixels() const { return ho * wo; }
};

/// Output columns [lo, hi) whose input column ow * stride + kw - pad lies inside the image.
struct ColRange {
    std::size_t lo, hi;
};

ColRange valid_cols(const ConvGeom& g, std::size_t kw) {
    const std::size_t lo = kw >= g.pad ? 0 : (g.pad - kw + g.stride - 1) / g.stride;
    if (g.w + g.pad <= kw) return {0, 0};
    const std::size_t hi = std::min(g.wo, (g.w - 1 + g.pad - kw) / g.stride + 1);
    return {std::min(lo, hi), hi};
}

/// Writes the patch rows of one image; row r starts at cols + r * ld.
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols, std::size_t ld) {
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t kh = 0; kh < g.k; ++kh)
            for (std::size_t kw = 0; kw < g.k; ++kw) {
                T* row = cols + ((c * g.k + kh) * g.k + kw) * ld;
                const auto [lo, hi] = valid_cols(g, kw);
                for (std::size_t oh = 0; oh < g.ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oh * g.wo;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill_n(dst, g.wo, T(0));
                        continue;
                    }
                    const T* src = x + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
                    std::fill_n(dst, lo, T(0));
                    if (g.stride == 1)
                        std::copy_n(src + lo + kw - g.pad, hi - lo, dst + lo);
                    else
                        for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride + kw - g.pad];
                    std::fill(dst + hi, dst + g.wo, T(0));
                }
            }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, std::size_t ld, T* dx) {
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t kh = 0; kh < g.k; ++kh)
            for (std::size_t kw = 0; kw < g.k; ++kw) {
                const T* row = cols + ((c * g.k + kh) * g.k + kw) * ld;
                const auto [lo, hi] = valid_cols(g, kw);
                for (std::size_t oh = 0; oh < g.ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = dx + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
                    const T* src = row + oh * g.wo;
                    if (g.stride == 1) {
                        T* d = dst + lo + kw - g.pad;
                        for (std::size_t ow = lo; ow < hi; ++ow) d[ow - lo] += src[ow];
                    } else {
                        for (std::size_t ow = lo; ow < hi; ++ow) dst[ow * g.stride + kw - g.pad] += src[ow];
                    }
                }
            }
}

/// Sum of term(i) for i in [0, len), kept in independent double partial
/// sums so the loop vectorizes.
template <class F>
double run_sum(std::size_t len, F term) {
    constexpr std::size_t lanes = 8;
    double part[lanes] = {};
    std::size_t i = 0;
    for (; i + lanes <= len; i += lanes)
        for (std::size_t j = 0; j < lanes; ++j) part[j] += static_cast<double>(term(i + j));
    double total = 0;
    for (; i < len; ++i) total += static_cast<double>(term(i));
    for (double v : part) total += v;
    return total;
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same(a, b, "add");
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return a.tape->record("add", std::move(out), {a, b}, [a, b](auto& ctx) {
        const auto& g = ctx.grad_out();
        for (auto v : {a, b})
            if (auto* d = ctx.grad(v))
                for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same(a, b, "sub");
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return a.tape->record("sub", std::move(out), {a, b}, [a, b](auto& ctx) {
        const auto& g = ctx.grad_out();
        if (auto* d = ctx.grad(a))
            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
        if (auto* d = ctx.grad(b))
            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] -= g[i];
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same(a, b, "mul");
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return a.tape->record("mul", std::move(out), {a, b}, [a, b](auto& ctx) {
        const auto& g = ctx.grad_out();
        const auto& av = ctx.value(a);
        const auto& bv = ctx.value(b);
        if (auto* d = ctx.grad(a))
            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * bv[i];
        if (auto* d = ctx.grad(b))
            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * av[i];
    });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.values()) v *= s;
    return a.tape->record("scale", std::move(out), {a}, [a, s](auto& ctx) {
        const auto& g = ctx.grad_out();
        if (auto* d = ctx.grad(a))
            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * s;
    });
}

template <class T>
Var<T> relu(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    return x.tape->record("relu", std::move(out), {x}, [x](auto& ctx) {
        const auto& g = ctx.grad_out();
        const auto& xv = ctx.value(x);
        if (auto* d = ctx.grad(x))
            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += xv[i] > T(0) ? g[i] : T(0);
    });
}

template <class T>
Var<T> sum(Var<T> x) {
    const auto& xv = x.value();
    const T* p = xv.data();
    const T s = static_cast<T>(run_sum(xv.size(), [p](std::size_t i) { return p[i]; }));
    return x.tape->record("sum", Tensor<T>::scalar(s), {x}, [x](auto& ctx) {
        const T g = ctx.grad_out()[0];
        if (auto* d = ctx.grad(x))
            for (auto& v : d->values()) v += g;
    });
}

template <class T>
Var<T> mean(Var<T> x) {
    const std::size_t n = shape_size(x.shape());
    return scale(sum(x), T(1) / static_cast<T>(n));
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return x.tape->record("reshape", std::move(out), {x}, [x](auto& ctx) {
        const auto& g = ctx.grad_out();
        if (auto* d = ctx.grad(x))
            for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    });
}

template <class T>
Var<T> flatten(Var<T> x) {
    const auto& s = x.shape();
    require(!s.empty(), "flatten: rank 0");
    return reshape(x, Shape{s[0], shape_size(s) / s[0]});
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& tape = *a.tape;
    const auto am = tape.matrix(a);
    const auto bm = tape.matrix(b);
    require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: operands must be 2-D");
    require(am.cols == bm.rows, "matmul: inner extents " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor<T> out(Shape{am.rows, bm.cols});
    mmap(out.data(), am.rows, bm.cols).noalias() = cmap(am) * cmap(bm);
    return tape.record("matmul", std::move(out), {a, b}, [a, b](auto& ctx) {
        const auto& g = ctx.grad_out();
        const auto am = ctx.matrix(a);
        const auto bm = ctx.matrix(b);
        const auto gm = cmap(g.data(), am.rows, bm.cols);
        if (auto* d = ctx.grad(a)) mmap(d->data(), am.rows, am.cols).noalias() += gm * cmap(bm).transpose();
        if (auto* d = ctx.grad(b)) mmap(d->data(), bm.rows, bm.cols).noalias() += cmap(am).transpose() * gm;
    });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
    Tape<T>& tape = *x.tape;
    require(x.shape().size() == 2 && weight.shape().size() == 2, "linear: x and weight must be 2-D");
    const auto xm = tape.matrix(x);
    const auto wm = tape.matrix(weight);
    require(xm.cols == wm.cols, "linear: input width " + shape_str(x.shape()) + " vs weight " +
                                    shape_str(weight.shape()));
    const std::size_t n = xm.rows, out_dim = wm.rows;
    Tensor<T> out(Shape{n, out_dim});
    auto om = mmap(out.data(), n, out_dim);
    om.noalias() = cmap(xm) * cmap(wm).transpose();
    const bool has_bias = bias.valid();
    if (has_bias) {
        require(shape_size(bias.shape()) == out_dim, "linear: bias extent");
        const auto bm = tape.matrix(bias);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) om(i, j) += bm.data[j];
    }
    auto fn = [x, weight, bias, has_bias](auto& ctx) {
        const auto& g = ctx.grad_out();
        const auto xm = ctx.matrix(x);
        const auto wm = ctx.matrix(weight);
        const auto gm = cmap(g.data(), xm.rows, wm.rows);
        if (auto* d = ctx.grad(x)) mmap(d->data(), xm.rows, xm.cols).noalias() += gm * cmap(wm);
        if (auto* d = ctx.grad(weight)) mmap(d->data(), wm.rows, wm.cols).noalias() += gm.transpose() * cmap(xm);
        if (has_bias)
            if (auto* d = ctx.grad(bias))
                for (std::size_t i = 0; i < xm.rows; ++i)
                    for (std::size_t j = 0; j < wm.rows; ++j) (*d)[j] += gm(i, j);
    };
    if (has_bias) return tape.record("linear", std::move(out), {x, weight, bias}, fn);
    return tape.record("linear", std::move(out), {x, weight}, fn);
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, std::size_t stride, std::size_t pad) {
    Tape<T>& tape = *x.tape;
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    require(xs.size() == 4, "conv2d: input must be N x C x H x W, got " + shape_str(xs));
    require(ws.size() == 4 && ws[2] == ws[3], "conv2d: weight must be O x C x k x k, got " + shape_str(ws));
    require(ws[1] == xs[1], "conv2d: channel mismatch " + shape_str(xs) + " vs " + shape_str(ws));
    require(stride >= 1, "conv2d: stride must be positive");
    ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad, 0, 0};
    require(g.k <= g.h + 2 * pad && g.k <= g.w + 2 * pad, "conv2d: kernel larger than padded input");
    require((g.h + 2 * pad - g.k) % stride == 0 && (g.w + 2 * pad - g.k) % stride == 0,
            "conv2d: non-integer output extent for " + shape_str(xs) + " k=" + std::to_string(g.k) +
                " stride=" + std::to_string(stride) + " pad=" + std::to_string(pad));
    g.ho = (g.h + 2 * pad - g.k) / stride + 1;
    g.wo = (g.w + 2 * pad - g.k) / stride + 1;

    const auto wm = tape.matrix(w);
    const T* xv = x.value().data();
    // One GEMM per image, so an image's output does not depend on its batch.
    const std::size_t np = g.out_pixels(), col_size = g.patch() * np;
    const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.o * np;
    const bool keep = tape.requires_grad(w);
    auto saved = std::make_shared<std::vector<T>>(keep ? g.n * col_size : col_size);
    Tensor<T> out(Shape{g.n, g.o, g.ho, g.wo});
    for (std::size_t n = 0; n < g.n; ++n) {
        T* cols = saved->data() + (keep ? n * col_size : 0);
        im2col(xv + n * in_stride, g, cols, np);
        mmap(out.data() + n * out_stride, g.o, np).noalias() = cmap(wm) * cmap(cols, g.patch(), np);
    }
    if (!keep) saved.reset();

    return tape.record("conv2d", std::move(out), {x, w}, [x, w, g, saved](auto& ctx) {
        const auto& grad = ctx.grad_out();
        auto* dx = ctx.grad(x);
        auto* dw = ctx.grad(w);
        const std::size_t np = g.out_pixels(), col_size = g.patch() * np;
        const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.o * np;
        std::vector<T> dcols(dx ? col_size : 0);
        for (std::size_t n = 0; n < g.n; ++n) {
            const auto gm = cmap(grad.data() + n * out_stride, g.o, np);
            if (dw)
                mmap(dw->data(), g.o, g.patch()).noalias() +=
                    gm * cmap(saved->data() + n * col_size, g.patch(), np).transpose();
            if (dx) {
                mmap(dcols.data(), g.patch(), np).noalias() = cmap(ctx.matrix(w)).transpose() * gm;
                col2im_add(dcols.data(), g, np, dx->data() + n * in_stride);
            }
        }
    });
}

template <class T>
Var<T> avg_pool2d(Var<T> x, std::size_t window) {
    const Shape& s = x.shape();
    require(s.size() == 4, "avg_pool2d: input must be N x C x H x W");
    require(window >= 1 && s[2] % window == 0 && s[3] % window == 0,
            "avg_pool2d: window " + std::to_string(window) + " does not divide " + shape_str(s));
    if (window == 1) return x;
    const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], ho = h / window, wo = w / window;
    const T inv = T(1) / static_cast<T>(window * window);
    Tensor<T> out(Shape{s[0], s[1], ho, wo});
    const T* xv = x.value().data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t io = 0; io < ho; ++io) {
            T* o = out.data() + (p * ho + io) * wo;
            for (std::size_t di = 0; di < window; ++di) {
                const T* r = xv + (p * h + io * window + di) * w;
                for (std::size_t jo = 0; jo < wo; ++jo)
                    for (std::size_t dj = 0; dj < window; ++dj) o[jo] += r[jo * window + dj];
            }
        }
    for (auto& v : out.values()) v *= inv;
    return x.tape->record("avg_pool2d", std::move(out), {x}, [x, planes, h, w, ho, wo, window, inv](auto& ctx) {
        const auto& g = ctx.grad_out();
        if (auto* d = ctx.grad(x))
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t io = 0; io < ho; ++io) {
                    const T* gr = g.data() + (p * ho + io) * wo;
                    for (std::size_t di = 0; di < window; ++di) {
                        T* r = d->data() + (p * h + io * window + di) * w;
                        for (std::size_t jo = 0; jo < wo; ++jo)
                            for (std::size_t dj = 0; dj < window; ++dj) r[jo * window + dj] += gr[jo] * inv;
                    }
                }
    });
}

template <class T>
Var<T> global_avg_pool(Var<T> x) {
    const Shape& s = x.shape();
    require(s.size() == 4, "global_avg_pool: input must be N x C x H x W");
    const std::size_t rows = s[0] * s[1], area = s[2] * s[3];
    Tensor<T> out(Shape{s[0], s[1]});
    const T* xv = x.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t i = 0; i < area; ++i) acc += xv[r * area + i];
        out[r] = acc / static_cast<T>(area);
    }
    return x.tape->record("global_avg_pool", std::move(out), {x}, [x, rows, area](auto& ctx) {
        const auto& g = ctx.grad_out();
        if (auto* d = ctx.grad(x))
            for (std::size_t r = 0; r < rows; ++r) {
                const T v = g[r] / static_cast<T>(area);
                for (std::size_t i = 0; i < area; ++i) (*d)[r * area + i] += v;
            }
    });
}

template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, RunningStats<T>* stats, const BnOptions& opt) {
    Tape<T>& tape = *x.tape;
    const Shape& s = x.shape();
    require(s.size() >= 2, "batch_norm: input must be N x C x ...");
    const std::size_t n = s[0], c = s[1], area = shape_size(s) / (n * c);
    require(shape_size(gamma.shape()) == c && shape_size(beta.shape()) == c,
            "batch_norm: affine extent does not match " + std::to_string(c) + " channels");
    const bool train = opt.mode == BnMode::train;
    if (train && n < 2) throw ContractError("batch_norm: degenerate batch of size " + std::to_string(n) + " in train mode");
    if (stats && stats->channels() != c)
        throw DimensionError("batch_norm: running stats have " + std::to_string(stats->channels()) + " channels, input " +
                             std::to_string(c));
    if (!train && !stats) throw ContractError("batch_norm: eval mode needs running statistics");

    const T* xv = x.value().data();
    const auto gm = tape.matrix(gamma);
    const auto bm = tape.matrix(beta);
    const std::size_t count = n * area;

    auto inv_std = std::make_shared<std::vector<T>>(c);
    auto xhat = std::make_shared<Tensor<T>>(s);
    Tensor<T> out(s);
    for (std::size_t ch = 0; ch < c; ++ch) {
        T mu, var;
        if (train) {
            double acc = 0, acc2 = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = xv + (i * c + ch) * area;
                acc += run_sum(area, [p](std::size_t a) { return p[a]; });
            }
            const double m = acc / static_cast<double>(count);
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = xv + (i * c + ch) * area;
                acc2 += run_sum(area, [p, m](std::size_t a) { return (p[a] - m) * (p[a] - m); });
            }
            mu = static_cast<T>(m);
            var = static_cast<T>(acc2 / static_cast<double>(count));
            if (stats) {
                const T mom = static_cast<T>(opt.momentum);
                const T unbiased = static_cast<T>(acc2 / static_cast<double>(count - 1));
                stats->mean[ch] = (T(1) - mom) * stats->mean[ch] + mom * mu;
                stats->var[ch] = (T(1) - mom) * stats->var[ch] + mom * unbiased;
            }
        } else {
            mu = stats->mean[ch];
            var = stats->var[ch];
        }
        const T istd = T(1) / std::sqrt(var + static_cast<T>(opt.eps));
        (*inv_std)[ch] = istd;
        const T gch = gm.data[ch], bch = bm.data[ch];
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ch) * area;
            for (std::size_t a = 0; a < area; ++a) {
                const T xh = (xv[off + a] - mu) * istd;
                (*xhat)[off + a] = xh;
                out[off + a] = gch * xh + bch;
            }
        }
    }

    return tape.record("batch_norm", std::move(out), {x, gamma, beta},
                       [x, gamma, beta, inv_std, xhat, n, c, area, train](auto& ctx) {
                           const auto& g = ctx.grad_out();
                           const auto gm = ctx.matrix(gamma);
                           auto* dx = ctx.grad(x);
                           auto* dg = ctx.grad(gamma);
                           auto* db = ctx.grad(beta);
                           const T cnt = static_cast<T>(n * area);
                           for (std::size_t ch = 0; ch < c; ++ch) {
                               double acc_g = 0, acc_gx = 0;
                               for (std::size_t i = 0; i < n; ++i) {
                                   const T* gp = g.data() + (i * c + ch) * area;
                                   const T* hp = xhat->data() + (i * c + ch) * area;
                                   acc_g += run_sum(area, [gp](std::size_t a) { return gp[a]; });
                                   acc_gx += run_sum(area, [gp, hp](std::size_t a) { return gp[a] * hp[a]; });
                               }
                               const T sum_g = static_cast<T>(acc_g), sum_gx = static_cast<T>(acc_gx);
                               if (dg) (*dg)[ch] += sum_gx;
                               if (db) (*db)[ch] += sum_g;
                               if (!dx) continue;
                               const T k = gm.data[ch] * (*inv_std)[ch];
                               const T mean_g = train ? sum_g / cnt : T(0), mean_gx = train ? sum_gx / cnt : T(0);
                               for (std::size_t i = 0; i < n; ++i) {
                                   const std::size_t off = (i * c + ch) * area;
                                   T* d = dx->data() + off;
                                   const T* gp = g.data() + off;
                                   const T* hp = xhat->data() + off;
                                   for (std::size_t a = 0; a < area; ++a) d[a] += k * (gp[a] - mean_g - hp[a] * mean_gx);
                               }
                           }
                       });
}

template <class T>
Var<T> l2_normalize(Var<T> x, T eps) {
    const Shape& s = x.shape();
    require(!s.empty() && s.back() >= 1, "l2_normalize: empty last dimension");
    const std::size_t d = s.back(), rows = shape_size(s) / d;
    Tensor<T> out = x.value();
    auto norms = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += out[r * d + j] * out[r * d + j];
        const T nrm = std::sqrt(acc);
        (*norms)[r] = nrm;
        const T denom = std::max(nrm, eps);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= denom;
    }
    auto y = std::make_shared<Tensor<T>>(out);
    return x.tape->record("l2_normalize", std::move(out), {x}, [x, y, norms, rows, d, eps](auto& ctx) {
        const auto& g = ctx.grad_out();
        auto* dx = ctx.grad(x);
        if (!dx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const T nrm = (*norms)[r];
            if (nrm > eps) {
                T dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += (*y)[r * d + j] * g[r * d + j];
                for (std::size_t j = 0; j < d; ++j) (*dx)[r * d + j] += (g[r * d + j] - (*y)[r * d + j] * dot) / nrm;
            } else {
                for (std::size_t j = 0; j < d; ++j) (*dx)[r * d + j] += g[r * d + j] / eps;
            }
        }
    });
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    require(logits.rank() == 2, "softmax_rows: logits must be 2-D");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    Tensor<T> p = logits;
    for (std::size_t i = 0; i < n; ++i) {
        T* row = p.data() + i * k;
        const T m = *std::max_element(row, row + k);
        T z = 0;
        for (std::size_t j = 0; j < k; ++j) z += (row[j] = std::exp(row[j] - m));
        for (std::size_t j = 0; j < k; ++j) row[j] /= z;
    }
    return p;
}

namespace {

template <class T>
std::vector<T> log_softmax_row(const T* row, std::size_t k) {
    const T m = *std::max_element(row, row + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    const T lz = m + std::log(z);
    std::vector<T> out(k);
    for (std::size_t j = 0; j < k; ++j) out[j] = row[j] - lz;
    return out;
}

}  // namespace

template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels) {
    const Shape& s = logits.shape();
    require(s.size() == 2 && s[0] == labels.size(), "cross_entropy: logits/labels mismatch");
    const std::size_t n = s[0], k = s[1];
    const auto& lv = logits.value();
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0," +
                                std::to_string(k) + ")");
        loss -= log_softmax_row(lv.data() + i * k, k)[static_cast<std::size_t>(labels[i])];
    }
    loss /= static_cast<T>(n);
    std::vector<int> lab(labels.begin(), labels.end());
    return logits.tape->record("cross_entropy", Tensor<T>::scalar(loss), {logits},
                               [logits, lab = std::move(lab), n, k](auto& ctx) {
                                   auto* d = ctx.grad(logits);
                                   if (!d) return;
                                   const T g = ctx.grad_out()[0] / static_cast<T>(n);
                                   const auto p = softmax_rows(ctx.value(logits));
                                   for (std::size_t i = 0; i < n; ++i)
                                       for (std::size_t j = 0; j < k; ++j)
                                           (*d)[i * k + j] +=
                                               g * (p[i * k + j] - (static_cast<std::size_t>(lab[i]) == j ? T(1) : T(0)));
                               });
}

template <class T>
Var<T> distill_kl(const Tensor<T>& teacher, Var<T> student_logits) {
    const Shape& s = student_logits.shape();
    require(s.size() == 2 && teacher.shape() == s, "distill_kl: teacher/student shape mismatch");
    const std::size_t n = s[0], k = s[1];
    const auto& lv = student_logits.value();
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ls = log_softmax_row(lv.data() + i * k, k);
        for (std::size_t j = 0; j < k; ++j) {
            const T pt = teacher[i * k + j];
            if (pt > T(0)) loss += pt * (std::log(pt) - ls[j]);
        }
    }
    loss /= static_cast<T>(n);
    auto t = std::make_shared<Tensor<T>>(teacher);
    return student_logits.tape->record("distill_kl", Tensor<T>::scalar(loss), {student_logits},
                                       [student_logits, t, n, k](auto& ctx) {
                                           auto* d = ctx.grad(student_logits);
                                           if (!d) return;
                                           const T g = ctx.grad_out()[0] / static_cast<T>(n);
                                           const auto p = softmax_rows(ctx.value(student_logits));
                                           for (std::size_t i = 0; i < n * k; ++i) (*d)[i] += g * (p[i] - (*t)[i]);
                                       });
}

#define DSPNET_INSTANTIATE_OPS(T)                                                           \
    template Var<T> add(Var<T>, Var<T>);                                                    \
    template Var<T> sub(Var<T>, Var<T>);                                                    \
    template Var<T> mul(Var<T>, Var<T>);                                                    \
    template Var<T> scale(Var<T>, T);                                                       \
    template Var<T> relu(Var<T>);                                                           \
    template Var<T> sum(Var<T>);                                                            \
    template Var<T> mean(Var<T>);                                                           \
    template Var<T> reshape(Var<T>, Shape);                                                 \
    template Var<T> flatten(Var<T>);                                                        \
    template Var<T> matmul(Var<T>, Var<T>);                                                 \
    template Var<T> linear(Var<T>, Var<T>, Var<T>);                                         \
    template Var<T> conv2d(Var<T>, Var<T>, std::size_t, std::size_t);                       \
    template Var<T> avg_pool2d(Var<T>, std::size_t);                                        \
    template Var<T> global_avg_pool(Var<T>);                                                \
    template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, RunningStats<T>*, const BnOptions&); \
    template Var<T> l2_normalize(Var<T>, T);                                                \
    template Var<T> cross_entropy(Var<T>, std::span<const int>);                            \
    template Var<T> distill_kl(const Tensor<T>&, Var<T>);                                   \
    template Tensor<T> softmax_rows(const Tensor<T>&);

DSPNET_INSTANTIATE_OPS(float)
DSPNET_INSTANTIATE_OPS(double)

}  // namespace dspnet
