#pragma once

#include <map>
#include <string>

#include "dspnet/slimnet.hpp"

namespace dspnet {

enum class OptimKind { lars, sgd_momentum };

struct OptimSpec {
    OptimKind kind = OptimKind::lars;
    double base_lr = 0.2;
    std::size_t batch_size = 128;
    double momentum = 0.9;
    double weight_decay = 1.5e-6;
    std::size_t warmup_epochs = 2;
    std::size_t total_epochs = 20;
    double lars_eta = 0.001;
    bool exclude_bias_bn = true;  // no weight decay and no trust ratio for bias / BN tensors

    friend bool operator==(const OptimSpec&, const OptimSpec&) = default;
};

/// Throws ConfigError on out-of-range fields.
void validate_optim(const OptimSpec& spec);

/// base_lr * batch_size / 256
double effective_lr(const OptimSpec& spec);

/// Linear ramp 0 -> peak over `warmup_steps`, then cosine decay to 0 at `total_steps`.
double schedule_lr(std::uint64_t step, std::uint64_t total_steps, std::uint64_t warmup_steps, double peak);

template <class T>
using MomentumBuffers = std::map<std::string, Tensor<T>>;

/// One LARS update of every tensor in `params` that has an entry in `grads`;
/// gradient entries without a matching tensor are ignored.
template <class T>
void lars_step(ParamStore<T>& params, const Gradients<T>& grads, double lr, const OptimSpec& spec,
               MomentumBuffers<T>& buffers);

/// m <- mu m + g + wd w;  w <- w - lr m, over the same tensor selection as lars_step.
template <class T>
void sgd_momentum_step(ParamStore<T>& params, const Gradients<T>& grads, double lr, double momentum,
                       double weight_decay, MomentumBuffers<T>& buffers);

}  // namespace dspnet
