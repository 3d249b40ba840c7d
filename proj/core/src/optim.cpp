#include "dspnet/optim.hpp"

#include <cmath>
#include <numbers>

namespace dspnet {

void validate_optim(const OptimSpec& spec) {
    if (!(spec.base_lr > 0)) throw ConfigError("base_lr must be positive");
    if (spec.batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (!(spec.momentum >= 0 && spec.momentum < 1)) throw ConfigError("momentum outside [0, 1)");
    if (!(spec.weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (!(spec.lars_eta > 0)) throw ConfigError("lars_eta must be positive");
    if (spec.warmup_epochs > spec.total_epochs)
        throw ConfigError("warmup_epochs (" + std::to_string(spec.warmup_epochs) + ") exceeds total_epochs (" +
                          std::to_string(spec.total_epochs) + ")");
}

double effective_lr(const OptimSpec& spec) {
    if (spec.batch_size == 0) throw ConfigError("batch_size must be at least 1");
    return spec.base_lr * static_cast<double>(spec.batch_size) / 256.0;
}

double schedule_lr(std::uint64_t step, std::uint64_t total_steps, std::uint64_t warmup_steps, double peak) {
    if (warmup_steps > total_steps)
        throw ConfigError("warmup steps (" + std::to_string(warmup_steps) + ") exceed total steps (" +
                          std::to_string(total_steps) + ")");
    if (step > total_steps) throw ContractError("lr schedule step beyond total_steps");
    if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (total_steps == warmup_steps) return peak;
    const double t = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return peak * (std::cos(std::numbers::pi * t) + 1) / 2;
}

namespace {

template <class T>
Tensor<T>& buffer_for(MomentumBuffers<T>& buffers, const std::string& name, const Shape& shape) {
    auto it = buffers.find(name);
    if (it == buffers.end()) it = buffers.emplace(name, Tensor<T>(shape)).first;
    if (it->second.shape() != shape) throw ContractError("momentum buffer shape mismatch for " + name);
    return it->second;
}

template <class T>
const Tensor<T>* grad_for(const Gradients<T>& grads, const std::string& name, const Tensor<T>& w) {
    auto it = grads.find(name);
    if (it == grads.end()) return nullptr;
    if (it->second.shape() != w.shape())
        throw ContractError("gradient " + shape_str(it->second.shape()) + " does not match parameter " + name + " " +
                            shape_str(w.shape()));
    return &it->second;
}

}  // namespace

template <class T>
void lars_step(ParamStore<T>& params, const Gradients<T>& grads, double lr, const OptimSpec& spec,
               MomentumBuffers<T>& buffers) {
    std::vector<double> g;
    for (auto& [name, w] : params.tensors) {
        const Tensor<T>* grad = grad_for(grads, name, w);
        if (!grad) continue;
        const bool excluded = spec.exclude_bias_bn && params.kinds.at(name) != ParamKind::weight;
        const double wd = excluded ? 0.0 : spec.weight_decay;
        g.resize(w.size());
        double wn = 0, gn = 0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            g[i] = static_cast<double>((*grad)[i]) + wd * static_cast<double>(w[i]);
            wn += static_cast<double>(w[i]) * static_cast<double>(w[i]);
            gn += g[i] * g[i];
        }
        wn = std::sqrt(wn);
        gn = std::sqrt(gn);
        const double r = (!excluded && wn > 0 && gn > 0) ? spec.lars_eta * wn / (gn + 1e-9) : 1.0;
        Tensor<T>& m = buffer_for(buffers, name, w.shape());
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = static_cast<T>(spec.momentum * static_cast<double>(m[i]) + r * lr * g[i]);
            w[i] -= m[i];
        }
    }
}

template <class T>
void sgd_momentum_step(ParamStore<T>& params, const Gradients<T>& grads, double lr, double momentum,
                       double weight_decay, MomentumBuffers<T>& buffers) {
    for (auto& [name, w] : params.tensors) {
        const Tensor<T>* grad = grad_for(grads, name, w);
        if (!grad) continue;
        Tensor<T>& m = buffer_for(buffers, name, w.shape());
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = static_cast<T>(momentum * static_cast<double>(m[i]) + static_cast<double>((*grad)[i]) +
                                  weight_decay * static_cast<double>(w[i]));
            w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * static_cast<double>(m[i]));
        }
    }
}

template void lars_step(ParamStore<float>&, const Gradients<float>&, double, const OptimSpec&,
                        MomentumBuffers<float>&);
template void lars_step(ParamStore<double>&, const Gradients<double>&, double, const OptimSpec&,
                        MomentumBuffers<double>&);
template void sgd_momentum_step(ParamStore<float>&, const Gradients<float>&, double, double, double,
                                MomentumBuffers<float>&);
template void sgd_momentum_step(ParamStore<double>&, const Gradients<double>&, double, double, double,
                                MomentumBuffers<double>&);

}  // namespace dspnet
