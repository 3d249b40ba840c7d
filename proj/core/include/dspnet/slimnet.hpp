#pragma once

#include <map>
#include <string>
#include <vector>

#include "dspnet/family.hpp"
#include "dspnet/ops.hpp"

namespace dspnet {

/// How an optimizer treats a tensor: `weight` tensors get weight decay and
/// trust-ratio adaptation, `bias` and `bn` tensors may be excluded.
enum class ParamKind { weight, bias, bn };

/// Named full-size tensors plus BN running statistics keyed by
/// SwitchConfig::key(), then by BN layer name.
template <class T>
struct ParamStore {
    std::map<std::string, Tensor<T>> tensors;
    std::map<std::string, ParamKind> kinds;
    std::map<std::string, std::map<std::string, RunningStats<T>>> bn_stats;

    void add(const std::string& name, Tensor<T> t, ParamKind kind);
    Tensor<T>& at(const std::string& name);
    const Tensor<T>& at(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors.count(name) != 0; }
    std::size_t num_values() const;

    /// Running statistics for (cfg key, layer); created with `channels`
    /// entries (mean 0, var 1) on first use.
    RunningStats<T>& stats(const std::string& cfg_key, const std::string& layer, std::size_t channels);

    friend bool operator==(const ParamStore&, const ParamStore&) = default;
};

/// Name prefix of every encoder tensor.
inline constexpr const char* kEncoderPrefix = "enc.";

struct ConvLayer {
    std::string conv;  // weight tensor name
    std::string bn;    // BN layer name; affine tensors are bn + ".gamma"/".beta"
    std::size_t cin = 0;
    std::size_t cout = 0;
    std::size_t kernel = 0;
    std::size_t pool = 1;  // avg-pool window applied to the block input
    bool residual = false;
};

/// Layer list of the sub-network selected by cfg, in execution order, with
/// active extents.
std::vector<ConvLayer> encoder_layers(const FamilySpec& family, const SwitchConfig& cfg);

/// Adds encoder tensors at full size: He-normal conv weights, unit gamma,
/// zero beta, and running stats for every DN.
template <class T>
void init_encoder(ParamStore<T>& store, const FamilySpec& family, std::uint64_t seed);

/// Prefix views of every encoder tensor the sub-network uses. Views alias
/// the store.
template <class T>
std::map<std::string, ParamView<T>> slice_params(ParamStore<T>& store, const FamilySpec& family,
                                                 const SwitchConfig& cfg);

struct ForwardOptions {
    BnMode mode = BnMode::train;
    bool update_stats = true;  // train mode only
    bool trainable = true;     // record parameters as differentiable leaves
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    BnOptions bn() const { return {mode, bn_momentum, bn_eps}; }
};

/// Encoder forward for one switch: [N x C x H x W] -> [N x rep_dim(cfg)].
/// BN uses (and in train mode updates) the statistics keyed by cfg.
template <class T>
Var<T> forward_encoder(Tape<T>& tape, ParamStore<T>& store, const FamilySpec& family, const SwitchConfig& cfg,
                       Var<T> input, const ForwardOptions& opt);

/// Deep copy of the cfg slice as an independent network: encoder tensors and
/// the cfg's BN statistics, re-keyed for standalone_family(family, cfg).
template <class T>
ParamStore<T> extract_standalone(const ParamStore<T>& store, const FamilySpec& family, const SwitchConfig& cfg);

}  // namespace dspnet
