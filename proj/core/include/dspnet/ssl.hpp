#pragma once

#include <vector>

#include "dspnet/slimnet.hpp"

namespace dspnet {

struct HeadSpec {
    std::size_t hidden_dim = 256;
    std::size_t proj_dim = 64;

    friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

/// Adds an MLP head `prefix`.fc1 (in_dim -> hidden) -> `prefix`.bn -> relu ->
/// `prefix`.fc2 (hidden -> out_dim) to the store.
template <class T>
void init_mlp_head(ParamStore<T>& store, const std::string& prefix, std::size_t in_dim, std::size_t hidden,
                   std::size_t out_dim, std::uint64_t seed);

/// MLP head forward. fc1 is input-sliced to the width of `x` (prefix
/// columns). BN statistics are keyed by `stats_key`.
template <class T>
Var<T> mlp_head(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, Var<T> x,
                const std::string& stats_key, const ForwardOptions& opt);

enum class Branch { online, target };

/// Projection g(y). The online projector accepts any DN width d; the target
/// projector requires the full width.
template <class T>
Var<T> project(Tape<T>& tape, ParamStore<T>& store, const FamilySpec& family, Var<T> y, Branch branch,
               const std::string& stats_key, const ForwardOptions& opt);

/// Online weights (encoder + projector), predictor and the EMA target.
template <class T>
struct BranchState {
    FamilySpec family;
    HeadSpec head;
    ParamStore<T> online;
    ParamStore<T> predictor;
    ParamStore<T> target;
    double tau = 0.996;
    std::uint64_t step = 0;

    friend bool operator==(const BranchState&, const BranchState&) = default;
};

/// Fresh state: online encoder + projector + predictor from `seed`, target a
/// copy of the online full network.
template <class T>
BranchState<T> init_branch_state(const FamilySpec& family, const HeadSpec& head, std::uint64_t seed);

/// Mean over rows of || p/|p| - z/|z| ||^2 = mean(2 - 2 cos(p, z)).
/// `z_target` is a detached constant.
template <class T>
Var<T> byol_pair_loss(Var<T> p, const Tensor<T>& z_target);

/// Target projections for both views, computed once per iteration.
template <class T>
struct TargetProjections {
    Tensor<T> z;        // from v
    Tensor<T> z_prime;  // from v'
};

template <class T>
TargetProjections<T> target_projections(BranchState<T>& state, const Tensor<T>& v, const Tensor<T>& v_prime);

struct StepLoss {
    double total = 0;
    std::vector<double> forward_terms;    // per cfg: q(g(f(v))) vs z'
    std::vector<double> symmetric_terms;  // per cfg: q(g(f(v'))) vs z
};

enum class TargetSharing { shared, per_config };

/// Symmetrized loss summed over `cfgs`, built on one tape. When `joint_grads`
/// is non-null the gradient of the total is added into it.
template <class T>
StepLoss dspnet_step_loss(BranchState<T>& state, const Tensor<T>& v, const Tensor<T>& v_prime,
                          const std::vector<SwitchConfig>& cfgs, TargetSharing sharing = TargetSharing::shared,
                          Gradients<T>* joint_grads = nullptr);

/// Same objective, one tape per cfg: each cfg's gradient is added into
/// `grads` before the next cfg's tape is built.
template <class T>
StepLoss accumulate_gradients(BranchState<T>& state, const Tensor<T>& v, const Tensor<T>& v_prime,
                              const std::vector<SwitchConfig>& cfgs, Gradients<T>& grads);

/// xi <- tau xi + (1 - tau) theta for every target tensor, and the target BN
/// statistics from the online full-config statistics.
template <class T>
void ema_update(ParamStore<T>& target, const ParamStore<T>& online, const FamilySpec& family, double tau);

/// 1 - (1 - tau_base) (cos(pi step / total) + 1) / 2
double tau_schedule(std::uint64_t step, std::uint64_t total_steps, double tau_base);

}  // namespace dspnet
