#include "dspnet/ssl.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace dspnet {

template <class T>
void init_mlp_head(ParamStore<T>& store, const std::string& prefix, std::size_t in_dim, std::size_t hidden,
                   std::size_t out_dim, std::uint64_t seed) {
    Engine rng = keyed_engine({seed, 0x68656164ULL, fnv1a(prefix)});
    auto uniform_tensor = [&rng](Shape shape, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Tensor<T> t(std::move(shape));
        for (auto& v : t.values()) v = static_cast<T>(uniform(rng, -bound, bound));
        return t;
    };
    store.add(prefix + ".fc1.w", uniform_tensor(Shape{hidden, in_dim}, in_dim), ParamKind::weight);
    store.add(prefix + ".fc1.b", uniform_tensor(Shape{hidden}, in_dim), ParamKind::bias);
    store.add(prefix + ".bn.gamma", Tensor<T>(Shape{hidden}, T(1)), ParamKind::bn);
    store.add(prefix + ".bn.beta", Tensor<T>(Shape{hidden}, T(0)), ParamKind::bn);
    store.add(prefix + ".fc2.w", uniform_tensor(Shape{out_dim, hidden}, hidden), ParamKind::weight);
    store.add(prefix + ".fc2.b", uniform_tensor(Shape{out_dim}, hidden), ParamKind::bias);
}

template <class T>
Var<T> mlp_head(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, Var<T> x,
                const std::string& stats_key, const ForwardOptions& opt) {
    const Shape& xs = x.shape();
    if (xs.size() != 2) throw DimensionError(prefix + ": head input must be N x d, got " + shape_str(xs));
    auto& w1 = store.at(prefix + ".fc1.w");
    const std::size_t hidden = w1.dim(0);
    if (xs[1] > w1.dim(1))
        throw ContractError(prefix + ": input width " + std::to_string(xs[1]) + " exceeds full width " +
                            std::to_string(w1.dim(1)));
    auto leaf = [&](const std::string& name, const Shape& extents) {
        const auto view = ParamView<T>::prefix(name, store.at(name), extents);
        return opt.trainable ? tape.parameter(view) : tape.frozen(view);
    };
    auto whole = [&](const std::string& name) { return leaf(name, store.at(name).shape()); };

    Var<T> h = linear(x, leaf(prefix + ".fc1.w", Shape{hidden, xs[1]}), whole(prefix + ".fc1.b"));
    RunningStats<T>* stats = nullptr;
    if (opt.mode == BnMode::eval || opt.update_stats) stats = &store.stats(stats_key, prefix + ".bn", hidden);
    h = batch_norm(h, whole(prefix + ".bn.gamma"), whole(prefix + ".bn.beta"), stats, opt.bn());
    h = relu(h);
    return linear(h, whole(prefix + ".fc2.w"), whole(prefix + ".fc2.b"));
}

template <class T>
Var<T> project(Tape<T>& tape, ParamStore<T>& store, const FamilySpec& family, Var<T> y, Branch branch,
               const std::string& stats_key, const ForwardOptions& opt) {
    const Shape& ys = y.shape();
    if (ys.size() != 2) throw DimensionError("project: representation must be N x d");
    if (ys[1] > family.rep_dim())
        throw ContractError("project: width " + std::to_string(ys[1]) + " exceeds full width " +
                            std::to_string(family.rep_dim()));
    if (branch == Branch::target && ys[1] != family.rep_dim())
        throw ContractError("project: the target projector only accepts the full width");
    return mlp_head(tape, store, "proj", y, stats_key, opt);
}

template <class T>
BranchState<T> init_branch_state(const FamilySpec& family, const HeadSpec& head, std::uint64_t seed) {
    require_valid(family);
    if (head.proj_dim < 2 || head.hidden_dim < head.proj_dim)
        throw ConfigError("head dims must satisfy hidden_dim >= proj_dim >= 2");
    BranchState<T> s;
    s.family = family;
    s.head = head;
    init_encoder(s.online, family, seed);
    init_mlp_head(s.online, "proj", family.rep_dim(), head.hidden_dim, head.proj_dim, seed);
    init_mlp_head(s.predictor, "pred", head.proj_dim, head.hidden_dim, head.proj_dim, seed);
    for (const auto& cfg : family.dn_list) {
        s.online.stats(cfg.key(), "proj.bn", head.hidden_dim);
        s.predictor.stats(cfg.key(), "pred.bn", head.hidden_dim);
    }
    const std::string full = family.full_config().key();
    s.target.tensors = s.online.tensors;
    s.target.kinds = s.online.kinds;
    s.target.bn_stats[full] = s.online.bn_stats.at(full);
    return s;
}

template <class T>
Var<T> byol_pair_loss(Var<T> p, const Tensor<T>& z_target) {
    if (p.shape() != z_target.shape())
        throw DimensionError("byol_pair_loss: shape mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(z_target.shape()));
    if (p.shape().size() != 2 || p.shape()[1] < 1) throw ContractError("byol_pair_loss: embeddings must be N x k");
    Tape<T>& tape = *p.tape;
    Var<T> pn = l2_normalize(p);
    Var<T> zn = l2_normalize(tape.constant(z_target));
    Var<T> d = sub(pn, zn);
    return scale(sum(mul(d, d)), T(1) / static_cast<T>(p.shape()[0]));
}

template <class T>
TargetProjections<T> target_projections(BranchState<T>& state, const Tensor<T>& v, const Tensor<T>& v_prime) {
    const SwitchConfig full = state.family.full_config();
    const std::string key = full.key();
    ForwardOptions opt;
    opt.trainable = false;
    opt.update_stats = false;
    auto run = [&](const Tensor<T>& x) {
        Tape<T> tape;
        Var<T> y = forward_encoder(tape, state.target, state.family, full, tape.constant(x), opt);
        return project(tape, state.target, state.family, y, Branch::target, key, opt).value();
    };
    return {run(v), run(v_prime)};
}

namespace {

template <class T>
struct ConfigTerms {
    Var<T> total;
    double forward = 0;
    double symmetric = 0;
};

template <class T>
ConfigTerms<T> config_loss(Tape<T>& tape, BranchState<T>& s, const SwitchConfig& cfg, const Tensor<T>& v,
                           const Tensor<T>& v_prime, const TargetProjections<T>& targets) {
    const ForwardOptions opt;
    const std::string key = cfg.key();
    auto predict = [&](const Tensor<T>& x) {
        Var<T> y = forward_encoder(tape, s.online, s.family, cfg, tape.constant(x), opt);
        Var<T> z = project(tape, s.online, s.family, y, Branch::online, key, opt);
        return mlp_head(tape, s.predictor, "pred", z, key, opt);
    };
    Var<T> a = byol_pair_loss(predict(v), targets.z_prime);
    Var<T> b = byol_pair_loss(predict(v_prime), targets.z);
    return {add(a, b), static_cast<double>(a.value()[0]), static_cast<double>(b.value()[0])};
}

}  // namespace

template <class T>
StepLoss dspnet_step_loss(BranchState<T>& state, const Tensor<T>& v, const Tensor<T>& v_prime,
                          const std::vector<SwitchConfig>& cfgs, TargetSharing sharing, Gradients<T>* joint_grads) {
    if (cfgs.empty()) throw ContractError("dspnet_step_loss: no sub-networks sampled");
    StepLoss out;
    Tape<T> tape;
    Var<T> total;
    std::optional<TargetProjections<T>> shared;
    if (sharing == TargetSharing::shared) shared = target_projections(state, v, v_prime);
    for (const auto& cfg : cfgs) {
        const auto targets = shared ? *shared : target_projections(state, v, v_prime);
        auto terms = config_loss(tape, state, cfg, v, v_prime, targets);
        total = total.valid() ? add(total, terms.total) : terms.total;
        out.forward_terms.push_back(terms.forward);
        out.symmetric_terms.push_back(terms.symmetric);
    }
    out.total = static_cast<double>(total.value()[0]);
    if (joint_grads) tape.backward(total, *joint_grads);
    return out;
}

template <class T>
StepLoss accumulate_gradients(BranchState<T>& state, const Tensor<T>& v, const Tensor<T>& v_prime,
                              const std::vector<SwitchConfig>& cfgs, Gradients<T>& grads) {
    if (cfgs.empty()) throw ContractError("accumulate_gradients: no sub-networks sampled");
    StepLoss out;
    const auto targets = target_projections(state, v, v_prime);
    T total = 0;
    for (const auto& cfg : cfgs) {
        Tape<T> tape;
        auto terms = config_loss(tape, state, cfg, v, v_prime, targets);
        tape.backward(terms.total, grads);
        total += terms.total.value()[0];
        out.forward_terms.push_back(terms.forward);
        out.symmetric_terms.push_back(terms.symmetric);
    }
    out.total = static_cast<double>(total);
    return out;
}

template <class T>
void ema_update(ParamStore<T>& target, const ParamStore<T>& online, const FamilySpec& family, double tau) {
    const T keep = static_cast<T>(tau);
    const T mix = static_cast<T>(1.0 - tau);
    auto blend = [&](Tensor<T>& xi, const Tensor<T>& theta, const std::string& what) {
        if (xi.shape() != theta.shape())
            throw ContractError("ema_update: " + what + " has shape " + shape_str(xi.shape()) + " online vs " +
                                shape_str(theta.shape()));
        for (std::size_t i = 0; i < xi.size(); ++i) xi[i] = keep * xi[i] + mix * theta[i];
    };
    for (auto& [name, xi] : target.tensors) {
        auto it = online.tensors.find(name);
        if (it == online.tensors.end()) throw ContractError("ema_update: online store lacks " + name);
        blend(xi, it->second, name);
    }
    const std::string full = family.full_config().key();
    auto src = online.bn_stats.find(full);
    if (src == online.bn_stats.end()) return;
    for (auto& [layer, st] : target.bn_stats[full]) {
        auto jt = src->second.find(layer);
        if (jt == src->second.end()) continue;
        blend(st.mean, jt->second.mean, layer + ".mean");
        blend(st.var, jt->second.var, layer + ".var");
    }
}

double tau_schedule(std::uint64_t step, std::uint64_t total_steps, double tau_base) {
    if (total_steps == 0) return tau_base;
    if (step > total_steps) throw ContractError("tau_schedule: step beyond total");
    const double c = (std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)) + 1.0) / 2.0;
    return 1.0 - (1.0 - tau_base) * c;
}

#define DSPNET_INSTANTIATE_SSL(T)                                                                                 \
    template void init_mlp_head(ParamStore<T>&, const std::string&, std::size_t, std::size_t, std::size_t,        \
                                std::uint64_t);                                                                    \
    template Var<T> mlp_head(Tape<T>&, ParamStore<T>&, const std::string&, Var<T>, const std::string&,            \
                             const ForwardOptions&);                                                               \
    template Var<T> project(Tape<T>&, ParamStore<T>&, const FamilySpec&, Var<T>, Branch, const std::string&,      \
                            const ForwardOptions&);                                                                \
    template struct BranchState<T>;                                                                               \
    template BranchState<T> init_branch_state(const FamilySpec&, const HeadSpec&, std::uint64_t);                 \
    template Var<T> byol_pair_loss(Var<T>, const Tensor<T>&);                                                     \
    template TargetProjections<T> target_projections(BranchState<T>&, const Tensor<T>&, const Tensor<T>&);        \
    template StepLoss dspnet_step_loss(BranchState<T>&, const Tensor<T>&, const Tensor<T>&,                       \
                                       const std::vector<SwitchConfig>&, TargetSharing, Gradients<T>*);           \
    template StepLoss accumulate_gradients(BranchState<T>&, const Tensor<T>&, const Tensor<T>&,                   \
                                           const std::vector<SwitchConfig>&, Gradients<T>&);                      \
    template void ema_update(ParamStore<T>&, const ParamStore<T>&, const FamilySpec&, double);

DSPNET_INSTANTIATE_SSL(float)
DSPNET_INSTANTIATE_SSL(double)

}  // namespace dspnet
