#include "dspnet/slimnet.hpp"

#include <cmath>

namespace dspnet {

template <class T>
void ParamStore<T>::add(const std::string& name, Tensor<T> t, ParamKind kind) {
    if (tensors.count(name)) throw ContractError("duplicate parameter " + name);
    tensors.emplace(name, std::move(t));
    kinds.emplace(name, kind);
}

template <class T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("unknown parameter " + name);
    return it->second;
}

template <class T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("unknown parameter " + name);
    return it->second;
}

template <class T>
std::size_t ParamStore<T>::num_values() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
}

template <class T>
RunningStats<T>& ParamStore<T>::stats(const std::string& cfg_key, const std::string& layer, std::size_t channels) {
    auto& table = bn_stats[cfg_key];
    auto it = table.find(layer);
    if (it == table.end()) it = table.emplace(layer, RunningStats<T>(channels)).first;
    if (it->second.channels() != channels)
        throw DimensionError("running stats for " + layer + " under " + cfg_key + " have " +
                             std::to_string(it->second.channels()) + " channels, expected " +
                             std::to_string(channels));
    return it->second;
}

std::vector<ConvLayer> encoder_layers(const FamilySpec& family, const SwitchConfig& cfg) {
    require_valid(family, cfg);
    std::vector<ConvLayer> layers;
    std::size_t cin = family.stem_active(cfg);
    layers.push_back({"enc.stem.conv", "enc.stem.bn", family.in_channels, cin, family.stem_kernel, 1, false});
    for (std::size_t s = 0; s < family.stages.size(); ++s) {
        const auto& st = family.stages[s];
        const std::size_t ch = family.active_channels(cfg, s);
        for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
            const std::string base = "enc.s" + std::to_string(s) + ".b" + std::to_string(b);
            ConvLayer l{base + ".conv", base + ".bn", b == 0 ? cin : ch, ch, st.kernel, b == 0 ? st.stride : 1, b > 0};
            layers.push_back(l);
        }
        cin = ch;
    }
    return layers;
}

template <class T>
void init_encoder(ParamStore<T>& store, const FamilySpec& family, std::uint64_t seed) {
    require_valid(family);
    Engine rng = keyed_engine({seed, 0x656e63ULL});
    for (const auto& l : encoder_layers(family, family.full_config())) {
        Tensor<T> w(Shape{l.cout, l.cin, l.kernel, l.kernel});
        const double std = std::sqrt(2.0 / static_cast<double>(l.cin * l.kernel * l.kernel));
        for (auto& v : w.values()) v = static_cast<T>(std * normal(rng));
        store.add(l.conv, std::move(w), ParamKind::weight);
        store.add(l.bn + ".gamma", Tensor<T>(Shape{l.cout}, T(1)), ParamKind::bn);
        store.add(l.bn + ".beta", Tensor<T>(Shape{l.cout}, T(0)), ParamKind::bn);
    }
    for (const auto& cfg : family.dn_list)
        for (const auto& l : encoder_layers(family, cfg)) store.stats(cfg.key(), l.bn, l.cout);
}

template <class T>
std::map<std::string, ParamView<T>> slice_params(ParamStore<T>& store, const FamilySpec& family,
                                                 const SwitchConfig& cfg) {
    std::map<std::string, ParamView<T>> views;
    for (const auto& l : encoder_layers(family, cfg)) {
        auto& w = store.at(l.conv);
        views.emplace(l.conv, ParamView<T>::prefix(l.conv, w, Shape{l.cout, l.cin, l.kernel, l.kernel}));
        for (const char* suffix : {".gamma", ".beta"}) {
            const std::string name = l.bn + suffix;
            views.emplace(name, ParamView<T>::prefix(name, store.at(name), Shape{l.cout}));
        }
    }
    return views;
}

template <class T>
Var<T> forward_encoder(Tape<T>& tape, ParamStore<T>& store, const FamilySpec& family, const SwitchConfig& cfg,
                       Var<T> input, const ForwardOptions& opt) {
    const Shape& xs = input.shape();
    if (xs.size() != 4 || xs[1] != family.in_channels || xs[2] != family.image_size || xs[3] != family.image_size)
        throw DimensionError("encoder input " + shape_str(xs) + " does not match family stem (" +
                             std::to_string(family.in_channels) + " x " + std::to_string(family.image_size) + "^2)");
    const auto views = slice_params(store, family, cfg);
    auto leaf = [&](const std::string& name) {
        const auto& v = views.at(name);
        return opt.trainable ? tape.parameter(v) : tape.frozen(v);
    };
    const std::string key = cfg.key();
    const BnOptions bn = opt.bn();

    Var<T> h = input;
    for (const auto& l : encoder_layers(family, cfg)) {
        Var<T> in = avg_pool2d(h, l.pool);
        Var<T> y = conv2d(in, leaf(l.conv), 1, l.kernel / 2);
        RunningStats<T>* stats = nullptr;
        if (opt.mode == BnMode::eval || opt.update_stats) stats = &store.stats(key, l.bn, l.cout);
        y = batch_norm(y, leaf(l.bn + ".gamma"), leaf(l.bn + ".beta"), stats, bn);
        if (l.residual) y = add(y, in);
        h = relu(y);
    }
    return global_avg_pool(h);
}

template <class T>
ParamStore<T> extract_standalone(const ParamStore<T>& store, const FamilySpec& family, const SwitchConfig& cfg) {
    const FamilySpec alone = standalone_family(family, cfg);
    const std::string src_key = cfg.key();
    const std::string dst_key = alone.full_config().key();
    ParamStore<T> out;
    auto it = store.bn_stats.find(src_key);
    for (const auto& l : encoder_layers(family, cfg)) {
        out.add(l.conv, prefix_copy(store.at(l.conv), Shape{l.cout, l.cin, l.kernel, l.kernel}), ParamKind::weight);
        for (const char* suffix : {".gamma", ".beta"})
            out.add(l.bn + suffix, prefix_copy(store.at(l.bn + suffix), Shape{l.cout}), ParamKind::bn);
        RunningStats<T> st(l.cout);
        if (it != store.bn_stats.end()) {
            auto jt = it->second.find(l.bn);
            if (jt != it->second.end()) st = jt->second;
        }
        out.bn_stats[dst_key][l.bn] = st;
    }
    return out;
}

template struct ParamStore<float>;
template struct ParamStore<double>;
template void init_encoder(ParamStore<float>&, const FamilySpec&, std::uint64_t);
template void init_encoder(ParamStore<double>&, const FamilySpec&, std::uint64_t);
template std::map<std::string, ParamView<float>> slice_params(ParamStore<float>&, const FamilySpec&,
                                                              const SwitchConfig&);
template std::map<std::string, ParamView<double>> slice_params(ParamStore<double>&, const FamilySpec&,
                                                               const SwitchConfig&);
template Var<float> forward_encoder(Tape<float>&, ParamStore<float>&, const FamilySpec&, const SwitchConfig&,
                                    Var<float>, const ForwardOptions&);
template Var<double> forward_encoder(Tape<double>&, ParamStore<double>&, const FamilySpec&, const SwitchConfig&,
                                     Var<double>, const ForwardOptions&);
template ParamStore<float> extract_standalone(const ParamStore<float>&, const FamilySpec&, const SwitchConfig&);
template ParamStore<double> extract_standalone(const ParamStore<double>&, const FamilySpec&, const SwitchConfig&);

}  // namespace dspnet
