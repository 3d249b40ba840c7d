#pragma once

#include "dspnet/slimnet.hpp"
#include "support.hpp"

namespace dspnet::test {

/// Standalone store assembled entry by entry from the full tensors, without
/// going through the library's slicing helpers.
template <class T>
ParamStore<T> copy_standalone(const ParamStore<T>& full, const FamilySpec& family, const SwitchConfig& cfg) {
    const FamilySpec alone = standalone_family(family, cfg);
    ParamStore<T> out;
    for (const auto& l : encoder_layers(alone, alone.full_config())) {
        const Tensor<T>& w = full.at(l.conv);
        const std::size_t fc = w.dim(1), k = l.kernel;
        Tensor<T> cw(Shape{l.cout, l.cin, k, k});
        for (std::size_t o = 0; o < l.cout; ++o)
            for (std::size_t i = 0; i < l.cin; ++i)
                for (std::size_t p = 0; p < k * k; ++p) cw[(o * l.cin + i) * k * k + p] = w[(o * fc + i) * k * k + p];
        out.add(l.conv, cw, ParamKind::weight);
        for (const char* suffix : {".gamma", ".beta"}) {
            const Tensor<T>& v = full.at(l.bn + suffix);
            out.add(l.bn + suffix, Tensor<T>(Shape{l.cout}, std::vector<T>(v.data(), v.data() + l.cout)), ParamKind::bn);
        }
        const RunningStats<T>& st = full.bn_stats.at(cfg.key()).at(l.bn);
        RunningStats<T> cs(l.cout);
        for (std::size_t c = 0; c < l.cout; ++c) cs.mean[c] = st.mean[c], cs.var[c] = st.var[c];
        out.bn_stats[alone.full_config().key()][l.bn] = cs;
    }
    return out;
}

template <class T>
void randomize(ParamStore<T>& store, std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& [name, t] : store.tensors)
        if (store.kinds.at(name) == ParamKind::bn) t = random_tensor<T>(t.shape(), ++s, 0.5, 1.5);
    for (auto& [key, layers] : store.bn_stats)
        for (auto& [layer, st] : layers) {
            st.mean = random_tensor<T>(st.mean.shape(), ++s, -0.3, 0.3);
            st.var = random_tensor<T>(st.var.shape(), ++s, 0.5, 2.0);
        }
}

template <class T>
Tensor<T> run_encoder(ParamStore<T>& store, const FamilySpec& f, const SwitchConfig& cfg, const Tensor<T>& x, BnMode mode) {
    Tape<T> tape;
    ForwardOptions opt;
    opt.mode = mode;
    opt.update_stats = false;
    opt.trainable = false;
    return forward_encoder(tape, store, f, cfg, tape.constant(x), opt).value();
}

}  // namespace dspnet::test
