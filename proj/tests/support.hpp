#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dspnet/family.hpp"
#include "dspnet/rng.hpp"
#include "dspnet/tensor.hpp"

namespace dspnet::test {

template <class T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    Engine g = keyed_engine({seed, 0x7465737475ULL});
    for (auto& v : t.values()) v = static_cast<T>(uniform(g, lo, hi));
    return t;
}

/// Central differences of f with respect to every entry of x.
inline Tensor<double> finite_difference(const std::function<double()>& f, Tensor<double>& x, double h = 1e-6) {
    Tensor<double> g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

/// ||a - b|| / max(||a||, ||b||, floor)
template <class T>
double relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-12) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (double(a[i]) - double(b[i])) * (double(a[i]) - double(b[i]));
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline StageSpec stage(std::size_t channels, std::size_t blocks, std::size_t stride, std::size_t kernel = 3) {
    StageSpec s;
    s.channels = channels;
    s.blocks = blocks;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

inline SwitchConfig sw(std::vector<double> widths, std::vector<std::size_t> blocks) {
    return SwitchConfig{std::move(widths), std::move(blocks)};
}

/// Two-stage family with uniform-width DNs at the given multipliers, full depth.
inline FamilySpec width_family(std::vector<double> widths, std::size_t image = 8, std::size_t stem = 4,
                               std::size_t c1 = 8, std::size_t c2 = 8) {
    FamilySpec f;
    f.in_channels = 1;
    f.image_size = image;
    f.stem_channels = stem;
    f.stem_kernel = 3;
    f.stages = {stage(c1, 1, 1), stage(c2, 2, 2)};
    for (double w : widths) f.dn_list.push_back(sw({w, w}, {1, 2}));
    return f;
}

/// Five DNs varying width and depth.
inline FamilySpec five_dn_family() {
    FamilySpec f;
    f.in_channels = 2;
    f.image_size = 8;
    f.stem_channels = 4;
    f.stem_kernel = 3;
    f.stages = {stage(8, 2, 1), stage(12, 2, 2)};
    f.dn_list = {sw({0.5, 0.5}, {1, 1}), sw({0.5, 0.75}, {2, 1}), sw({0.75, 0.75}, {1, 2}), sw({1.0, 0.5}, {2, 2}),
                 sw({1.0, 1.0}, {2, 2})};
    return f;
}

}  // namespace dspnet::test
