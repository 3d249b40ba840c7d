#include <gtest/gtest.h>

#include <cmath>

#include "dspnet/ssl.hpp"
#include "support.hpp"

using namespace dspnet;
using dspnet::test::finite_difference;
using dspnet::test::five_dn_family;
using dspnet::test::random_tensor;
using dspnet::test::relative_error;
using dspnet::test::width_family;

namespace {

HeadSpec small_head() { return HeadSpec{8, 4}; }

template <class T>
double pair_loss(const Tensor<T>& p, const Tensor<T>& z) {
    Tape<T> t;
    return double(byol_pair_loss(t.constant(p), z).value()[0]);
}

template <class T>
Tensor<T>& param(BranchState<T>& s, const std::string& name) {
    return s.online.contains(name) ? s.online.at(name) : s.predictor.at(name);
}

template <class T>
double global_rel(const Gradients<T>& a, const Gradients<T>& b) {
    double diff = 0, norm = 0;
    for (const auto& [name, ga] : a) {
        const auto& gb = b.at(name);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            diff += (double(ga[i]) - double(gb[i])) * (double(ga[i]) - double(gb[i]));
            norm += double(gb[i]) * double(gb[i]);
        }
    }
    return std::sqrt(diff) / std::sqrt(norm);
}

}  // namespace

TEST(ByolLoss, IdentityOrthogonalAntiparallel) {
    const auto z = Tensor<double>(Shape{2, 2}, std::vector<double>{1, 0, 0, 3});
    EXPECT_NEAR(pair_loss(z, z), 0.0, 1e-6);
    EXPECT_NEAR(pair_loss(Tensor<double>(Shape{2, 2}, std::vector<double>{0, 2, -1, 0}), z), 2.0, 1e-6);
    EXPECT_NEAR(pair_loss(Tensor<double>(Shape{2, 2}, std::vector<double>{-5, 0, 0, -1}), z), 4.0, 1e-6);
}

TEST(ByolLoss, ScaleInvariantAndBounded) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto p = random_tensor<double>({6, 5}, s), z = random_tensor<double>({6, 5}, s + 1000);
        const double l = pair_loss(p, z);
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, 4.0);
        Tensor<double> p3 = p;
        for (auto& v : p3.values()) v *= 3.0;
        EXPECT_NEAR(pair_loss(p3, z), l, 1e-12);
    }
}

TEST(ByolLoss, GradientMatchesFiniteDifferences) {
    auto p = random_tensor<double>({4, 3}, 7);
    const auto z = random_tensor<double>({4, 3}, 8);
    Tape<double> t;
    const auto g = t.backward(byol_pair_loss(t.variable("p", p), z)).at("p");
    EXPECT_LT(relative_error(g, finite_difference([&] { return pair_loss(p, z); }, p)), 1e-6);
}

TEST(Projection, ShapesForEveryDnWidth) {
    const FamilySpec f = five_dn_family();
    auto s = init_branch_state<float>(f, small_head(), 1);
    for (const auto& dn : f.dn_list) {
        Tape<float> t;
        const std::size_t d = f.rep_dim(dn);
        auto y = project(t, s.online, f, t.constant(random_tensor<float>({3, d}, d)), Branch::online, dn.key(),
                         ForwardOptions{});
        EXPECT_EQ(y.shape(), (Shape{3, 4}));
    }
    Tape<float> t;
    EXPECT_ANY_THROW(project(t, s.target, f, t.constant(random_tensor<float>({3, 6}, 2)), Branch::target, "x",
                             ForwardOptions{}));
}

TEST(Projection, FreshTargetMatchesOnlineAtFullWidth) {
    const FamilySpec f = five_dn_family();
    auto s = init_branch_state<double>(f, small_head(), 3);
    const auto y = random_tensor<double>({5, f.rep_dim()}, 4);
    const std::string key = f.full_config().key();
    ForwardOptions opt;
    opt.update_stats = false;
    Tape<double> t;
    auto a = project(t, s.online, f, t.constant(y), Branch::online, key, opt);
    auto b = project(t, s.target, f, t.constant(y), Branch::target, key, opt);
    EXPECT_EQ(a.value(), b.value());
}

TEST(StepLoss, RepeatedConfigAddsIdenticalTerms) {
    const FamilySpec f = five_dn_family();
    auto s = init_branch_state<double>(f, small_head(), 5);
    const auto v = random_tensor<double>({4, 2, 8, 8}, 6, 0, 1), vp = random_tensor<double>({4, 2, 8, 8}, 7, 0, 1);
    const auto one = dspnet_step_loss(s, v, vp, {f.dn_list[2]});
    const auto three = dspnet_step_loss(s, v, vp, {f.dn_list[2], f.dn_list[2], f.dn_list[2]});
    ASSERT_EQ(three.forward_terms.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(three.forward_terms[i], one.forward_terms[0]);
        EXPECT_EQ(three.symmetric_terms[i], one.symmetric_terms[0]);
    }
    EXPECT_NEAR(three.total, 3 * one.total, 1e-12);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_GE(three.forward_terms[i], 0.0);
        EXPECT_LE(three.forward_terms[i], 4.0);
    }
}

TEST(StepLoss, SharedTargetsGiveBitwiseIdenticalTotal) {
    const FamilySpec f = five_dn_family();
    const auto init = init_branch_state<float>(f, small_head(), 9);
    const auto v = random_tensor<float>({6, 2, 8, 8}, 10, 0, 1), vp = random_tensor<float>({6, 2, 8, 8}, 11, 0, 1);
    auto a = init, b = init;
    const auto la = dspnet_step_loss(a, v, vp, f.dn_list, TargetSharing::shared);
    const auto lb = dspnet_step_loss(b, v, vp, f.dn_list, TargetSharing::per_config);
    EXPECT_EQ(la.total, lb.total);
    EXPECT_EQ(la.forward_terms, lb.forward_terms);
}

TEST(Accumulation, SingleConfigEqualsDirectBackward) {
    const FamilySpec f = five_dn_family();
    const auto init = init_branch_state<double>(f, small_head(), 12);
    const auto v = random_tensor<double>({4, 2, 8, 8}, 13, 0, 1), vp = random_tensor<double>({4, 2, 8, 8}, 14, 0, 1);
    auto a = init, b = init;
    Gradients<double> acc, joint;
    accumulate_gradients(a, v, vp, {f.dn_list[1]}, acc);
    dspnet_step_loss(b, v, vp, {f.dn_list[1]}, TargetSharing::shared, &joint);
    EXPECT_EQ(acc, joint);
}

TEST(Accumulation, MatchesJointTapeForTwoToFourConfigs) {
    const FamilySpec f = five_dn_family();
    const auto init = init_branch_state<float>(f, small_head(), 15);
    const auto v = random_tensor<float>({8, 2, 8, 8}, 16, 0, 1), vp = random_tensor<float>({8, 2, 8, 8}, 17, 0, 1);
    for (std::size_t n = 2; n <= 4; ++n) {
        Engine g = keyed_engine({n});
        const auto cfgs = sample_subnetworks(f, n, g);
        auto a = init, b = init;
        Gradients<float> acc, joint;
        const auto la = accumulate_gradients(a, v, vp, cfgs, acc);
        const auto lb = dspnet_step_loss(b, v, vp, cfgs, TargetSharing::shared, &joint);
        EXPECT_NEAR(la.total, lb.total, 1e-6 * std::fabs(lb.total));
        EXPECT_LE(global_rel(acc, joint), 1e-6) << "n=" << n;
    }
}

TEST(Accumulation, SmallestTermLeavesWiderChannelsUntouched) {
    const FamilySpec f = five_dn_family();
    auto s = init_branch_state<double>(f, small_head(), 18);
    const auto v = random_tensor<double>({4, 2, 8, 8}, 19, 0, 1), vp = random_tensor<double>({4, 2, 8, 8}, 20, 0, 1);
    const auto& small = f.dn_list[f.smallest_index()];
    Gradients<double> g;
    accumulate_gradients(s, v, vp, {small}, g);
    const auto views = slice_params(s.online, f, small);
    for (const auto& [name, grad] : g) {
        if (name.rfind(kEncoderPrefix, 0) != 0) continue;
        Tensor<double> copy = grad;
        const auto it = views.find(name);
        ASSERT_NE(it, views.end()) << name;
        const Tensor<double> kept = ParamView<double>::prefix(name, copy, it->second.shape).to_tensor();
        double inside = 0;
        for (double x : kept.values()) inside += std::fabs(x);
        double total = 0;
        for (double x : grad.values()) total += std::fabs(x);
        EXPECT_EQ(total, inside) << name;
    }
}

TEST(Accumulation, GradientMatchesFiniteDifferences) {
    const FamilySpec f = width_family({0.5, 1.0});
    auto s = init_branch_state<double>(f, small_head(), 21);
    const auto v = random_tensor<double>({4, 1, 8, 8}, 22, 0, 1), vp = random_tensor<double>({4, 1, 8, 8}, 23, 0, 1);
    for (const auto& cfg : f.dn_list) {
        Gradients<double> g;
        accumulate_gradients(s, v, vp, {cfg}, g);
        for (auto& [name, grad] : g) {
            auto loss = [&] { return dspnet_step_loss(s, v, vp, {cfg}).total; };
            // biases feeding a BN have zero true gradient; the floor keeps FD noise from dominating
            EXPECT_LT(relative_error(grad, finite_difference(loss, param(s, name), 1e-5), 1e-5), 1e-4) << name;
        }
    }
}

TEST(Ema, FixedPointCopyAndScalar) {
    const FamilySpec f = width_family({0.5, 1.0});
    auto s = init_branch_state<float>(f, small_head(), 24);
    for (auto& [name, t] : s.online.tensors) t = random_tensor<float>(t.shape(), name.size());
    const auto target0 = s.target;
    auto keep = s.target;
    ema_update(keep, s.online, f, 1.0);
    EXPECT_EQ(keep.tensors, target0.tensors);
    auto copy = s.target;
    ema_update(copy, s.online, f, 0.0);
    for (const auto& [name, t] : copy.tensors) EXPECT_EQ(t, s.online.at(name)) << name;

    ParamStore<float> xi, theta;
    xi.add("w", Tensor<float>(Shape{1}, 1.0f), ParamKind::weight);
    theta.add("w", Tensor<float>(Shape{1}, 0.0f), ParamKind::weight);
    ema_update(xi, theta, f, 0.996);
    EXPECT_FLOAT_EQ(xi.at("w")[0], 0.996f);
}

TEST(Ema, TargetStatsFollowOnlineFullStats) {
    const FamilySpec f = width_family({0.5, 1.0});
    auto s = init_branch_state<float>(f, small_head(), 25);
    const std::string full = f.full_config().key();
    for (auto& [layer, st] : s.online.bn_stats.at(full)) st.mean.fill(2.0f);
    ema_update(s.target, s.online, f, 0.5);
    for (const auto& [layer, st] : s.target.bn_stats.at(full))
        if (s.online.bn_stats.at(full).count(layer)) {
            for (float m : st.mean.values()) EXPECT_FLOAT_EQ(m, 1.0f) << layer;
        }
}

TEST(Ema, ShapeMismatchIsRejected) {
    const FamilySpec f = width_family({0.5, 1.0});
    ParamStore<float> xi, theta;
    xi.add("w", Tensor<float>(Shape{2}), ParamKind::weight);
    theta.add("w", Tensor<float>(Shape{3}), ParamKind::weight);
    EXPECT_THROW(ema_update(xi, theta, f, 0.9), ContractError);
}

TEST(TauSchedule, EndpointsMidpointAndMonotone) {
    EXPECT_DOUBLE_EQ(tau_schedule(0, 300, 0.996), 0.996);
    EXPECT_EQ(tau_schedule(300, 300, 0.996), 1.0);
    EXPECT_NEAR(tau_schedule(150, 300, 0.996), 0.998, 1e-12);
    double prev = 0;
    for (std::uint64_t k = 0; k <= 300; ++k) {
        const double t = tau_schedule(k, 300, 0.996);
        EXPECT_GE(t, prev);
        prev = t;
    }
    EXPECT_THROW(tau_schedule(301, 300, 0.996), ContractError);
}
