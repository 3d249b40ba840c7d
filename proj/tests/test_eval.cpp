#include <gtest/gtest.h>

#include <cmath>

#include "dspnet/config.hpp"
#include "dspnet/eval.hpp"
#include "dspnet/slimnet.hpp"
#include "support.hpp"

using namespace dspnet;
using namespace dspnet::test;

namespace {

Tensor<float> rows(std::initializer_list<std::initializer_list<float>> r) {
    const std::size_t d = r.begin()->size();
    Tensor<float> t({r.size(), d});
    std::size_t i = 0;
    for (const auto& row : r)
        for (float v : row) t[i++] = v;
    return t;
}

LabeledDataset easy_data(std::size_t per_class, std::uint64_t seed) {
    SynthSpec s;
    s.per_class = per_class;
    s.size = 8;
    s.noise = 0.02;
    s.nuisance = 0.2;
    s.seed = seed;
    return synth_shapes(s);
}

ParamStore<float> random_encoder(const FamilySpec& f) {
    ParamStore<float> store;
    init_encoder(store, f, 3);
    return store;
}

}  // namespace

TEST(Knn, NearestNeighbourHandExample) {
    const auto train = rows({{1, 0}, {0.9f, 0.1f}, {0, 1}});
    const std::vector<int> train_labels{0, 0, 1};
    const auto test = rows({{1, 0.05f}, {0.1f, 1}, {0, 3}});
    EXPECT_DOUBLE_EQ(knn_classify(train, train_labels, test, std::vector<int>{0, 1, 1}, 1, 2), 1.0);
    EXPECT_DOUBLE_EQ(knn_classify(train, train_labels, test, std::vector<int>{1, 1, 0}, 1, 2), 1.0 / 3.0);
    // K = 3 always votes 2:1 for class 0
    EXPECT_DOUBLE_EQ(knn_classify(train, train_labels, test, std::vector<int>{0, 0, 0}, 3, 2), 1.0);
}

TEST(Knn, VoteTiesGoToSmallerDistanceThenLowerLabel) {
    const auto train = rows({{1, 0}, {0, 1}});
    const std::vector<int> labels{0, 1};
    EXPECT_DOUBLE_EQ(knn_classify(train, labels, rows({{1, 0.2f}}), std::vector<int>{0}, 2, 2), 1.0);
    EXPECT_DOUBLE_EQ(knn_classify(train, labels, rows({{0.2f, 1}}), std::vector<int>{1}, 2, 2), 1.0);
    EXPECT_DOUBLE_EQ(knn_classify(train, labels, rows({{1, 1}}), std::vector<int>{0}, 2, 2), 1.0);
    EXPECT_DOUBLE_EQ(knn_classify(train, labels, rows({{1, 1}}), std::vector<int>{1}, 2, 2), 0.0);
}

TEST(Knn, CosineDistanceIgnoresScale) {
    const auto train = rows({{1, 0}, {0, 1}});
    const std::vector<int> labels{0, 1};
    EXPECT_DOUBLE_EQ(knn_classify(train, labels, rows({{100, 1}, {0.01f, 0.3f}}), std::vector<int>{0, 1}, 1, 2), 1.0);
}

TEST(Knn, InvalidArguments) {
    const auto train = rows({{1, 0}, {0, 1}});
    const std::vector<int> labels{0, 1};
    EXPECT_THROW(knn_classify(train, labels, rows({{1, 0}}), std::vector<int>{0}, 3, 2), ContractError);
    EXPECT_THROW(knn_classify(train, labels, rows({{1, 0}}), std::vector<int>{0}, 0, 2), ContractError);
    EXPECT_THROW(knn_classify(train, labels, rows({{1, 0, 0}}), std::vector<int>{0}, 1, 2), DimensionError);
}

TEST(Collapse, IdenticalRowsHaveZeroSpreadAndRankOne) {
    const auto m = collapse_metrics(rows({{3, 4}, {3, 4}, {3, 4}}));
    EXPECT_NEAR(m.mean_norm, 5.0, 1e-12);
    EXPECT_NEAR(m.per_dim_std, 0.0, 1e-12);
    EXPECT_NEAR(m.effective_rank, 1.0, 1e-9);
}

TEST(Collapse, OrthogonalRowsHaveFullRank) {
    constexpr std::size_t d = 4;
    Tensor<double> eye({d, d});
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 2.0;
    const auto m = collapse_metrics(eye);
    EXPECT_NEAR(m.mean_norm, 2.0, 1e-12);
    // each column is one 1 and d-1 zeros
    EXPECT_NEAR(m.per_dim_std, std::sqrt(double(d - 1) / double(d)), 1e-12);
    EXPECT_NEAR(m.effective_rank, double(d), 1e-9);
}

TEST(Collapse, UniformCubeSpreadNearOne) {
    const auto x = random_tensor<double>({4000, 16}, 8, -1, 1);
    const auto m = collapse_metrics(x);
    // rows on the unit sphere in d dims have per-coordinate std close to 1/sqrt(d)
    EXPECT_NEAR(m.per_dim_std, 1.0, 0.05);
    EXPECT_GT(m.effective_rank, 15.0);
}

TEST(Protocol, NamesRoundTrip) {
    for (auto p : {Protocol::linear, Protocol::knn, Protocol::semi}) EXPECT_EQ(parse_protocol(protocol_name(p)), p);
    EXPECT_THROW(parse_protocol("svm"), ConfigError);
}

TEST(Encode, ShapeFollowsConfigWidth) {
    const FamilySpec f = width_family({0.5, 1.0});
    const auto store = random_encoder(f);
    const auto data = easy_data(3, 1);
    for (const auto& dn : f.dn_list) {
        const auto reps = encode(store, f, dn, data);
        EXPECT_EQ(reps.shape(), (Shape{data.size(), f.rep_dim(dn)}));
    }
    const auto chunked = encode(store, f, f.full_config(), data.images, 5);
    EXPECT_EQ(chunked, encode(store, f, f.full_config(), data.images));
}

TEST(LinearProbe, SeparatesEasyClassesAboveChance) {
    const FamilySpec f = width_family({0.5, 1.0});
    const auto store = random_encoder(f);
    ProbeSpec spec;
    spec.epochs = 15;
    spec.batch_size = 64;
    spec.augment = false;
    const double acc = linear_probe(store, f, f.full_config(), easy_data(60, 1), easy_data(25, 2), spec, 4);
    EXPECT_GT(acc, 0.6);
    EXPECT_EQ(acc, linear_probe(store, f, f.full_config(), easy_data(60, 1), easy_data(25, 2), spec, 4));
}

TEST(Sweep, RowsSortedByFlops) {
    FamilySpec f = width_family({1.0, 0.5, 0.75});
    const auto store = random_encoder(f);
    RunConfig cfg;
    cfg.family = f;
    cfg.probe.knn_k = 5;
    const auto out = dn_sweep(store, f, Protocol::knn, easy_data(20, 1), easy_data(5, 2), cfg);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[0].dn, 1u);
    EXPECT_EQ(out[1].dn, 2u);
    EXPECT_EQ(out[2].dn, 0u);
    for (std::size_t i = 0; i < out.size(); ++i) {
        EXPECT_EQ(out[i].cfg, f.dn_list[out[i].dn].key());
        EXPECT_GE(out[i].metric, 0.0);
        EXPECT_LE(out[i].metric, 1.0);
        if (i) {
            EXPECT_LT(out[i - 1].flops, out[i].flops);
        }
    }
    EXPECT_EQ(sweep_row("dspnet", "knn", out[0]).size(), sweep_header().size());
}
