#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "dspnet/config.hpp"
#include "dspnet/data.hpp"

using namespace dspnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("dspnet_test_data_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v) {
    return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 8),
            static_cast<unsigned char>(v)};
}

/// Canonical N x rows x cols ubyte image file and label file.
void write_canonical(const fs::path& img, const fs::path& lab, std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                     const std::vector<unsigned char>& labels) {
    std::vector<unsigned char> a;
    for (auto v : {0x803u, n, rows, cols}) {
        auto b = be32(v);
        a.insert(a.end(), b.begin(), b.end());
    }
    for (std::uint32_t i = 0; i < n * rows * cols; ++i) a.push_back(static_cast<unsigned char>(i % 251));
    write_bytes(img, a);
    std::vector<unsigned char> l;
    for (auto v : {0x801u, n}) {
        auto b = be32(v);
        l.insert(l.end(), b.begin(), b.end());
    }
    l.insert(l.end(), labels.begin(), labels.end());
    write_bytes(lab, l);
}

/// Nearest class mean in pixel space, fit on `train`, scored on `test`.
double centroid_accuracy(const LabeledDataset& train, const LabeledDataset& test) {
    const std::size_t d = train.image_values(), k = train.num_classes;
    std::vector<double> mu(k * d, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto img = train.image(i);
        const auto c = static_cast<std::size_t>(train.labels[i]);
        for (std::size_t j = 0; j < d; ++j) mu[c * d + j] += img[j];
        ++count[c];
    }
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < d; ++j) mu[c * d + j] /= double(count[c]);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto img = test.image(i);
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t c = 0; c < k; ++c) {
            double s = 0;
            for (std::size_t j = 0; j < d; ++j) s += (img[j] - mu[c * d + j]) * (img[j] - mu[c * d + j]);
            if (s < best_d) best_d = s, best = c;
        }
        hits += best == static_cast<std::size_t>(test.labels[i]);
    }
    return double(hits) / double(test.size());
}

AugmentSpec identity_spec(std::size_t size) {
    AugmentSpec a;
    a.crop_min = a.crop_max = 1.0;
    a.flip_prob = 0;
    a.brightness = a.contrast = 0;
    a.out_size = size;
    return a;
}

SynthSpec small_synth() {
    SynthSpec s;
    s.per_class = 20;
    s.size = 16;
    return s;
}

}  // namespace

TEST(Idx, CanonicalFileLoads) {
    const auto img = scratch("c-images.idx"), lab = scratch("c-labels.idx");
    write_canonical(img, lab, 3, 28, 28, {0, 9, 4});
    const auto d = load_idx(img, lab, 10);
    EXPECT_EQ(d.images.shape(), (Shape{3, 1, 28, 28}));
    EXPECT_EQ(d.labels, (std::vector<int>{0, 9, 4}));
    EXPECT_FLOAT_EQ(d.images[5], 5.0f / 255.0f);
}

TEST(Idx, LabelOutOfRangeIsRejected) {
    const auto img = scratch("r-images.idx"), lab = scratch("r-labels.idx");
    write_canonical(img, lab, 2, 4, 4, {1, 255});
    EXPECT_THROW(load_idx(img, lab, 10), FormatError);
}

TEST(Idx, EmptyTruncatedAndMissingFiles) {
    const auto img = scratch("e-images.idx"), lab = scratch("e-labels.idx");
    write_canonical(img, lab, 2, 4, 4, {1, 2});
    const auto empty = scratch("empty.idx");
    write_bytes(empty, {});
    EXPECT_THROW(load_idx(empty, lab, 10), FormatError);
    std::vector<unsigned char> cut;
    {
        std::ifstream in(img, std::ios::binary);
        cut.assign(std::istreambuf_iterator<char>(in), {});
    }
    cut.resize(cut.size() - 3);
    const auto truncated = scratch("t-images.idx");
    write_bytes(truncated, cut);
    EXPECT_THROW(load_idx(truncated, lab, 10), FormatError);
    EXPECT_THROW(load_idx(scratch("absent.idx"), lab, 10), IoError);
}

TEST(Idx, RoundTripQuantizesToBytes) {
    auto d = synth_shapes(small_synth());
    for (auto& v : d.images.values()) v = std::round(v * 255.0f) / 255.0f;
    const auto img = scratch("rt-images.idx"), lab = scratch("rt-labels.idx");
    write_idx(d, img, lab);
    const auto back = load_idx(img, lab, d.num_classes);
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_LE(max_abs_diff(back.images, d.images), 1e-6f);
}

TEST(Synth, SameSeedIsBitwiseIdentical) {
    EXPECT_EQ(synth_shapes(small_synth()), synth_shapes(small_synth()));
    SynthSpec other = small_synth();
    other.seed = 2;
    EXPECT_NE(synth_shapes(other).images, synth_shapes(small_synth()).images);
}

TEST(Synth, BoundaryArgumentsAreRejected) {
    SynthSpec s = small_synth();
    s.per_class = 0;
    EXPECT_THROW(synth_shapes(s), ConfigError);
    s = small_synth();
    s.num_classes = 1;
    EXPECT_THROW(synth_shapes(s), ConfigError);
}

TEST(Synth, ValuesInRangeAndClassMajor) {
    const auto d = synth_shapes(small_synth());
    EXPECT_EQ(d.size(), 80u);
    for (float v : d.images.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
    EXPECT_TRUE(std::is_sorted(d.labels.begin(), d.labels.end()));
}

TEST(Synth, LowNoiseCentroidOracleExceedsNinetyPercent) {
    SynthSpec s;
    s.num_classes = 4;
    s.per_class = 200;
    s.size = 32;
    s.noise = 0.05;
    s.nuisance = 0.3;
    const auto train = synth_shapes(s);
    s.seed = 99;
    s.per_class = 100;
    EXPECT_GT(centroid_accuracy(train, synth_shapes(s)), 0.9);
}

TEST(Synth, CommittedToyDataKeepsCentroidOracleAboveNinetyPercent) {
    const RunConfig cfg = load_config(fs::path(DSPNET_SOURCE_DIR) / "configs" / "toy.json", false);
    const auto [train, test] = load_datasets(cfg.data);
    EXPECT_EQ(train.size(), 2000u);
    EXPECT_EQ(test.size(), 500u);
    EXPECT_GE(centroid_accuracy(train, test), 0.9);
}

TEST(Augment, IdentitySpecReturnsOriginal) {
    const auto d = synth_shapes(small_synth());
    const auto [v, vp] = augment_pair(d, 3, identity_spec(16), 5, 0);
    const auto img = d.image(3);
    EXPECT_EQ(std::vector<float>(v.values().begin(), v.values().end()), std::vector<float>(img.begin(), img.end()));
    EXPECT_EQ(v, vp);
}

TEST(Augment, ResizeWithoutCropMatchesBilinearDownsample) {
    const auto d = synth_shapes(small_synth());
    Engine g = keyed_engine({1});
    const auto v = augment_view(d.image(0), 1, 16, 16, identity_spec(8), g);
    ASSERT_EQ(v.shape(), (Shape{1, 8, 8}));
    // centres of an 8-pixel output land halfway between input pixels 2i and 2i+1
    const auto img = d.image(0);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            const float want = 0.25f * (img[(2 * i) * 16 + 2 * j] + img[(2 * i) * 16 + 2 * j + 1] +
                                        img[(2 * i + 1) * 16 + 2 * j] + img[(2 * i + 1) * 16 + 2 * j + 1]);
            EXPECT_NEAR(v[i * 8 + j], want, 1e-6f);
        }
}

TEST(Augment, FlipMirrorsTheCrop) {
    const auto d = synth_shapes(small_synth());
    AugmentSpec spec = identity_spec(16);
    spec.flip_prob = 1.0;
    const auto [v, vp] = augment_pair(d, 7, spec, 1, 0);
    const auto img = d.image(7);
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(v[r * 16 + c], img[r * 16 + (15 - c)]);
}

TEST(Augment, DeterministicRegardlessOfOrder) {
    const auto d = synth_shapes(small_synth());
    AugmentSpec spec;
    spec.out_size = 16;
    const auto first = augment_pair(d, 11, spec, 3, 2);
    for (std::size_t i = 0; i < 11; ++i) augment_pair(d, i, spec, 3, 2);
    EXPECT_EQ(augment_pair(d, 11, spec, 3, 2), first);
    EXPECT_NE(augment_pair(d, 11, spec, 3, 3).first, first.first);
    const std::vector<std::size_t> idx{11, 4};
    const auto batch = augment_batch<float>(d, idx, spec, 3, 2);
    EXPECT_TRUE(std::equal(first.first.values().begin(), first.first.values().end(), batch.first.values().begin()));
}

TEST(Augment, RangeAndShapeHoldForRandomSpecs) {
    const auto d = synth_shapes(small_synth());
    Engine g = keyed_engine({9});
    for (int t = 0; t < 30; ++t) {
        AugmentSpec spec;
        spec.crop_min = uniform(g, 0.1, 0.9);
        spec.crop_max = uniform(g, spec.crop_min, 1.0);
        spec.flip_prob = uniform01(g);
        spec.brightness = uniform(g, 0, 0.9);
        spec.contrast = uniform(g, 0, 0.9);
        spec.out_size = 4 + uniform_index(g, 20);
        const auto v = augment_view(d.image(std::size_t(t)), 1, 16, 16, spec, g);
        EXPECT_EQ(v.shape(), (Shape{1, spec.out_size, spec.out_size}));
        for (float x : v.values()) {
            EXPECT_GE(x, 0.0f);
            EXPECT_LE(x, 1.0f);
        }
    }
}

TEST(Augment, InvalidSpecsAreRejected) {
    AugmentSpec a;
    a.crop_min = 0.8;
    a.crop_max = 0.5;
    EXPECT_THROW(validate_augment(a, 32, 32), ConfigError);
    AugmentSpec tiny;
    tiny.crop_min = 1e-4;
    EXPECT_THROW(validate_augment(tiny, 32, 32), ConfigError);
    AugmentSpec flip;
    flip.flip_prob = 1.5;
    EXPECT_THROW(validate_augment(flip, 32, 32), ConfigError);
}

TEST(Permutation, IsDeterministicPermutationPerEpoch) {
    const auto p = epoch_permutation(100, 4, 0);
    std::vector<std::size_t> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(100);
    std::iota(iota.begin(), iota.end(), std::size_t{0});
    EXPECT_EQ(sorted, iota);
    EXPECT_EQ(p, epoch_permutation(100, 4, 0));
    EXPECT_NE(p, epoch_permutation(100, 4, 1));
}

TEST(SemiSplit, FractionOneIsWholeSet) {
    const auto d = synth_shapes(small_synth());
    const auto s = split_semi_indices(d, 1.0, 3);
    EXPECT_EQ(s.labeled.size(), d.size());
    EXPECT_TRUE(s.rest.empty());
}

TEST(SemiSplit, TenPercentOfTenClasses) {
    SynthSpec spec;
    spec.num_classes = 10;
    spec.per_class = 100;
    spec.size = 8;
    const auto d = synth_shapes(spec);
    const auto s = split_semi_indices(d, 0.1, 3);
    EXPECT_EQ(s.labeled.size(), 100u);
    std::vector<int> per(10, 0);
    for (auto i : s.labeled) ++per[std::size_t(d.labels[i])];
    for (int c : per) EXPECT_EQ(c, 10);
    std::set<std::size_t> all(s.labeled.begin(), s.labeled.end());
    all.insert(s.rest.begin(), s.rest.end());
    EXPECT_EQ(all.size(), d.size());
    EXPECT_EQ(split_semi_indices(d, 0.1, 3).labeled, s.labeled);
    EXPECT_NE(split_semi_indices(d, 0.1, 4).labeled, s.labeled);
    const auto [lab, rest] = split_semi(d, 0.1, 3);
    EXPECT_EQ(lab.size(), 100u);
    EXPECT_EQ(rest.size(), 900u);
}

TEST(SemiSplit, ZeroFractionIsRejected) {
    const auto d = synth_shapes(small_synth());
    EXPECT_THROW(split_semi_indices(d, 0.0, 3), ConfigError);
}

TEST(Dataset, SubsetAndBatch) {
    const auto d = synth_shapes(small_synth());
    const std::vector<std::size_t> idx{5, 60};
    const auto sub = d.subset(idx);
    EXPECT_EQ(sub.labels, (std::vector<int>{d.labels[5], d.labels[60]}));
    const auto b = d.batch<double>(idx);
    EXPECT_EQ(b.shape(), (Shape{2, 1, 16, 16}));
    EXPECT_EQ(b[256], double(d.image(60)[0]));
}
