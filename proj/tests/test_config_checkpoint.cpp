#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dspnet/checkpoint.hpp"
#include "dspnet/config.hpp"
#include "support.hpp"

using namespace dspnet;
using namespace dspnet::test;
namespace fs = std::filesystem;

namespace {

fs::path toy_path() { return fs::path(DSPNET_SOURCE_DIR) / "configs" / "toy.json"; }

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
    const auto at = s.find(from);
    EXPECT_NE(at, std::string::npos) << from;
    return s.replace(at, from.size(), to);
}

Checkpoint sample_checkpoint() {
    const FamilySpec family = width_family({0.5, 1.0});
    HeadSpec head;
    head.hidden_dim = 16;
    head.proj_dim = 4;
    auto state = init_branch_state<float>(family, head, 5);
    state.online.stats(family.full_config().key(), "enc.stem.bn", 4).mean[1] = 0.25f;
    Checkpoint c;
    c.kind = "dspnet";
    c.config_json = "{\"name\": \"x\"}\n";
    c.config_hash = "0123456789abcdef";
    c.family = family;
    c.head = head;
    c.seed = 5;
    c.step = 42;
    c.tau = 0.9975;
    c.stores["online"] = state.online;
    c.stores["predictor"] = state.predictor;
    c.stores["target"] = state.target;
    return c;
}

class ScopedEnv {
public:
    ScopedEnv(const char* name, const char* value) : name_(name) { ::setenv(name, value, 1); }
    ~ScopedEnv() { ::unsetenv(name_); }

private:
    const char* name_;
};

}  // namespace

TEST(Config, ToyConfigRoundTrips) {
    const RunConfig c = load_config(toy_path(), false);
    EXPECT_EQ(c.name, "toy");
    EXPECT_EQ(c.family.dn_list.size(), 3u);
    const RunConfig back = parse_config(serialize_config(c));
    EXPECT_EQ(back, c);
    EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, UnknownKeyIsRejected) {
    const std::string text = serialize_config(load_config(toy_path(), false));
    EXPECT_THROW(parse_config(replace_once(text, "\"name\": \"toy\"", "\"name\": \"toy\", \"nmae\": 1")), ConfigError);
    EXPECT_THROW(parse_config(replace_once(text, "\"crop_min\"", "\"crop_mni\"")), ConfigError);
}

TEST(Config, InvalidValuesAreRejected) {
    const std::string text = serialize_config(load_config(toy_path(), false));
    EXPECT_THROW(parse_config(replace_once(text, "\"n_sampled\": 3", "\"n_sampled\": 1")), ConfigError);
    EXPECT_THROW(parse_config(replace_once(text, "\"kind\": \"lars\"", "\"kind\": \"adam\"")), ConfigError);
    EXPECT_THROW(parse_config("{ not json"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/dspnet.json"), ConfigError);
}

TEST(Config, SeedEnvironmentOverride) {
    {
        ScopedEnv env("DSPNET_SEED", "777");
        EXPECT_EQ(load_config(toy_path()).seed, 777u);
        EXPECT_NE(load_config(toy_path(), false).seed, 777u);
    }
    {
        ScopedEnv env("DSPNET_SEED", "-3");
        EXPECT_THROW(load_config(toy_path()), ConfigError);
    }
    {
        ScopedEnv env("DSPNET_SEED", "12abc");
        EXPECT_THROW(load_config(toy_path()), ConfigError);
    }
}

TEST(Config, HashChangesWithContent) {
    RunConfig c = load_config(toy_path(), false);
    const auto h = config_hash(c);
    EXPECT_EQ(h.size(), 16u);
    c.seed += 1;
    EXPECT_NE(config_hash(c), h);
}

TEST(Checkpoint, EncodeDecodeIsLossless) {
    const Checkpoint c = sample_checkpoint();
    const auto bytes = encode_checkpoint(c);
    const Checkpoint back = decode_checkpoint(bytes);
    EXPECT_EQ(back, c);
    EXPECT_EQ(encode_checkpoint(back), bytes);
    EXPECT_EQ(bytes[0], 'D');
    EXPECT_EQ(bytes[3], 'N');
}

TEST(Checkpoint, FileRoundTrip) {
    const Checkpoint c = sample_checkpoint();
    const fs::path p = fs::temp_directory_path() / ("dspnet_ckpt_" + std::to_string(::getpid()) + ".dspn");
    save_checkpoint(c, p);
    EXPECT_EQ(load_checkpoint(p), c);
    fs::remove(p);
    EXPECT_THROW(load_checkpoint(p), IoError);
}

TEST(Checkpoint, FlippedPayloadByteFailsCrc) {
    auto bytes = encode_checkpoint(sample_checkpoint());
    bytes[bytes.size() - 20] ^= 0x10;
    EXPECT_THROW(decode_checkpoint(bytes), CorruptError);
}

TEST(Checkpoint, BadMagicAndVersion) {
    auto bytes = encode_checkpoint(sample_checkpoint());
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(magic), FormatError);
    auto version = bytes;
    version[4] ^= 0x7f;
    version[7] ^= 0x7f;
    EXPECT_THROW(decode_checkpoint(version), FormatError);
}

TEST(Checkpoint, EveryTruncationIsDetected) {
    const auto bytes = encode_checkpoint(sample_checkpoint());
    for (std::size_t keep : {std::size_t{0}, std::size_t{8}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
        const std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
        EXPECT_THROW(decode_checkpoint(cut), CorruptError) << keep;
    }
}

TEST(Checkpoint, MissingStoreIsContractError) {
    const Checkpoint c = sample_checkpoint();
    EXPECT_THROW(c.store("classifier"), ContractError);
    EXPECT_NO_THROW(c.store("target"));
}
