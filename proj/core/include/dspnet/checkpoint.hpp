#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dspnet/slimnet.hpp"
#include "dspnet/ssl.hpp"

namespace dspnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 64;

/// Persisted model state. File layout (all integers little-endian):
///   "DSPN" | u32 version | u32 header length | UTF-8 JSON header |
///   zero padding to 64 bytes | payload | u32 CRC32 of payload
/// The header holds the config hash and text, family, head, counters and a
/// tensor table (store, name, role, stats key, dtype code, shape, offset,
/// byte length). Tensor offsets are relative to the payload start and
/// 64-byte aligned.
struct Checkpoint {
    std::string kind;  // "dspnet", "byol", "standalone", "supervised", "init"
    std::string config_json;
    std::string config_hash;
    FamilySpec family;
    HeadSpec head;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    double tau = 0;
    /// Named stores, e.g. "online", "predictor", "target", "classifier".
    std::map<std::string, ParamStore<float>> stores;

    const ParamStore<float>& store(const std::string& name) const;
    ParamStore<float>& store(const std::string& name);

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on a bad magic or version and CorruptError on a
/// truncated file, CRC mismatch or inconsistent tensor table.
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dspnet
