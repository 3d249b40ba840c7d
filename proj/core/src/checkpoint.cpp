#include "dspnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "json_io.hpp"

namespace dspnet {

using detail::json;

const ParamStore<float>& Checkpoint::store(const std::string& name) const {
    auto it = stores.find(name);
    if (it == stores.end()) throw ContractError("checkpoint has no '" + name + "' store");
    return it->second;
}

ParamStore<float>& Checkpoint::store(const std::string& name) {
    auto it = stores.find(name);
    if (it == stores.end()) throw ContractError("checkpoint has no '" + name + "' store");
    return it->second;
}

namespace {

constexpr char kMagic[4] = {'D', 'S', 'P', 'N'};

const char* kind_name(ParamKind k) {
    switch (k) {
        case ParamKind::weight: return "weight";
        case ParamKind::bias: return "bias";
        case ParamKind::bn: return "bn";
    }
    return "weight";
}

ParamKind kind_from(const std::string& s) {
    if (s == "weight") return ParamKind::weight;
    if (s == "bias") return ParamKind::bias;
    if (s == "bn") return ParamKind::bn;
    throw CorruptError("unknown tensor role '" + s + "' in checkpoint");
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const unsigned char> b, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[off + i]) << (8 * i);
    return v;
}

std::size_t align_up(std::size_t n) { return (n + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment; }

struct Entry {
    std::string store, name, role, stats_key;
    const Tensor<float>* tensor;
};

void append_floats(std::vector<unsigned char>& out, std::span<const float> values) {
    for (float v : values) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
    }
}

std::uint32_t crc32_of(std::span<const unsigned char> b) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t off = 0;
    while (off < b.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(b.size() - off, 1u << 30));
        crc = crc32(crc, b.data() + off, chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<Entry> entries;
    for (const auto& [sname, store] : ckpt.stores) {
        for (const auto& [name, t] : store.tensors) entries.push_back({sname, name, kind_name(store.kinds.at(name)), "", &t});
        for (const auto& [key, layers] : store.bn_stats)
            for (const auto& [layer, st] : layers) {
                entries.push_back({sname, layer, "running_mean", key, &st.mean});
                entries.push_back({sname, layer, "running_var", key, &st.var});
            }
    }

    json table = json::array();
    std::size_t offset = 0;
    for (const auto& e : entries) {
        const std::size_t nbytes = e.tensor->size() * sizeof(float);
        json row = {{"store", e.store},   {"name", e.name},  {"role", e.role},    {"dtype", static_cast<int>(DType::f32)},
                    {"shape", e.tensor->shape()}, {"offset", offset}, {"nbytes", nbytes}};
        if (!e.stats_key.empty()) row["stats_key"] = e.stats_key;
        table.push_back(std::move(row));
        offset = align_up(offset + nbytes);
    }
    const json header = {{"kind", ckpt.kind},
                         {"config_hash", ckpt.config_hash},
                         {"config", ckpt.config_json},
                         {"family", detail::family_to_json(ckpt.family)},
                         {"head", detail::head_to_json(ckpt.head)},
                         {"rng", {{"seed", ckpt.seed}, {"step", ckpt.step}}},
                         {"tau", ckpt.tau},
                         {"tensors", table}};
    const std::string text = header.dump();

    std::vector<unsigned char> out(kMagic, kMagic + 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.resize(align_up(out.size()), 0);
    const std::size_t payload_start = out.size();
    for (const auto& e : entries) {
        out.resize(payload_start + align_up(out.size() - payload_start), 0);
        append_floats(out, e.tensor->values());
    }
    const std::uint32_t crc = crc32_of(std::span(out).subspan(payload_start));
    put_u32(out, crc);
    return out;
}

Checkpoint decode_checkpoint(std::span<const unsigned char> b) {
    if (b.size() < 12) throw CorruptError("checkpoint truncated: " + std::to_string(b.size()) + " bytes");
    if (std::memcmp(b.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint file (bad magic)");
    const std::uint32_t version = get_u32(b, 4);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const std::size_t hlen = get_u32(b, 8);
    if (12 + hlen > b.size()) throw CorruptError("checkpoint truncated inside the header");
    const std::size_t payload_start = align_up(12 + hlen);
    if (payload_start + 4 > b.size()) throw CorruptError("checkpoint truncated before the payload");
    const std::size_t payload_len = b.size() - 4 - payload_start;
    const auto payload = b.subspan(payload_start, payload_len);
    if (crc32_of(payload) != get_u32(b, b.size() - 4)) throw CorruptError("checkpoint CRC mismatch");

    json h;
    try {
        h = json::parse(b.begin() + 12, b.begin() + 12 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const json::exception& e) {
        throw CorruptError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    Checkpoint c;
    try {
        c.kind = h.at("kind").get<std::string>();
        c.config_hash = h.at("config_hash").get<std::string>();
        c.config_json = h.at("config").get<std::string>();
        c.family = detail::family_from_json(detail::StrictObject(h.at("family"), "family"));
        c.head = detail::head_from_json(detail::StrictObject(h.at("head"), "head"));
        c.seed = h.at("rng").at("seed").get<std::uint64_t>();
        c.step = h.at("rng").at("step").get<std::uint64_t>();
        c.tau = h.at("tau").get<double>();
        std::size_t prev_end = 0;
        for (const auto& row : h.at("tensors")) {
            const auto offset = row.at("offset").get<std::size_t>();
            const auto nbytes = row.at("nbytes").get<std::size_t>();
            const Shape shape = row.at("shape").get<Shape>();
            if (row.at("dtype").get<int>() != static_cast<int>(DType::f32))
                throw CorruptError("unsupported tensor dtype in checkpoint");
            if (shape.empty() || shape_size(shape) * sizeof(float) != nbytes)
                throw CorruptError("tensor table entry with inconsistent shape");
            if (offset < prev_end || offset % kPayloadAlignment != 0 || offset + nbytes > payload_len)
                throw CorruptError("tensor table offsets overlap or exceed the payload");
            prev_end = offset + nbytes;
            std::vector<float> values(shape_size(shape));
            for (std::size_t i = 0; i < values.size(); ++i)
                values[i] = std::bit_cast<float>(get_u32(payload, offset + 4 * i));
            Tensor<float> t(shape, std::move(values));
            auto& store = c.stores[row.at("store").get<std::string>()];
            const auto name = row.at("name").get<std::string>();
            const auto role = row.at("role").get<std::string>();
            if (role == "running_mean" || role == "running_var") {
                auto& st = store.bn_stats[row.at("stats_key").get<std::string>()][name];
                (role == "running_mean" ? st.mean : st.var) = std::move(t);
            } else {
                store.add(name, std::move(t), kind_from(role));
            }
        }
    } catch (const json::exception& e) {
        throw CorruptError(std::string("checkpoint header is malformed: ") + e.what());
    } catch (const ContractError& e) {
        throw CorruptError(std::string("checkpoint tensor table is inconsistent: ") + e.what());
    }
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(ckpt);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes);
}

}  // namespace dspnet
