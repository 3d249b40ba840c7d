#pragma once

#include <concepts>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "dspnet/errors.hpp"
#include "dspnet/family.hpp"
#include "dspnet/ssl.hpp"

namespace dspnet::detail {

using nlohmann::json;

/// Reads fields of one JSON object and rejects keys nobody asked for.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    const json& raw(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }

    StrictObject object(const char* key) {
        seen_.insert(key);
        return StrictObject(j_.at(key), child(key));
    }

    template <std::unsigned_integral U>
    void get(const char* key, U& out) {
        read(key, out, [](const json& v) { return v.is_number_unsigned(); });
    }
    void get(const char* key, double& out) { read(key, out, [](const json& v) { return v.is_number(); }); }
    void get(const char* key, bool& out) { read(key, out, [](const json& v) { return v.is_boolean(); }); }
    void get(const char* key, std::string& out) { read(key, out, [](const json& v) { return v.is_string(); }); }

    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string where() const { return path_.empty() ? "config root" : "'" + path_ + "'"; }

    /// Throws on any key that was not read.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + child(it.key()) + "'");
    }

private:
    template <class T, class Check>
    void read(const char* key, T& out, Check ok) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if (!ok(*it)) throw ConfigError("config key '" + child(key) + "' has the wrong type");
        out = it->template get<T>();
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::vector<std::size_t> size_list(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError("config key '" + path + "' must be an array");
    std::vector<std::size_t> out;
    for (const auto& v : j) {
        if (!v.is_number_unsigned()) throw ConfigError("config key '" + path + "' must hold non-negative integers");
        out.push_back(v.get<std::size_t>());
    }
    return out;
}

inline std::vector<double> double_list(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError("config key '" + path + "' must be an array");
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number()) throw ConfigError("config key '" + path + "' must hold numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

inline json family_to_json(const FamilySpec& f) {
    json stages = json::array();
    for (const auto& s : f.stages)
        stages.push_back({{"channels", s.channels}, {"blocks", s.blocks}, {"kernel", s.kernel}, {"stride", s.stride}});
    json dns = json::array();
    for (const auto& c : f.dn_list) dns.push_back({{"width_mult", c.width_mult}, {"blocks", c.blocks}});
    return {{"in_channels", f.in_channels},
            {"image_size", f.image_size},
            {"stem_channels", f.stem_channels},
            {"stem_kernel", f.stem_kernel},
            {"channel_divisor", f.channel_divisor},
            {"stages", stages},
            {"dn_list", dns}};
}

inline FamilySpec family_from_json(StrictObject o) {
    FamilySpec f;
    o.get("in_channels", f.in_channels);
    o.get("image_size", f.image_size);
    o.get("stem_channels", f.stem_channels);
    o.get("stem_kernel", f.stem_kernel);
    o.get("channel_divisor", f.channel_divisor);
    if (o.has("stages")) {
        const json& arr = o.raw("stages");
        if (!arr.is_array()) throw ConfigError("config key '" + o.child("stages") + "' must be an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            StrictObject s(arr[i], o.child("stages[" + std::to_string(i) + "]"));
            StageSpec st;
            s.get("channels", st.channels);
            s.get("blocks", st.blocks);
            s.get("kernel", st.kernel);
            s.get("stride", st.stride);
            s.finish();
            f.stages.push_back(st);
        }
    }
    if (o.has("dn_list")) {
        const json& arr = o.raw("dn_list");
        if (!arr.is_array()) throw ConfigError("config key '" + o.child("dn_list") + "' must be an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = o.child("dn_list[" + std::to_string(i) + "]");
            StrictObject d(arr[i], path);
            SwitchConfig c;
            if (d.has("width_mult")) c.width_mult = double_list(d.raw("width_mult"), path + ".width_mult");
            if (d.has("blocks")) c.blocks = size_list(d.raw("blocks"), path + ".blocks");
            d.finish();
            f.dn_list.push_back(std::move(c));
        }
    }
    o.finish();
    return f;
}

inline json head_to_json(const HeadSpec& h) { return {{"hidden_dim", h.hidden_dim}, {"proj_dim", h.proj_dim}}; }

inline HeadSpec head_from_json(StrictObject o) {
    HeadSpec h;
    o.get("hidden_dim", h.hidden_dim);
    o.get("proj_dim", h.proj_dim);
    o.finish();
    return h;
}

}  // namespace dspnet::detail
