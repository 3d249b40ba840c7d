#include "dspnet/family.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dspnet/errors.hpp"

namespace dspnet {

std::string SwitchConfig::key() const {
    std::ostringstream os;
    os << 'w';
    for (std::size_t i = 0; i < width_mult.size(); ++i) os << (i ? "," : "") << width_mult[i];
    os << "|b";
    for (std::size_t i = 0; i < blocks.size(); ++i) os << (i ? "," : "") << blocks[i];
    return os.str();
}

std::size_t FamilySpec::round_channels(double width_mult, std::size_t full) const {
    const double div = static_cast<double>(std::max<std::size_t>(channel_divisor, 1));
    const double units = std::round(width_mult * static_cast<double>(full) / div);
    return units <= 0 ? 0 : static_cast<std::size_t>(units) * static_cast<std::size_t>(div);
}

std::size_t FamilySpec::active_channels(const SwitchConfig& cfg, std::size_t stage) const {
    return round_channels(cfg.width_mult.at(stage), stages.at(stage).channels);
}

std::size_t FamilySpec::stem_active(const SwitchConfig& cfg) const {
    return round_channels(cfg.width_mult.at(0), stem_channels);
}

std::size_t FamilySpec::rep_dim(const SwitchConfig& cfg) const {
    return active_channels(cfg, stages.size() - 1);
}

std::size_t FamilySpec::rep_dim() const {
    return stages.back().channels;
}

SwitchConfig FamilySpec::full_config() const {
    SwitchConfig c;
    for (const auto& s : stages) {
        c.width_mult.push_back(1.0);
        c.blocks.push_back(s.blocks);
    }
    return c;
}

bool FamilySpec::is_full(const SwitchConfig& cfg) const {
    if (stem_active(cfg) != stem_channels) return false;
    for (std::size_t s = 0; s < stages.size(); ++s)
        if (active_channels(cfg, s) != stages[s].channels || cfg.blocks[s] != stages[s].blocks) return false;
    return true;
}

bool FamilySpec::precedes(const SwitchConfig& a, const SwitchConfig& b) const {
    if (stem_active(a) > stem_active(b)) return false;
    for (std::size_t s = 0; s < stages.size(); ++s)
        if (active_channels(a, s) > active_channels(b, s) || a.blocks[s] > b.blocks[s]) return false;
    return true;
}

std::size_t FamilySpec::full_index() const {
    for (std::size_t i = 0; i < dn_list.size(); ++i)
        if (is_full(dn_list[i])) return i;
    throw ConfigError("full configuration absent");
}

std::size_t FamilySpec::smallest_index() const {
    for (std::size_t i = 0; i < dn_list.size(); ++i) {
        bool below_all = true;
        for (const auto& other : dn_list) below_all = below_all && precedes(dn_list[i], other);
        if (below_all) return i;
    }
    throw ConfigError("no smallest configuration in dn_list");
}

std::size_t FamilySpec::dn_index(const SwitchConfig& cfg) const {
    for (std::size_t i = 0; i < dn_list.size(); ++i)
        if (dn_list[i] == cfg) return i;
    throw ConfigError("configuration " + cfg.key() + " is not in dn_list");
}

namespace {

void check_config(const FamilySpec& f, const SwitchConfig& cfg, const std::string& tag, std::vector<std::string>& errs) {
    if (cfg.width_mult.size() != f.stages.size() || cfg.blocks.size() != f.stages.size()) {
        errs.push_back(tag + ": expected " + std::to_string(f.stages.size()) + " stage entries");
        return;
    }
    for (std::size_t s = 0; s < f.stages.size(); ++s) {
        const double w = cfg.width_mult[s];
        if (!(w > 0.0) || w > 1.0) errs.push_back(tag + ": width_mult outside (0,1] at stage " + std::to_string(s));
        if (f.active_channels(cfg, s) < 1) errs.push_back(tag + ": channels below 1 at stage " + std::to_string(s));
        if (cfg.blocks[s] < 1 || cfg.blocks[s] > f.stages[s].blocks)
            errs.push_back(tag + ": blocks outside [1," + std::to_string(f.stages[s].blocks) + "] at stage " +
                           std::to_string(s));
    }
    if (f.stem_active(cfg) < 1) errs.push_back(tag + ": channels below 1 in stem");
}

}  // namespace

std::vector<std::string> validate_family(const FamilySpec& f) {
    std::vector<std::string> errs;
    if (f.in_channels < 1) errs.emplace_back("in_channels must be positive");
    if (f.stem_channels < 1) errs.emplace_back("stem_channels must be positive");
    if (f.stem_kernel % 2 == 0) errs.emplace_back("stem_kernel must be odd");
    if (f.channel_divisor < 1) errs.emplace_back("channel_divisor must be positive");
    if (f.stages.empty()) errs.emplace_back("family has no stages");
    std::size_t reduction = 1;
    for (std::size_t s = 0; s < f.stages.size(); ++s) {
        const auto& st = f.stages[s];
        const std::string tag = "stage " + std::to_string(s);
        if (st.channels < 1) errs.push_back(tag + ": channels must be positive");
        if (st.blocks < 1) errs.push_back(tag + ": blocks must be positive");
        if (st.kernel % 2 == 0) errs.push_back(tag + ": kernel must be odd");
        if (st.stride < 1) errs.push_back(tag + ": stride must be positive");
        reduction *= std::max<std::size_t>(st.stride, 1);
    }
    if (f.image_size < 1 || f.image_size % reduction != 0)
        errs.push_back("image_size " + std::to_string(f.image_size) + " not divisible by total stride " +
                       std::to_string(reduction));
    if (!errs.empty()) return errs;

    if (f.dn_list.empty()) {
        errs.emplace_back("dn_list is empty");
        return errs;
    }
    for (std::size_t i = 0; i < f.dn_list.size(); ++i) check_config(f, f.dn_list[i], "dn " + std::to_string(i), errs);
    if (!errs.empty()) return errs;

    std::size_t full = 0;
    for (const auto& c : f.dn_list) full += f.is_full(c) ? 1 : 0;
    if (full == 0) errs.emplace_back("full configuration absent");
    if (full > 1) errs.emplace_back("full configuration listed more than once");

    for (std::size_t i = 0; i < f.dn_list.size(); ++i)
        for (std::size_t j = i + 1; j < f.dn_list.size(); ++j)
            if (f.precedes(f.dn_list[i], f.dn_list[j]) && f.precedes(f.dn_list[j], f.dn_list[i]))
                errs.push_back("dn " + std::to_string(i) + " and dn " + std::to_string(j) +
                               " select the same sub-network");

    std::size_t smallest = 0;
    for (const auto& c : f.dn_list) {
        bool below_all = true;
        for (const auto& other : f.dn_list) below_all = below_all && f.precedes(c, other);
        smallest += below_all ? 1 : 0;
    }
    if (smallest != 1) errs.emplace_back("dn_list has no unique smallest configuration");
    return errs;
}

void require_valid(const FamilySpec& family) {
    const auto errs = validate_family(family);
    if (errs.empty()) return;
    std::string msg = "invalid family:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ConfigError(msg);
}

void require_valid(const FamilySpec& family, const SwitchConfig& cfg) {
    std::vector<std::string> errs;
    check_config(family, cfg, "config " + cfg.key(), errs);
    if (errs.empty()) return;
    std::string msg = "invalid switch config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ConfigError(msg);
}

std::vector<std::size_t> sample_subnetwork_indices(const FamilySpec& family, std::size_t n, Engine& rng) {
    if (n < 2) throw ConfigError("sandwich sampling needs n >= 2, got " + std::to_string(n));
    const std::size_t small = family.smallest_index();
    const std::size_t full = family.full_index();
    if (small == full) return {full};

    std::vector<std::size_t> middles;
    for (std::size_t i = 0; i < family.dn_list.size(); ++i)
        if (i != small && i != full) middles.push_back(i);
    if (n - 2 > middles.size())
        throw ConfigError("cannot sample " + std::to_string(n) + " distinct sub-networks from " +
                          std::to_string(family.dn_list.size()) + " DNs");

    std::vector<std::size_t> out{small, full};
    // partial Fisher-Yates: the first n-2 slots end up a uniform draw
    for (std::size_t i = 0; i < n - 2; ++i) {
        const auto j = i + uniform_index(rng, middles.size() - i);
        std::swap(middles[i], middles[j]);
        out.push_back(middles[i]);
    }
    return out;
}

std::vector<SwitchConfig> sample_subnetworks(const FamilySpec& family, std::size_t n, Engine& rng) {
    std::vector<SwitchConfig> out;
    for (auto i : sample_subnetwork_indices(family, n, rng)) out.push_back(family.dn_list[i]);
    return out;
}

Cost conv_cost(std::size_t cin, std::size_t cout, std::size_t k, std::size_t out_h, std::size_t out_w, bool bias) {
    Cost c;
    const std::uint64_t w = static_cast<std::uint64_t>(cin) * cout * k * k;
    c.params = w + (bias ? cout : 0);
    c.macs = w * out_h * out_w;
    return c;
}

Cost count_cost(const FamilySpec& family, const SwitchConfig& cfg) {
    require_valid(family, cfg);
    Cost total;
    auto acc = [&total](const Cost& c) {
        total.params += c.params;
        total.macs += c.macs;
    };
    std::size_t size = family.image_size;
    std::size_t cin = family.stem_active(cfg);
    acc(conv_cost(family.in_channels, cin, family.stem_kernel, size, size, false));
    total.params += 2 * cin;
    for (std::size_t s = 0; s < family.stages.size(); ++s) {
        const auto& st = family.stages[s];
        const std::size_t ch = family.active_channels(cfg, s);
        size /= st.stride;
        for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
            acc(conv_cost(b == 0 ? cin : ch, ch, st.kernel, size, size, false));
            total.params += 2 * ch;
        }
        cin = ch;
    }
    return total;
}

FamilySpec standalone_family(const FamilySpec& family, const SwitchConfig& cfg) {
    require_valid(family, cfg);
    FamilySpec out = family;
    out.channel_divisor = 1;
    out.stem_channels = family.stem_active(cfg);
    for (std::size_t s = 0; s < out.stages.size(); ++s) {
        out.stages[s].channels = family.active_channels(cfg, s);
        out.stages[s].blocks = cfg.blocks[s];
    }
    out.dn_list = {out.full_config()};
    return out;
}

SwitchConfig uniform_config(const FamilySpec& family, double width) {
    SwitchConfig c;
    for (const auto& s : family.stages) {
        c.width_mult.push_back(width);
        c.blocks.push_back(s.blocks);
    }
    return c;
}

}  // namespace dspnet
