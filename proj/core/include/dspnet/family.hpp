#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "dspnet/rng.hpp"

namespace dspnet {

struct StageSpec {
    std::size_t channels = 0;  // full width
    std::size_t blocks = 0;    // full depth
    std::size_t kernel = 3;    // odd
    std::size_t stride = 1;    // spatial reduction applied at the stage input

    friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// One sub-network selection: a width multiplier and a retained block count
/// per stage. The stem follows the first stage's multiplier.
struct SwitchConfig {
    std::vector<double> width_mult;
    std::vector<std::size_t> blocks;

    auto operator<=>(const SwitchConfig&) const = default;
    /// Stable textual key, e.g. "w0.5,0.5|b1,2".
    std::string key() const;
};

/// Architecture family: stem conv, then stages of conv-BN-ReLU blocks (the
/// non-first blocks of a stage are residual), then global average pooling.
struct FamilySpec {
    std::size_t in_channels = 1;
    std::size_t image_size = 32;
    std::size_t stem_channels = 8;
    std::size_t stem_kernel = 3;
    std::vector<StageSpec> stages;
    std::vector<SwitchConfig> dn_list;
    std::size_t channel_divisor = 1;

    std::size_t round_channels(double width_mult, std::size_t full) const;
    std::size_t active_channels(const SwitchConfig& cfg, std::size_t stage) const;
    std::size_t stem_active(const SwitchConfig& cfg) const;
    /// Representation width produced under `cfg` (last stage active channels).
    std::size_t rep_dim(const SwitchConfig& cfg) const;
    /// Representation width at full size.
    std::size_t rep_dim() const;
    SwitchConfig full_config() const;

    bool is_full(const SwitchConfig& cfg) const;
    /// a is contained in b: fewer-or-equal active channels and blocks everywhere.
    bool precedes(const SwitchConfig& a, const SwitchConfig& b) const;

    std::size_t full_index() const;
    std::size_t smallest_index() const;
    std::size_t dn_index(const SwitchConfig& cfg) const;

    friend bool operator==(const FamilySpec&, const FamilySpec&) = default;
};

/// Every invariant violation found; empty when the family is usable.
std::vector<std::string> validate_family(const FamilySpec& family);
/// Throws ConfigError listing all violations.
void require_valid(const FamilySpec& family);
/// Throws ConfigError when cfg does not fit the family's stages.
void require_valid(const FamilySpec& family, const SwitchConfig& cfg);

/// Sandwich-rule draw over dn_list: [smallest, full, n-2 distinct middles drawn
/// uniformly without replacement]. Returns dn_list indices. A single-entry
/// dn_list yields just that entry.
std::vector<std::size_t> sample_subnetwork_indices(const FamilySpec& family, std::size_t n, Engine& rng);
std::vector<SwitchConfig> sample_subnetworks(const FamilySpec& family, std::size_t n, Engine& rng);

struct Cost {
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
    std::uint64_t flops() const { return 2 * macs; }
};

/// One k x k convolution evaluated at out_h x out_w positions.
Cost conv_cost(std::size_t cin, std::size_t cout, std::size_t k, std::size_t out_h, std::size_t out_w, bool bias);

/// Encoder-only cost of the sliced network: conv weights and BN affine
/// parameters; MACs of the convolutions (pooling and BN are not counted).
Cost count_cost(const FamilySpec& family, const SwitchConfig& cfg);

/// Family whose full configuration is exactly `cfg` of `family`, with a
/// single-entry dn_list.
FamilySpec standalone_family(const FamilySpec& family, const SwitchConfig& cfg);

/// Uniform width multiplier across all stages with full depth.
SwitchConfig uniform_config(const FamilySpec& family, double width);

}  // namespace dspnet
