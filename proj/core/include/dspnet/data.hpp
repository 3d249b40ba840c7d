#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "dspnet/rng.hpp"
#include "dspnet/tensor.hpp"

namespace dspnet {

/// Images [N x C x H x W] with values in [0, 1] and one label per image.
struct LabeledDataset {
    Tensor<float> images;
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t channels() const { return images.dim(1); }
    std::size_t height() const { return images.dim(2); }
    std::size_t width() const { return images.dim(3); }
    std::size_t image_values() const { return channels() * height() * width(); }
    std::span<const float> image(std::size_t i) const;

    LabeledDataset subset(std::span<const std::size_t> indices) const;
    /// Stacks the given images into [B x C x H x W] of type T.
    template <class T>
    Tensor<T> batch(std::span<const std::size_t> indices) const;

    /// Throws ContractError if shapes or label ranges are inconsistent.
    void validate() const;

    friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

/// Reads a ubyte IDX image file (magic 0x00000803 for N x H x W, or
/// 0x00000804 for N x C x H x W) and its IDX label file (0x00000801).
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t num_classes);

/// Writes a dataset as an IDX image/label pair (values quantized to bytes).
void write_idx(const LabeledDataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

struct SynthSpec {
    std::size_t num_classes = 4;
    std::size_t per_class = 500;
    std::size_t size = 32;
    double noise = 0.2;     // std of additive pixel noise
    double nuisance = 1.0;  // scales brightness, contrast, illumination ramp and frequency spread
    double jitter = 0.05;   // phase jitter as a fraction of a period
    std::uint64_t seed = 1;

    friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

/// Grayscale gratings: class c has a class-specific orientation and spatial
/// frequency with a fixed phase at the image centre. Per image: phase
/// jitter, frequency spread, brightness, contrast, a linear illumination
/// ramp and additive noise. Deterministic in `seed`; images are ordered
/// class-major.
LabeledDataset synth_shapes(const SynthSpec& spec);

struct AugmentSpec {
    double crop_min = 0.3;  // area fraction range of the random resized crop
    double crop_max = 1.0;
    double flip_prob = 0.5;
    double brightness = 0.4;  // multiplicative factor drawn from [1-b, 1+b]
    double contrast = 0.4;    // blend factor around the image mean from [1-c, 1+c]
    std::size_t out_size = 32;

    friend bool operator==(const AugmentSpec&, const AugmentSpec&) = default;
};

/// Throws ConfigError on invalid ranges or when the smallest crop of a
/// `height` x `width` image is below one pixel.
void validate_augment(const AugmentSpec& spec, std::size_t height, std::size_t width);

/// One random view of a [C x H x W] image: resized crop, horizontal flip,
/// brightness and contrast jitter, clamped to [0, 1].
Tensor<float> augment_view(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width,
                           const AugmentSpec& spec, Engine& rng);

/// Two independent views drawn from an engine keyed by (seed, epoch, index).
std::pair<Tensor<float>, Tensor<float>> augment_pair(const LabeledDataset& data, std::size_t index,
                                                     const AugmentSpec& spec, std::uint64_t seed,
                                                     std::uint64_t epoch);

/// Stacked view batches [B x C x S x S] for the given sample indices.
template <class T>
std::pair<Tensor<T>, Tensor<T>> augment_batch(const LabeledDataset& data, std::span<const std::size_t> indices,
                                              const AugmentSpec& spec, std::uint64_t seed, std::uint64_t epoch);

/// Single augmented view per sample (probe training).
template <class T>
Tensor<T> augment_single_batch(const LabeledDataset& data, std::span<const std::size_t> indices,
                               const AugmentSpec& spec, std::uint64_t seed, std::uint64_t epoch);

/// Deterministic permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

struct SemiSplit {
    std::vector<std::size_t> labeled;
    std::vector<std::size_t> rest;
};

/// Class-balanced draw of ceil(fraction * N_c) indices per class.
SemiSplit split_semi_indices(const LabeledDataset& data, double fraction, std::uint64_t seed);
std::pair<LabeledDataset, LabeledDataset> split_semi(const LabeledDataset& data, double fraction, std::uint64_t seed);

}  // namespace dspnet
