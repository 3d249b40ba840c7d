#include "dspnet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "dspnet/errors.hpp"

namespace dspnet {

std::span<const float> LabeledDataset::image(std::size_t i) const {
    if (i >= size()) throw ContractError("image index " + std::to_string(i) + " out of range");
    const std::size_t n = image_values();
    return {images.data() + i * n, n};
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw ContractError("empty subset");
    LabeledDataset out;
    out.images = batch<float>(indices);
    out.num_classes = num_classes;
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels[i]);
    return out;
}

template <class T>
Tensor<T> LabeledDataset::batch(std::span<const std::size_t> indices) const {
    const std::size_t n = image_values();
    Tensor<T> out(Shape{indices.size(), channels(), height(), width()});
    T* dst = out.data();
    for (std::size_t i : indices) {
        auto src = image(i);
        std::copy(src.begin(), src.end(), dst);
        dst += n;
    }
    return out;
}

void LabeledDataset::validate() const {
    if (images.rank() != 4) throw ContractError("dataset images must be N x C x H x W");
    if (labels.empty() || images.dim(0) != labels.size())
        throw ContractError("dataset has " + std::to_string(images.dim(0)) + " images and " +
                            std::to_string(labels.size()) + " labels");
    if (num_classes < 2) throw ContractError("dataset needs at least 2 classes");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
            throw ContractError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
           std::uint32_t(b[off + 3]);
}

struct IdxFile {
    std::vector<std::size_t> dims;
    std::size_t offset = 0;
};

IdxFile parse_idx_header(const std::vector<unsigned char>& b, const std::filesystem::path& path) {
    if (b.size() < 4) throw FormatError(path.string() + ": file too short for an IDX header");
    if (b[0] != 0 || b[1] != 0) throw FormatError(path.string() + ": bad IDX magic");
    if (b[2] != 0x08) throw FormatError(path.string() + ": only unsigned byte IDX data is supported");
    const std::size_t ndims = b[3];
    if (ndims == 0) throw FormatError(path.string() + ": IDX file with zero dimensions");
    IdxFile f;
    f.offset = 4 + 4 * ndims;
    if (b.size() < f.offset) throw FormatError(path.string() + ": truncated IDX header");
    std::size_t count = 1;
    for (std::size_t d = 0; d < ndims; ++d) {
        f.dims.push_back(be32(b, 4 + 4 * d));
        count *= f.dims.back();
    }
    if (b.size() - f.offset < count)
        throw FormatError(path.string() + ": truncated IDX payload (" + std::to_string(b.size() - f.offset) +
                          " of " + std::to_string(count) + " bytes)");
    if (b.size() - f.offset > count) throw FormatError(path.string() + ": trailing bytes after IDX payload");
    return f;
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(b.data(), 4);
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t num_classes) {
    const auto ib = read_file(images);
    const auto lb = read_file(labels);
    const IdxFile fi = parse_idx_header(ib, images);
    const IdxFile fl = parse_idx_header(lb, labels);
    if (ib[3] != 3 && ib[3] != 4)
        throw FormatError(images.string() + ": bad IDX magic for images (expected 0x00000803 or 0x00000804)");
    if (lb[3] != 1) throw FormatError(labels.string() + ": bad IDX magic for labels (expected 0x00000801)");
    const std::size_t n = fi.dims[0];
    if (n == 0) throw FormatError(images.string() + ": IDX file holds no images");
    if (fl.dims[0] != n)
        throw FormatError("count mismatch: " + std::to_string(n) + " images, " + std::to_string(fl.dims[0]) +
                          " labels");
    const std::size_t c = ib[3] == 4 ? fi.dims[1] : 1;
    const std::size_t h = fi.dims[ib[3] == 4 ? 2 : 1];
    const std::size_t w = fi.dims[ib[3] == 4 ? 3 : 2];
    if (c == 0 || h == 0 || w == 0) throw FormatError(images.string() + ": zero image extent");

    LabeledDataset d;
    d.num_classes = num_classes;
    d.images = Tensor<float>(Shape{n, c, h, w});
    auto px = d.images.values();
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(ib[fi.offset + i]) / 255.0f;
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int l = lb[fl.offset + i];
        if (static_cast<std::size_t>(l) >= num_classes)
            throw FormatError(labels.string() + ": label " + std::to_string(l) + " at index " + std::to_string(i) +
                              " outside [0, " + std::to_string(num_classes) + ")");
        d.labels[i] = l;
    }
    return d;
}

void write_idx(const LabeledDataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
    data.validate();
    std::ofstream oi(images, std::ios::binary);
    std::ofstream ol(labels, std::ios::binary);
    if (!oi || !ol) throw IoError("cannot write IDX files " + images.string() + ", " + labels.string());
    const bool gray = data.channels() == 1;
    write_be32(oi, gray ? 0x803u : 0x804u);
    write_be32(oi, static_cast<std::uint32_t>(data.size()));
    if (!gray) write_be32(oi, static_cast<std::uint32_t>(data.channels()));
    write_be32(oi, static_cast<std::uint32_t>(data.height()));
    write_be32(oi, static_cast<std::uint32_t>(data.width()));
    std::vector<char> bytes;
    bytes.reserve(data.images.size());
    for (float v : data.images.values())
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
    oi.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    write_be32(ol, 0x801u);
    write_be32(ol, static_cast<std::uint32_t>(data.size()));
    for (int l : data.labels) ol.put(static_cast<char>(l));
    if (!oi || !ol) throw IoError("short write to IDX files");
}

LabeledDataset synth_shapes(const SynthSpec& spec) {
    if (spec.num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (spec.per_class == 0) throw ConfigError("synthetic data with per_class = 0 leaves every class empty");
    if (spec.size < 4) throw ConfigError("synthetic image size must be at least 4");
    if (spec.noise < 0 || spec.nuisance < 0 || spec.jitter < 0) throw ConfigError("synthetic noise levels must be >= 0");

    const std::size_t k = spec.num_classes;
    const std::size_t s = spec.size;
    const double pi = std::numbers::pi;
    // Class c: orientation from a ring of k / 2 angles in [0, pi/2], two
    // frequencies per angle so that horizontal flips keep classes distinct.
    const std::size_t n_orient = (k + 1) / 2;
    LabeledDataset d;
    d.num_classes = k;
    d.images = Tensor<float>(Shape{k * spec.per_class, 1, s, s});
    d.labels.resize(k * spec.per_class);
    float* px = d.images.data();
    for (std::size_t c = 0; c < k; ++c) {
        const double theta = n_orient > 1 ? (pi / 2) * static_cast<double>(c % n_orient) / (n_orient - 1) : 0.0;
        const double cycles = (c / n_orient) % 2 == 0 ? 2.5 : 6.0;
        const double phase0 = 2 * pi * static_cast<double>(c) / static_cast<double>(k);
        const double cx = std::cos(theta), cy = std::sin(theta);
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            Engine rng = keyed_engine({spec.seed, 0x73796eULL, c, i});
            const double phase = phase0 + 2 * pi * spec.jitter * (2 * uniform01(rng) - 1);
            const double amp = 0.25 * (1 - 0.8 * spec.nuisance * uniform01(rng));
            const double bright = 0.5 + 0.25 * spec.nuisance * (2 * uniform01(rng) - 1);
            const double ramp = 0.2 * spec.nuisance * uniform01(rng);
            const double ramp_dir = 2 * pi * uniform01(rng);
            const double freq = cycles * (1 + 0.6 * spec.nuisance * uniform01(rng));
            const double rx = ramp * std::cos(ramp_dir), ry = ramp * std::sin(ramp_dir);
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x) {
                    const double fx = static_cast<double>(x) / static_cast<double>(s);
                    const double fy = static_cast<double>(y) / static_cast<double>(s);
                    const double u = fx * cx + fy * cy;
                    const double v = bright + rx * (fx - 0.5) + ry * (fy - 0.5) +
                                     amp * std::sin(2 * pi * freq * (u - 0.5) + phase) + spec.noise * normal(rng);
                    *px++ = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            d.labels[c * spec.per_class + i] = static_cast<int>(c);
        }
    }
    return d;
}

void validate_augment(const AugmentSpec& spec, std::size_t height, std::size_t width) {
    if (!(spec.crop_min > 0 && spec.crop_min <= spec.crop_max && spec.crop_max <= 1))
        throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
    if (!(spec.flip_prob >= 0 && spec.flip_prob <= 1)) throw ConfigError("flip_prob outside [0, 1]");
    if (!(spec.brightness >= 0 && spec.brightness < 1)) throw ConfigError("brightness jitter outside [0, 1)");
    if (!(spec.contrast >= 0 && spec.contrast < 1)) throw ConfigError("contrast jitter outside [0, 1)");
    if (spec.out_size == 0) throw ConfigError("augmentation output size must be positive");
    const double min_area = spec.crop_min * static_cast<double>(height * width);
    if (std::sqrt(min_area * 3.0 / 4.0) < 1.0)
        throw ConfigError("smallest crop of a " + std::to_string(height) + "x" + std::to_string(width) +
                          " image is below one pixel");
}

namespace {

struct CropBox {
    double x0, y0, w, h;
};

CropBox draw_crop(std::size_t height, std::size_t width, const AugmentSpec& spec, Engine& rng) {
    const double hh = static_cast<double>(height), ww = static_cast<double>(width);
    const double area = hh * ww;
    const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * uniform(rng, spec.crop_min, spec.crop_max);
        const double ratio = std::exp(uniform(rng, log_lo, log_hi));
        const double w = std::sqrt(target * ratio);
        const double h = std::sqrt(target / ratio);
        if (w <= ww && h <= hh && w >= 1 && h >= 1)
            return {uniform(rng, 0.0, ww - w), uniform(rng, 0.0, hh - h), w, h};
    }
    return {0, 0, ww, hh};
}

}  // namespace

Tensor<float> augment_view(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width,
                           const AugmentSpec& spec, Engine& rng) {
    validate_augment(spec, height, width);
    if (image.size() != channels * height * width) throw DimensionError("image size does not match C x H x W");
    const CropBox box = draw_crop(height, width, spec, rng);
    const bool flip = uniform01(rng) < spec.flip_prob;
    const double bright = spec.brightness > 0 ? uniform(rng, 1 - spec.brightness, 1 + spec.brightness) : 1.0;
    const double contrast = spec.contrast > 0 ? uniform(rng, 1 - spec.contrast, 1 + spec.contrast) : 1.0;

    const std::size_t s = spec.out_size;
    Tensor<float> out(Shape{channels, s, s});
    const double sy = box.h / static_cast<double>(s), sx = box.w / static_cast<double>(s);
    for (std::size_t c = 0; c < channels; ++c) {
        const float* src = image.data() + c * height * width;
        float* dst = out.data() + c * s * s;
        for (std::size_t i = 0; i < s; ++i) {
            const double fy = std::clamp(box.y0 + (static_cast<double>(i) + 0.5) * sy - 0.5, 0.0, double(height - 1));
            const auto y0 = static_cast<std::size_t>(fy);
            const std::size_t y1 = std::min(y0 + 1, height - 1);
            const double ay = fy - static_cast<double>(y0);
            for (std::size_t j = 0; j < s; ++j) {
                const double fx = std::clamp(box.x0 + (static_cast<double>(j) + 0.5) * sx - 0.5, 0.0, double(width - 1));
                const auto x0 = static_cast<std::size_t>(fx);
                const std::size_t x1 = std::min(x0 + 1, width - 1);
                const double ax = fx - static_cast<double>(x0);
                const double top = (1 - ax) * src[y0 * width + x0] + ax * src[y0 * width + x1];
                const double bot = (1 - ax) * src[y1 * width + x0] + ax * src[y1 * width + x1];
                dst[i * s + (flip ? s - 1 - j : j)] = static_cast<float>((1 - ay) * top + ay * bot);
            }
        }
    }
    if (bright != 1.0 || contrast != 1.0) {
        for (std::size_t c = 0; c < channels; ++c) {
            std::span<float> plane(out.data() + c * s * s, s * s);
            double mean = 0;
            for (float v : plane) mean += v * bright;
            mean /= static_cast<double>(plane.size());
            for (float& v : plane) v = static_cast<float>(std::clamp((v * bright - mean) * contrast + mean, 0.0, 1.0));
        }
    }
    return out;
}

std::pair<Tensor<float>, Tensor<float>> augment_pair(const LabeledDataset& data, std::size_t index,
                                                     const AugmentSpec& spec, std::uint64_t seed,
                                                     std::uint64_t epoch) {
    Engine rng = keyed_engine({seed, 0x617567ULL, epoch, index});
    auto img = data.image(index);
    auto v = augment_view(img, data.channels(), data.height(), data.width(), spec, rng);
    auto v2 = augment_view(img, data.channels(), data.height(), data.width(), spec, rng);
    return {std::move(v), std::move(v2)};
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> augment_batch(const LabeledDataset& data, std::span<const std::size_t> indices,
                                              const AugmentSpec& spec, std::uint64_t seed, std::uint64_t epoch) {
    const std::size_t s = spec.out_size;
    const std::size_t n = data.channels() * s * s;
    Tensor<T> a(Shape{indices.size(), data.channels(), s, s});
    Tensor<T> b(Shape{indices.size(), data.channels(), s, s});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        auto [v, v2] = augment_pair(data, indices[r], spec, seed, epoch);
        std::copy(v.values().begin(), v.values().end(), a.data() + r * n);
        std::copy(v2.values().begin(), v2.values().end(), b.data() + r * n);
    }
    return {std::move(a), std::move(b)};
}

template <class T>
Tensor<T> augment_single_batch(const LabeledDataset& data, std::span<const std::size_t> indices,
                               const AugmentSpec& spec, std::uint64_t seed, std::uint64_t epoch) {
    const std::size_t s = spec.out_size;
    const std::size_t n = data.channels() * s * s;
    Tensor<T> a(Shape{indices.size(), data.channels(), s, s});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        Engine rng = keyed_engine({seed, 0x6f6e65ULL, epoch, indices[r]});
        auto v = augment_view(data.image(indices[r]), data.channels(), data.height(), data.width(), spec, rng);
        std::copy(v.values().begin(), v.values().end(), a.data() + r * n);
    }
    return a;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Engine rng = keyed_engine({seed, 0x706572ULL, epoch});
    shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

SemiSplit split_semi_indices(const LabeledDataset& data, double fraction, std::uint64_t seed) {
    if (!(fraction > 0 && fraction <= 1)) throw ConfigError("semi-supervised fraction must lie in (0, 1]");
    data.validate();
    std::vector<std::vector<std::size_t>> by_class(data.num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    std::vector<char> chosen(data.size(), 0);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(members.size()) - 1e-9));
        if (take == 0) throw ConfigError("semi-supervised split leaves class " + std::to_string(c) + " without samples");
        Engine rng = keyed_engine({seed, 0x73656dULL, c});
        shuffle(members.begin(), members.end(), rng);
        for (std::size_t i = 0; i < take; ++i) chosen[members[i]] = 1;
    }
    SemiSplit out;
    for (std::size_t i = 0; i < data.size(); ++i) (chosen[i] ? out.labeled : out.rest).push_back(i);
    return out;
}

std::pair<LabeledDataset, LabeledDataset> split_semi(const LabeledDataset& data, double fraction, std::uint64_t seed) {
    const SemiSplit s = split_semi_indices(data, fraction, seed);
    LabeledDataset rest;
    if (!s.rest.empty()) rest = data.subset(s.rest);
    return {data.subset(s.labeled), std::move(rest)};
}

template Tensor<float> LabeledDataset::batch(std::span<const std::size_t>) const;
template Tensor<double> LabeledDataset::batch(std::span<const std::size_t>) const;
template std::pair<Tensor<float>, Tensor<float>> augment_batch(const LabeledDataset&, std::span<const std::size_t>,
                                                               const AugmentSpec&, std::uint64_t, std::uint64_t);
template std::pair<Tensor<double>, Tensor<double>> augment_batch(const LabeledDataset&, std::span<const std::size_t>,
                                                                 const AugmentSpec&, std::uint64_t, std::uint64_t);
template Tensor<float> augment_single_batch(const LabeledDataset&, std::span<const std::size_t>, const AugmentSpec&,
                                            std::uint64_t, std::uint64_t);
template Tensor<double> augment_single_batch(const LabeledDataset&, std::span<const std::size_t>, const AugmentSpec&,
                                             std::uint64_t, std::uint64_t);

}  // namespace dspnet
