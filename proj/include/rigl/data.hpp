#pragma once

// Dataset ingestion (MNIST IDX, CIFAR binary), deterministic splits,
// per-channel normalization, flip/crop augmentation and batching.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rigl/errors.hpp"
#include "rigl/tensor.hpp"

namespace rigl {

struct Dataset {
    std::vector<std::uint8_t> images;  // [n, C, H, W]
    std::vector<std::size_t> labels;
    Shape sample_shape;  // [C, H, W]
    std::size_t class_count = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_size() const { return shape_size(sample_shape); }
    std::span<const std::uint8_t> image(std::size_t i) const {
        return {images.data() + i * sample_size(), sample_size()};
    }

    void validate() const {
        if (images.size() != labels.size() * sample_size())
            throw InputError("dataset has " + std::to_string(images.size()) + " pixel bytes for " +
                             std::to_string(labels.size()) + " samples of " + shape_str(sample_shape));
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] >= class_count)
                throw InputError("label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                                 " exceeds class count " + std::to_string(class_count));
    }

    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset d;
        d.sample_shape = sample_shape;
        d.class_count = class_count;
        d.labels.reserve(indices.size());
        d.images.reserve(indices.size() * sample_size());
        for (auto i : indices) {
            if (i >= size()) throw InputError("sample index " + std::to_string(i) + " out of range");
            auto img = image(i);
            d.images.insert(d.images.end(), img.begin(), img.end());
            d.labels.push_back(labels[i]);
        }
        return d;
    }

    void append(const Dataset& other) {
        if (labels.empty() && images.empty()) {
            sample_shape = other.sample_shape;
        } else if (other.sample_shape != sample_shape) {
            throw InputError("cannot concatenate " + shape_str(other.sample_shape) + " samples onto " +
                             shape_str(sample_shape));
        }
        class_count = std::max(class_count, other.class_count);
        images.insert(images.end(), other.images.begin(), other.images.end());
        labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    }
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& what) {
    if (off + 4 > b.size()) throw FormatError(what + ": truncated header", off);
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

}  // namespace detail

// IDX images: magic 0x00000803, count, rows, cols, then count*rows*cols bytes.
inline Dataset parse_idx_images(const std::vector<std::uint8_t>& b, const std::string& what = "idx images") {
    const auto magic = detail::read_be32(b, 0, what);
    if (magic != 0x00000803u) throw FormatError(what + ": bad magic number for an image file", 0);
    const std::size_t n = detail::read_be32(b, 4, what);
    const std::size_t rows = detail::read_be32(b, 8, what);
    const std::size_t cols = detail::read_be32(b, 12, what);
    const std::size_t need = 16 + n * rows * cols;
    if (b.size() < need) throw FormatError(what + ": truncated, expected " + std::to_string(need) + " bytes", b.size());
    if (b.size() > need) throw FormatError(what + ": trailing bytes after the last image", need);
    Dataset d;
    d.sample_shape = {1, rows, cols};
    d.images.assign(b.begin() + 16, b.end());
    d.labels.assign(n, 0);
    return d;
}

// IDX labels: magic 0x00000801, count, then count bytes.
inline std::vector<std::size_t> parse_idx_labels(const std::vector<std::uint8_t>& b,
                                                 const std::string& what = "idx labels") {
    const auto magic = detail::read_be32(b, 0, what);
    if (magic != 0x00000801u) throw FormatError(what + ": bad magic number for a label file", 0);
    const std::size_t n = detail::read_be32(b, 4, what);
    if (b.size() < 8 + n) throw FormatError(what + ": truncated, expected " + std::to_string(8 + n) + " bytes", b.size());
    if (b.size() > 8 + n) throw FormatError(what + ": trailing bytes after the last label", 8 + n);
    return {b.begin() + 8, b.end()};
}

inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t class_count = 10) {
    Dataset d = parse_idx_images(detail::read_file(images), images.string());
    d.labels = parse_idx_labels(detail::read_file(labels), labels.string());
    if (d.labels.size() * d.sample_size() != d.images.size())
        throw InputError(images.string() + " and " + labels.string() + " hold different sample counts");
    d.class_count = class_count;
    d.validate();
    return d;
}

// Loads every image/label IDX pair found in dir, in a fixed order:
// train-*, t10k-*, then images-idx3-ubyte / labels-idx1-ubyte.
inline Dataset load_mnist_dir(const std::filesystem::path& dir) {
    const std::pair<const char*, const char*> pairs[] = {
        {"train-images-idx3-ubyte", "train-labels-idx1-ubyte"},
        {"t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"},
        {"images-idx3-ubyte", "labels-idx1-ubyte"},
    };
    Dataset all;
    bool found = false;
    for (const auto& [img, lab] : pairs) {
        if (!std::filesystem::exists(dir / img)) continue;
        all.append(load_idx(dir / img, dir / lab));
        found = true;
    }
    if (!found) throw InputError("no IDX image files in " + dir.string());
    return all;
}

enum class CifarVariant { cifar10, cifar100_fine, cifar100_coarse };

// CIFAR binary: records of [label][3072 pixels] (CIFAR-10) or
// [coarse][fine][3072 pixels] (CIFAR-100).
inline Dataset parse_cifar_binary(const std::vector<std::uint8_t>& b, CifarVariant v,
                                  const std::string& what = "cifar batch") {
    const std::size_t label_bytes = v == CifarVariant::cifar10 ? 1 : 2;
    const std::size_t pixels = 3 * 32 * 32;
    const std::size_t record = label_bytes + pixels;
    if (b.size() % record != 0) {
        const std::size_t last = b.size() / record * record;
        throw FormatError(what + ": truncated record (" + std::to_string(b.size() - last) + " of " +
                              std::to_string(record) + " bytes)",
                          last);
    }
    const std::size_t n = b.size() / record;
    Dataset d;
    d.sample_shape = {3, 32, 32};
    d.class_count = v == CifarVariant::cifar10 ? 10 : (v == CifarVariant::cifar100_fine ? 100 : 20);
    d.images.reserve(n * pixels);
    d.labels.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t off = r * record;
        const std::size_t label = v == CifarVariant::cifar100_fine ? b[off + 1] : b[off];
        if (label >= d.class_count)
            throw FormatError(what + ": label " + std::to_string(label) + " out of range", off);
        d.labels.push_back(label);
        d.images.insert(d.images.end(), b.begin() + static_cast<std::ptrdiff_t>(off + label_bytes),
                        b.begin() + static_cast<std::ptrdiff_t>(off + record));
    }
    return d;
}

inline Dataset load_cifar_binary(const std::filesystem::path& path, CifarVariant v = CifarVariant::cifar10) {
    return parse_cifar_binary(detail::read_file(path), v, path.string());
}

inline Dataset load_cifar_binary(const std::filesystem::path& path, bool coarse) {
    return load_cifar_binary(path, coarse ? CifarVariant::cifar100_coarse : CifarVariant::cifar100_fine);
}

// CIFAR-10: data_batch_1..5.bin then test_batch.bin.
// CIFAR-100: train.bin then test.bin.
inline Dataset load_cifar_dir(const std::filesystem::path& dir, CifarVariant v = CifarVariant::cifar10) {
    std::vector<std::string> files;
    if (v == CifarVariant::cifar10) {
        for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
        files.push_back("test_batch.bin");
    } else {
        files = {"train.bin", "test.bin"};
    }
    Dataset all;
    bool found = false;
    for (const auto& f : files) {
        if (!std::filesystem::exists(dir / f)) continue;
        all.append(load_cifar_binary(dir / f, v));
        found = true;
    }
    if (!found) throw InputError("no CIFAR batch files in " + dir.string());
    return all;
}

// Class-prototype images plus per-sample noise; a stand-in when no real data
// is available and for fast tests.
inline Dataset make_synthetic(std::size_t n, Shape sample_shape, std::size_t classes, std::uint64_t seed,
                              double noise = 40.0) {
    if (classes == 0) throw InputError("synthetic dataset needs at least one class");
    Dataset d;
    d.sample_shape = std::move(sample_shape);
    d.class_count = classes;
    const std::size_t sz = d.sample_size();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> proto_dist(0.0, 255.0);
    std::normal_distribution<double> noise_dist(0.0, noise);
    std::vector<double> protos(classes * sz);
    for (auto& p : protos) p = proto_dist(rng);
    d.images.resize(n * sz);
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        d.labels[i] = c;
        for (std::size_t k = 0; k < sz; ++k) {
            const double v = std::round(protos[c * sz + k] + noise_dist(rng));
            d.images[i * sz + k] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    }
    return d;
}

struct SplitSpec {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
    std::uint64_t seed = 0;
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

// A seeded permutation carved into consecutive train/val/test blocks. When the
// sizes sum to less than the dataset the remainder is left unused.
inline SplitIndices split_indices(std::size_t n, const SplitSpec& s) {
    if (s.train + s.val + s.test > n)
        throw InputError("split " + std::to_string(s.train) + "/" + std::to_string(s.val) + "/" +
                         std::to_string(s.test) + " exceeds " + std::to_string(n) + " samples");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(s.seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    SplitIndices out;
    auto it = perm.begin();
    out.train.assign(it, it + static_cast<std::ptrdiff_t>(s.train));
    it += static_cast<std::ptrdiff_t>(s.train);
    out.val.assign(it, it + static_cast<std::ptrdiff_t>(s.val));
    it += static_cast<std::ptrdiff_t>(s.val);
    out.test.assign(it, it + static_cast<std::ptrdiff_t>(s.test));
    return out;
}

struct Splits {
    Dataset train, val, test;
};

inline Splits split(const Dataset& d, const SplitSpec& s) {
    const auto idx = split_indices(d.size(), s);
    return {d.subset(idx.train), d.subset(idx.val), d.subset(idx.test)};
}

// Per-channel mean/std in pixel units.
struct Normalizer {
    std::vector<double> mean, stddev;

    static Normalizer fit(const Dataset& d) {
        if (d.sample_shape.empty()) throw InputError("cannot normalize a dataset without a sample shape");
        const std::size_t channels = d.sample_shape[0];
        const std::size_t plane = d.sample_size() / channels;
        Normalizer n;
        n.mean.assign(channels, 0.0);
        n.stddev.assign(channels, 1.0);
        if (d.size() == 0) return n;
        const double count = static_cast<double>(d.size() * plane);
        for (std::size_t c = 0; c < channels; ++c) {
            double sum = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i)
                for (std::size_t k = 0; k < plane; ++k) sum += d.images[i * d.sample_size() + c * plane + k];
            const double m = sum / count;
            double var = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i)
                for (std::size_t k = 0; k < plane; ++k) {
                    const double x = d.images[i * d.sample_size() + c * plane + k] - m;
                    var += x * x;
                }
            n.mean[c] = m;
            const double sd = std::sqrt(var / count);
            n.stddev[c] = sd > 0.0 ? sd : 1.0;
        }
        return n;
    }

    double apply(std::size_t channel, double pixel) const { return (pixel - mean[channel]) / stddev[channel]; }
};

// Raw pixel batch kept as bytes so augmentation is exact.
struct Batch {
    std::vector<std::uint8_t> images;  // [B, C, H, W]
    std::vector<std::size_t> labels;
    Shape sample_shape;

    std::size_t size() const { return labels.size(); }
};

inline Batch make_batch(const Dataset& d, std::span<const std::size_t> indices) {
    Batch b;
    b.sample_shape = d.sample_shape;
    b.labels.reserve(indices.size());
    b.images.reserve(indices.size() * d.sample_size());
    for (auto i : indices) {
        auto img = d.image(i);
        b.images.insert(b.images.end(), img.begin(), img.end());
        b.labels.push_back(d.labels[i]);
    }
    return b;
}

// Mirror one [C, H, W] image left-right in place.
inline void flip_horizontal(std::span<std::uint8_t> img, const Shape& shape) {
    const std::size_t c = shape[0], h = shape[1], w = shape[2];
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y) {
            auto row = img.begin() + static_cast<std::ptrdiff_t>((ch * h + y) * w);
            std::reverse(row, row + static_cast<std::ptrdiff_t>(w));
        }
}

// Zero-pad by `pad` on every side and take the H x W window at (oy, ox) of
// the padded image; oy, ox in [0, 2*pad].
inline void pad_crop(std::span<std::uint8_t> img, const Shape& shape, std::size_t pad, std::size_t oy,
                     std::size_t ox) {
    if (oy > 2 * pad || ox > 2 * pad) throw InputError("crop offset outside the padded image");
    const std::size_t c = shape[0], h = shape[1], w = shape[2];
    std::vector<std::uint8_t> src(img.begin(), img.end());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                // Padded coordinate (y + oy, x + ox) maps to source (y + oy - pad, x + ox - pad).
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(pad);
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + ox) - static_cast<std::ptrdiff_t>(pad);
                const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                                    sx < static_cast<std::ptrdiff_t>(w);
                img[(ch * h + y) * w + x] =
                    inside ? src[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] : 0;
            }
}

struct AugmentConfig {
    bool enabled = true;
    double flip_probability = 0.5;
    std::size_t pad = 4;
};

// Per image: flip with the configured probability, then a random crop of the
// zero-padded image back to the original size.
template <class Rng>
void augment(Batch& batch, Rng& rng, const AugmentConfig& cfg = {}) {
    if (!cfg.enabled) return;
    const std::size_t sz = shape_size(batch.sample_shape);
    std::bernoulli_distribution flip(cfg.flip_probability);
    std::uniform_int_distribution<std::size_t> offset(0, 2 * cfg.pad);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::span<std::uint8_t> img(batch.images.data() + i * sz, sz);
        if (flip(rng)) flip_horizontal(img, batch.sample_shape);
        if (cfg.pad > 0) {
            const std::size_t oy = offset(rng);
            const std::size_t ox = offset(rng);
            pad_crop(img, batch.sample_shape, cfg.pad, oy, ox);
        }
    }
}

// Normalized float tensor [B, C, H, W], or [B, C*H*W] when flatten is set.
inline Tensor to_tensor(const Batch& b, const Normalizer& norm, bool flatten = false) {
    const std::size_t sz = shape_size(b.sample_shape);
    const std::size_t channels = b.sample_shape[0];
    const std::size_t plane = sz / channels;
    Shape shape{b.size()};
    if (flatten) {
        shape.push_back(sz);
    } else {
        shape.insert(shape.end(), b.sample_shape.begin(), b.sample_shape.end());
    }
    Tensor t(shape);
    for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t k = 0; k < sz; ++k) t.values[i * sz + k] = norm.apply(k / plane, b.images[i * sz + k]);
    return t;
}

// Visiting order of epoch `epoch`; depends only on (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

}  // namespace rigl
