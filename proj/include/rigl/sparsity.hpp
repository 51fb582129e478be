#pragma once

// Layer-wise sparsity distributions (uniform / Erdos-Renyi / Erdos-Renyi-Kernel),
// boolean mask construction, and mask checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigl/arch.hpp"
#include "rigl/errors.hpp"
#include "rigl/tensor.hpp"

namespace rigl {

enum class Distribution { uniform, er, erk };
enum class Granularity { weight, channel };

inline const char* to_string(Distribution d) {
    switch (d) {
        case Distribution::uniform: return "uniform";
        case Distribution::er: return "er";
        case Distribution::erk: return "erk";
    }
    return "?";
}

inline Distribution distribution_from_string(const std::string& s) {
    if (s == "uniform" || s == "random") return Distribution::uniform;
    if (s == "er") return Distribution::er;
    if (s == "erk") return Distribution::erk;
    throw InputError("unknown sparsity distribution '" + s + "' (expected uniform, er or erk)");
}

struct SparsityConfig {
    double sparsity = 0.0;  // global target S in [0, 1)
    Distribution distribution = Distribution::erk;
    // Only consulted by the uniform distribution.
    bool keep_first_layer_dense = true;
    // channel: conv layers masked per output channel, linear layers dense.
    Granularity granularity = Granularity::weight;
};

// "random" is uniform without the dense first layer, so every layer gets
// exactly S.
inline void set_distribution(SparsityConfig& cfg, const std::string& name) {
    cfg.distribution = distribution_from_string(name);
    if (name == "random") cfg.keep_first_layer_dense = false;
}

// Density scale of one layer before the global epsilon:
// ER:  (C_in + C_out) / (C_in * C_out)
// ERK: (C_in + C_out + h + w) / (C_in * C_out * h * w) for conv; ER for linear.
inline double erk_factor(const LayerDecl& l, Distribution d) {
    const auto cin = static_cast<double>(l.in);
    const auto cout = static_cast<double>(l.out);
    if (d == Distribution::erk && l.kind == LayerKind::conv2d) {
        const auto kh = static_cast<double>(l.kernel_h);
        const auto kw = static_cast<double>(l.kernel_w);
        return (cin + cout + kh + kw) / (cin * cout * kh * kw);
    }
    return (cin + cout) / (cin * cout);
}

// Layers that the distribution must keep fully dense.
inline std::vector<bool> dense_exempt_layers(const ArchSpec& spec, const SparsityConfig& cfg) {
    std::vector<bool> exempt;
    for (auto i : spec.maskable_indices()) {
        const auto& l = spec.layers[i];
        bool e = false;
        if (cfg.distribution == Distribution::uniform && cfg.keep_first_layer_dense && l.first_layer) e = true;
        if (cfg.granularity == Granularity::channel && l.kind == LayerKind::linear) e = true;
        exempt.push_back(e);
    }
    return exempt;
}

// Per-maskable-layer sparsities s_l whose parameter-weighted mean is S.
// ER/ERK solve density d_l = min(1, eps * factor_l) for eps by bisection;
// layers that would exceed density 1 are capped there, which is the overflow
// handling (the mapping eps -> sum_l min(1, eps*factor_l)*N_l is monotone).
inline std::vector<double> solve_distribution(const ArchSpec& spec, const SparsityConfig& cfg) {
    const double S = cfg.sparsity;
    if (!(S >= 0.0 && S < 1.0)) throw InputError("target sparsity must be in [0, 1), got " + std::to_string(S));
    const auto idx = spec.maskable_indices();
    const auto exempt = dense_exempt_layers(spec, cfg);
    std::vector<double> sparsity(idx.size(), 0.0);
    if (S == 0.0) return sparsity;

    double n_total = 0.0, n_fixed = 0.0;
    for (std::size_t m = 0; m < idx.size(); ++m) {
        const auto n = static_cast<double>(spec.layers[idx[m]].parameter_count());
        n_total += n;
        if (exempt[m]) n_fixed += n;
    }
    const double budget = (1.0 - S) * n_total;
    const double free_budget = budget - n_fixed;
    const double n_free = n_total - n_fixed;
    if (free_budget <= 0.0 || n_free <= 0.0) {
        const double min_s = 1.0 - n_fixed / n_total;
        throw InputError("sparsity " + std::to_string(S) + " is unachievable with dense-exempt layers; " +
                         "maximum achievable sparsity is " + std::to_string(min_s));
    }

    if (cfg.distribution == Distribution::uniform) {
        const double s_rest = 1.0 - free_budget / n_free;
        for (std::size_t m = 0; m < idx.size(); ++m) sparsity[m] = exempt[m] ? 0.0 : s_rest;
        return sparsity;
    }

    std::vector<double> factor(idx.size(), 0.0);
    double max_needed = 0.0;  // eps at which every free layer is dense
    for (std::size_t m = 0; m < idx.size(); ++m) {
        if (exempt[m]) continue;
        factor[m] = erk_factor(spec.layers[idx[m]], cfg.distribution);
        max_needed = std::max(max_needed, 1.0 / factor[m]);
    }
    auto active = [&](double eps) {
        double total = 0.0;
        for (std::size_t m = 0; m < idx.size(); ++m)
            if (!exempt[m])
                total += std::min(1.0, eps * factor[m]) * static_cast<double>(spec.layers[idx[m]].parameter_count());
        return total;
    };
    double lo = 0.0, hi = max_needed;
    while (hi - lo > 1e-10 * hi) {
        const double mid = 0.5 * (lo + hi);
        if (active(mid) < free_budget) lo = mid;
        else hi = mid;
    }
    const double eps = 0.5 * (lo + hi);
    for (std::size_t m = 0; m < idx.size(); ++m)
        sparsity[m] = exempt[m] ? 0.0 : 1.0 - std::min(1.0, eps * factor[m]);
    return sparsity;
}

// ---- masks -----------------------------------------------------------------

struct LayerMask {
    std::string name;
    Shape shape;  // weight shape, [C_out, C_in, h, w] or [out, in]
    std::vector<std::uint8_t> active;
    std::size_t active_count = 0;

    LayerMask() = default;
    LayerMask(std::string n, Shape s, bool all_active)
        : name(std::move(n)), shape(std::move(s)), active(shape_size(shape), all_active ? 1 : 0),
          active_count(all_active ? active.size() : 0) {}

    std::size_t size() const { return active.size(); }
    bool is_active(std::size_t i) const { return active[i] != 0; }
    double density() const { return size() ? static_cast<double>(active_count) / static_cast<double>(size()) : 1.0; }
    double sparsity() const { return 1.0 - density(); }
    bool is_conv() const { return shape.size() == 4; }
    std::size_t channels() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t channel_size() const { return channels() ? size() / channels() : 0; }

    void activate(std::size_t i) {
        if (!active[i]) {
            active[i] = 1;
            ++active_count;
        }
    }
    void deactivate(std::size_t i) {
        if (active[i]) {
            active[i] = 0;
            --active_count;
        }
    }
    std::size_t recount() const {
        return static_cast<std::size_t>(std::count(active.begin(), active.end(), std::uint8_t{1}));
    }

    std::vector<std::size_t> active_indices() const {
        std::vector<std::size_t> out;
        out.reserve(active_count);
        for (std::size_t i = 0; i < active.size(); ++i)
            if (active[i]) out.push_back(i);
        return out;
    }
    std::vector<std::size_t> inactive_indices() const {
        std::vector<std::size_t> out;
        out.reserve(size() - active_count);
        for (std::size_t i = 0; i < active.size(); ++i)
            if (!active[i]) out.push_back(i);
        return out;
    }

    bool operator==(const LayerMask&) const = default;
};

struct MaskSet {
    std::vector<LayerMask> layers;

    std::size_t size() const { return layers.size(); }
    LayerMask& operator[](std::size_t m) { return layers[m]; }
    const LayerMask& operator[](std::size_t m) const { return layers[m]; }

    std::size_t total_active() const {
        std::size_t k = 0;
        for (const auto& l : layers) k += l.active_count;
        return k;
    }
    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.size();
        return n;
    }
    // Recomputed from the boolean arrays, not from cached counts.
    double global_sparsity() const {
        std::size_t active = 0;
        for (const auto& l : layers) active += l.recount();
        const auto n = total_size();
        return n ? 1.0 - static_cast<double>(active) / static_cast<double>(n) : 0.0;
    }
    std::vector<double> densities() const {
        std::vector<double> d;
        for (const auto& l : layers) d.push_back(l.density());
        return d;
    }
    bool counts_consistent() const {
        return std::all_of(layers.begin(), layers.end(), [](const LayerMask& l) { return l.recount() == l.active_count; });
    }

    bool operator==(const MaskSet&) const = default;
};

// All-active masks for every maskable layer of spec.
inline MaskSet dense_masks(const ArchSpec& spec) {
    MaskSet set;
    for (auto i : spec.maskable_indices()) set.layers.emplace_back(spec.layers[i].name, spec.layers[i].weight_shape(), true);
    return set;
}

// round-half-up, at least one, at most n
inline std::size_t active_target(double density, std::size_t n) {
    const auto k = static_cast<std::size_t>(std::floor(density * static_cast<double>(n) + 0.5));
    return std::clamp<std::size_t>(k, 1, n);
}

// k distinct values from [0, n), uniformly without replacement (partial Fisher-Yates).
template <class Rng>
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    return pool;
}

// Random masks with k_l = round((1 - s_l) * N_l) active entries per layer.
// Under channel granularity conv layers activate whole output channels.
inline MaskSet init_masks(const ArchSpec& spec, std::span<const double> sparsities, std::uint64_t seed,
                          Granularity granularity = Granularity::weight) {
    const auto idx = spec.maskable_indices();
    if (sparsities.size() != idx.size())
        throw InputError("expected " + std::to_string(idx.size()) + " layer sparsities, got " +
                         std::to_string(sparsities.size()));
    std::mt19937_64 rng(seed);
    MaskSet set;
    for (std::size_t m = 0; m < idx.size(); ++m) {
        const auto& l = spec.layers[idx[m]];
        const double s = sparsities[m];
        if (!(s >= 0.0 && s <= 1.0)) throw InputError("layer sparsity out of [0, 1] for " + l.name);
        LayerMask mask(l.name, l.weight_shape(), false);
        if (granularity == Granularity::channel && l.kind == LayerKind::conv2d) {
            const std::size_t k = active_target(1.0 - s, mask.channels());
            for (auto c : sample_without_replacement(mask.channels(), k, rng))
                for (std::size_t j = 0; j < mask.channel_size(); ++j) mask.activate(c * mask.channel_size() + j);
        } else if (s == 0.0) {
            for (std::size_t i = 0; i < mask.size(); ++i) mask.activate(i);
        } else {
            const std::size_t k = active_target(1.0 - s, mask.size());
            for (auto i : sample_without_replacement(mask.size(), k, rng)) mask.activate(i);
        }
        set.layers.push_back(std::move(mask));
    }
    return set;
}

inline void apply_mask(const LayerMask& mask, std::span<double> values) {
    if (values.size() != mask.size())
        throw InputError("mask '" + mask.name + "' has " + std::to_string(mask.size()) + " entries, parameter has " +
                         std::to_string(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!mask.active[i]) values[i] = 0.0;
}

inline void apply_mask(const MaskSet& masks, std::vector<Tensor>& weights) {
    if (masks.size() != weights.size())
        throw InputError("mask set has " + std::to_string(masks.size()) + " layers, model has " +
                         std::to_string(weights.size()));
    for (std::size_t m = 0; m < masks.size(); ++m) {
        if (masks[m].shape != weights[m].shape)
            throw InputError("mask '" + masks[m].name + "' shape " + shape_str(masks[m].shape) +
                             " does not match weight shape " + shape_str(weights[m].shape));
        apply_mask(masks[m], weights[m].values);
    }
}

// Throws InputError unless the masks line up with spec's maskable layers.
inline void check_masks_match(const MaskSet& masks, const ArchSpec& spec) {
    const auto idx = spec.maskable_indices();
    if (masks.size() != idx.size())
        throw InputError("mask checkpoint has " + std::to_string(masks.size()) + " layers, architecture " + spec.name +
                         " has " + std::to_string(idx.size()));
    for (std::size_t m = 0; m < idx.size(); ++m) {
        const auto& l = spec.layers[idx[m]];
        if (masks[m].shape != l.weight_shape())
            throw InputError("mask layer '" + masks[m].name + "' shape " + shape_str(masks[m].shape) +
                             " does not match " + l.name + " " + shape_str(l.weight_shape()));
    }
}

// ---- checkpoint JSON: per layer name, shape, sorted active flat indices -----

inline void to_json(nlohmann::json& j, const LayerMask& m) {
    j = nlohmann::json{{"name", m.name}, {"shape", m.shape}, {"active", m.active_indices()}};
}

inline void from_json(const nlohmann::json& j, LayerMask& m) {
    m = LayerMask(j.at("name").get<std::string>(), j.at("shape").get<Shape>(), false);
    for (const auto& v : j.at("active")) {
        const auto i = v.get<std::size_t>();
        if (i >= m.size()) throw InputError("mask '" + m.name + "': active index " + std::to_string(i) + " out of range");
        m.activate(i);
    }
}

inline void to_json(nlohmann::json& j, const MaskSet& s) { j = nlohmann::json{{"layers", s.layers}}; }
inline void from_json(const nlohmann::json& j, MaskSet& s) { s.layers = j.at("layers").get<std::vector<LayerMask>>(); }

inline void save_masks(const MaskSet& masks, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    os << nlohmann::json(masks).dump() << '\n';
}

inline MaskSet load_masks(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot read " + path);
    try {
        return nlohmann::json::parse(is).get<MaskSet>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
}

}  // namespace rigl
