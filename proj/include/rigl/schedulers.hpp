#pragma once

// Mask-update algorithms. Every update drops first, then grows over the
// union of previously inactive and just-dropped positions; grown weights
// start at exactly zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rigl/errors.hpp"
#include "rigl/optim.hpp"
#include "rigl/sparsity.hpp"

namespace rigl {

enum class Method { dense, small_dense, static_sparse, set, rigl, snfs, rigl_sg, rigl_sm, pruning, rigl_struct };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::dense: return "dense";
        case Method::small_dense: return "small_dense";
        case Method::static_sparse: return "static";
        case Method::set: return "set";
        case Method::rigl: return "rigl";
        case Method::snfs: return "snfs";
        case Method::rigl_sg: return "rigl_sg";
        case Method::rigl_sm: return "rigl_sm";
        case Method::pruning: return "pruning";
        case Method::rigl_struct: return "rigl_struct";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    for (auto m : {Method::dense, Method::small_dense, Method::static_sparse, Method::set, Method::rigl, Method::snfs,
                   Method::rigl_sg, Method::rigl_sm, Method::pruning, Method::rigl_struct})
        if (s == to_string(m)) return m;
    if (s == "rigl-sg") return Method::rigl_sg;
    if (s == "rigl-sm") return Method::rigl_sm;
    if (s == "rigl-struct") return Method::rigl_struct;
    if (s == "small-dense") return Method::small_dense;
    throw InputError("unknown method '" + s + "'");
}

enum class Redistribution { none, sparse_grad, sparse_momentum };

inline const char* to_string(Redistribution r) {
    switch (r) {
        case Redistribution::none: return "none";
        case Redistribution::sparse_grad: return "sparse_grad";
        case Redistribution::sparse_momentum: return "sparse_momentum";
    }
    return "?";
}

inline Redistribution default_redistribution(Method m) {
    switch (m) {
        case Method::snfs:
        case Method::rigl_sm: return Redistribution::sparse_momentum;
        case Method::rigl_sg: return Redistribution::sparse_grad;
        default: return Redistribution::none;
    }
}

// Cubic schedule of the iterative-pruning baseline.
struct PruneSchedule {
    std::size_t t_start = 0;
    std::size_t t_stop = 0;
};

struct UpdatePolicy {
    Method method = Method::rigl;
    double alpha = 0.3;
    std::size_t delta_t = 100;
    std::size_t t_end = 0;
    Redistribution redistribution = Redistribution::none;
    PruneSchedule prune;
};

struct LayerUpdate {
    std::size_t layer = 0;
    std::vector<std::size_t> dropped;
    std::vector<std::size_t> grown;
    double density_pre = 0.0;
    double density_post = 0.0;
};

struct UpdateEvent {
    std::size_t step = 0;
    std::vector<LayerUpdate> layers;

    std::size_t total_dropped() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.dropped.size();
        return n;
    }
    std::size_t total_grown() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.grown.size();
        return n;
    }
};

// Mutable views of one maskable layer's tensors.
struct LayerTensors {
    std::span<double> weights;
    std::span<const double> grads;
    std::span<double> momentum;  // may be empty before the first optimizer step
};

// ---- schedules ---------------------------------------------------------------

// f(t) = alpha/2 * (1 + cos(pi t / T_end)); 0 once t > T_end.
inline double prune_fraction(std::size_t t, double alpha, std::size_t t_end) {
    if (t > t_end || t_end == 0) return 0.0;
    return alpha / 2.0 * (1.0 + std::cos(static_cast<double>(t) * std::numbers::pi / static_cast<double>(t_end)));
}

inline bool should_update(std::size_t t, std::size_t delta_t, std::size_t t_end) {
    return delta_t > 0 && t > 0 && t <= t_end && t % delta_t == 0;
}

// s(t) = s_final * (1 - (1 - (t - t_start)/(t_stop - t_start))^3), clamped to the window.
inline double cubic_sparsity(double s_final, std::size_t t, std::size_t t_start, std::size_t t_stop) {
    if (t <= t_start) return 0.0;
    if (t >= t_stop) return s_final;
    const double p = static_cast<double>(t - t_start) / static_cast<double>(t_stop - t_start);
    return s_final * (1.0 - std::pow(1.0 - p, 3.0));
}

// ---- drop / grow primitives ----------------------------------------------------

// Deactivates the n_drop active weights of smallest magnitude (ties by lowest
// index) and zeroes them. Returns the dropped indices, ascending.
inline std::vector<std::size_t> drop_smallest_count(std::span<double> weights, LayerMask& mask, std::size_t n_drop) {
    if (weights.size() != mask.size()) throw InputError("drop_smallest: weight/mask size mismatch for " + mask.name);
    n_drop = std::min(n_drop, mask.active_count);
    if (n_drop == 0) return {};
    auto cand = mask.active_indices();
    auto smaller = [&](std::size_t a, std::size_t b) {
        const double wa = std::abs(weights[a]), wb = std::abs(weights[b]);
        return wa < wb || (wa == wb && a < b);
    };
    std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n_drop - 1), cand.end(), smaller);
    cand.resize(n_drop);
    std::sort(cand.begin(), cand.end());
    for (auto i : cand) {
        mask.deactivate(i);
        weights[i] = 0.0;
    }
    return cand;
}

// Drops floor(f * k) of the k active weights.
inline std::vector<std::size_t> drop_smallest(std::span<double> weights, LayerMask& mask, double f) {
    return drop_smallest_count(weights, mask,
                               static_cast<std::size_t>(std::floor(f * static_cast<double>(mask.active_count))));
}

struct GrowResult {
    std::vector<std::size_t> grown;  // ascending
    std::size_t shortfall = 0;       // requested minus available
};

// Activates the k inactive positions with the largest |score| (ties by lowest
// index) and sets their weights to 0.
inline GrowResult grow_by_score(std::span<const double> score, LayerMask& mask, std::size_t k,
                                std::span<double> weights) {
    if (score.size() != mask.size()) throw InputError("grow: score/mask size mismatch for " + mask.name);
    GrowResult r;
    auto cand = mask.inactive_indices();
    if (k > cand.size()) {
        r.shortfall = k - cand.size();
        k = cand.size();
    }
    if (k == 0) return r;
    auto larger = [&](std::size_t a, std::size_t b) {
        const double sa = std::abs(score[a]), sb = std::abs(score[b]);
        return sa > sb || (sa == sb && a < b);
    };
    std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k - 1), cand.end(), larger);
    cand.resize(k);
    std::sort(cand.begin(), cand.end());
    for (auto i : cand) {
        mask.activate(i);
        if (!weights.empty()) weights[i] = 0.0;
    }
    r.grown = std::move(cand);
    return r;
}

// RigL growth: largest dense-gradient magnitude among inactive weights.
inline GrowResult grow_by_gradient(std::span<const double> grads, LayerMask& mask, std::size_t k,
                                   std::span<double> weights = {}) {
    return grow_by_score(grads, mask, k, weights);
}

// SET growth: k inactive positions uniformly without replacement.
template <class Rng>
GrowResult grow_random(LayerMask& mask, std::size_t k, Rng& rng, std::span<double> weights = {}) {
    GrowResult r;
    auto cand = mask.inactive_indices();
    if (k > cand.size()) {
        r.shortfall = k - cand.size();
        k = cand.size();
    }
    for (auto j : sample_without_replacement(cand.size(), k, rng)) r.grown.push_back(cand[j]);
    std::sort(r.grown.begin(), r.grown.end());
    for (auto i : r.grown) {
        mask.activate(i);
        if (!weights.empty()) weights[i] = 0.0;
    }
    return r;
}

// Splits `total` integer slots proportionally to `weights`, never exceeding
// `capacity`; a capped layer's excess is re-split among the rest. Integer
// rounding is largest-remainder with ties to the lower index. Slots left
// over when every open weight is zero are spread by spare capacity.
inline std::vector<std::size_t> apportion(std::size_t total, std::span<const double> weights,
                                          std::span<const std::size_t> capacity) {
    const std::size_t n = weights.size();
    if (capacity.size() != n) throw InputError("apportion: weights/capacity size mismatch");
    const std::size_t cap_sum = std::accumulate(capacity.begin(), capacity.end(), std::size_t{0});
    if (total > cap_sum)
        throw InputError("apportion: " + std::to_string(total) + " slots exceed total capacity " +
                         std::to_string(cap_sum));
    std::vector<std::size_t> out(n, 0);
    std::size_t remaining = total;

    auto split = [&](const std::vector<double>& w) {
        std::vector<bool> open(n);
        for (std::size_t i = 0; i < n; ++i) open[i] = out[i] < capacity[i] && w[i] > 0.0 && std::isfinite(w[i]);
        while (remaining > 0) {
            double wsum = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (open[i]) wsum += w[i];
            if (wsum <= 0.0) return;
            bool capped = false;
            for (std::size_t i = 0; i < n; ++i) {
                if (!open[i]) continue;
                const std::size_t spare = capacity[i] - out[i];
                if (static_cast<double>(remaining) * w[i] / wsum >= static_cast<double>(spare)) {
                    out[i] = capacity[i];
                    remaining -= spare;
                    open[i] = false;
                    capped = true;
                }
            }
            if (capped) continue;
            // Every quota is strictly below spare capacity, so floor + 1 fits.
            std::vector<std::pair<double, std::size_t>> frac;
            std::size_t assigned = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!open[i]) continue;
                const double quota = static_cast<double>(remaining) * w[i] / wsum;
                const auto base = static_cast<std::size_t>(std::floor(quota));
                out[i] += base;
                assigned += base;
                frac.emplace_back(quota - std::floor(quota), i);
            }
            std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
            std::size_t extra = remaining - assigned;
            for (std::size_t j = 0; j < frac.size() && extra > 0; ++j, --extra) ++out[frac[j].second];
            remaining = 0;
        }
    };

    split(std::vector<double>(weights.begin(), weights.end()));
    if (remaining > 0) {
        std::vector<double> spare(n);
        for (std::size_t i = 0; i < n; ++i) spare[i] = static_cast<double>(capacity[i] - out[i]);
        split(spare);
    }
    return out;
}

namespace detail {

// A layer without inactive weights can only regrow what it dropped: the mask
// would not change but the regrown weights would be reset to zero. The
// per-layer methods leave such layers alone.
inline bool fully_dense(const LayerMask& m) { return m.active_count == m.size(); }

inline double mean_abs_over_active(std::span<const double> v, const LayerMask& mask) {
    if (v.empty() || mask.active_count == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask.active[i]) s += std::abs(v[i]);
    return s / static_cast<double>(mask.active_count);
}

inline std::span<const double> or_zeros(std::span<const double> v, std::size_t n, std::vector<double>& zeros) {
    if (v.size() == n) return v;
    zeros.assign(n, 0.0);
    return zeros;
}

}  // namespace detail

// ---- per-method updates ----------------------------------------------------------

// RigL: per layer drop f of the smallest weights, regrow the same count by
// largest dense gradient.
inline UpdateEvent rigl_update(std::size_t step, std::vector<LayerTensors>& layers, MaskSet& masks, double f) {
    UpdateEvent ev{step, {}};
    for (std::size_t m = 0; m < masks.size(); ++m) {
        LayerUpdate u;
        u.layer = m;
        u.density_pre = masks[m].density();
        if (detail::fully_dense(masks[m])) {
            u.density_post = u.density_pre;
            ev.layers.push_back(std::move(u));
            continue;
        }
        u.dropped = drop_smallest(layers[m].weights, masks[m], f);
        u.grown = grow_by_gradient(layers[m].grads, masks[m], u.dropped.size(), layers[m].weights).grown;
        u.density_post = masks[m].density();
        ev.layers.push_back(std::move(u));
    }
    return ev;
}

// SET: same drop, random regrowth.
template <class Rng>
UpdateEvent set_update(std::size_t step, std::vector<LayerTensors>& layers, MaskSet& masks, double f, Rng& rng) {
    UpdateEvent ev{step, {}};
    for (std::size_t m = 0; m < masks.size(); ++m) {
        LayerUpdate u;
        u.layer = m;
        u.density_pre = masks[m].density();
        if (detail::fully_dense(masks[m])) {
            u.density_post = u.density_pre;
            ev.layers.push_back(std::move(u));
            continue;
        }
        u.dropped = drop_smallest(layers[m].weights, masks[m], f);
        u.grown = grow_random(masks[m], u.dropped.size(), rng, layers[m].weights).grown;
        u.density_post = masks[m].density();
        ev.layers.push_back(std::move(u));
    }
    return ev;
}

// Shared machinery of SNFS and RigL-SG/SM: drop per layer, then hand the
// global pool of dropped slots back to layers proportionally to `criterion`
// (a per-layer mean over active weights, measured before the drop), and grow
// inside each layer by largest |growth score|. If every criterion is zero the
// layers regrow exactly what they dropped.
inline UpdateEvent redistribute_update(std::size_t step, std::vector<LayerTensors>& layers, MaskSet& masks, double f,
                                       std::span<const double> criterion,
                                       const std::vector<std::span<const double>>& growth_score) {
    UpdateEvent ev{step, {}};
    const std::size_t L = masks.size();
    std::size_t removed = 0;
    std::vector<std::size_t> capacity(L);
    for (std::size_t m = 0; m < L; ++m) {
        LayerUpdate u;
        u.layer = m;
        u.density_pre = masks[m].density();
        u.dropped = drop_smallest(layers[m].weights, masks[m], f);
        removed += u.dropped.size();
        capacity[m] = masks[m].size() - masks[m].active_count;
        ev.layers.push_back(std::move(u));
    }
    const double crit_sum = std::accumulate(criterion.begin(), criterion.end(), 0.0);
    std::vector<std::size_t> grow(L);
    if (crit_sum > 0.0 && std::isfinite(crit_sum)) {
        grow = apportion(removed, criterion, capacity);
    } else {
        for (std::size_t m = 0; m < L; ++m) grow[m] = ev.layers[m].dropped.size();
    }
    for (std::size_t m = 0; m < L; ++m) {
        auto& u = ev.layers[m];
        u.grown = grow_by_score(growth_score[m], masks[m], grow[m], layers[m].weights).grown;
        u.density_post = masks[m].density();
    }
    return ev;
}

// SNFS: redistribution and growth both driven by momentum magnitude.
inline UpdateEvent snfs_update(std::size_t step, std::vector<LayerTensors>& layers, MaskSet& masks, double f) {
    std::vector<double> crit(masks.size());
    std::vector<std::vector<double>> zeros(masks.size());
    std::vector<std::span<const double>> score(masks.size());
    for (std::size_t m = 0; m < masks.size(); ++m) {
        crit[m] = detail::mean_abs_over_active(layers[m].momentum, masks[m]);
        score[m] = detail::or_zeros(layers[m].momentum, masks[m].size(), zeros[m]);
    }
    return redistribute_update(step, layers, masks, f, crit, score);
}

// RigL-SG / RigL-SM: redistribution by mean |grad| or |momentum| over active
// weights, growth by dense gradient.
inline UpdateEvent rigl_redistribute_update(std::size_t step, std::vector<LayerTensors>& layers, MaskSet& masks,
                                            double f, Redistribution criterion) {
    if (criterion == Redistribution::none) return rigl_update(step, layers, masks, f);
    std::vector<double> crit(masks.size());
    std::vector<std::span<const double>> score(masks.size());
    for (std::size_t m = 0; m < masks.size(); ++m) {
        const std::span<const double> src =
            criterion == Redistribution::sparse_grad ? layers[m].grads : std::span<const double>(layers[m].momentum);
        crit[m] = detail::mean_abs_over_active(src, masks[m]);
        score[m] = layers[m].grads;
    }
    return redistribute_update(step, layers, masks, f, crit, score);
}

// Iterative magnitude pruning: prune each layer down to the cubic-schedule
// target derived from its final sparsity. Never grows.
inline UpdateEvent gradual_prune_update(std::size_t step, std::vector<LayerTensors>& layers, MaskSet& masks,
                                        const PruneSchedule& schedule, std::span<const double> final_sparsity) {
    if (final_sparsity.size() != masks.size()) throw InputError("gradual_prune_update: one final sparsity per layer");
    UpdateEvent ev{step, {}};
    for (std::size_t m = 0; m < masks.size(); ++m) {
        LayerUpdate u;
        u.layer = m;
        u.density_pre = masks[m].density();
        const double s = cubic_sparsity(final_sparsity[m], step, schedule.t_start, schedule.t_stop);
        const std::size_t target = s == 0.0 ? masks[m].size() : active_target(1.0 - s, masks[m].size());
        if (masks[m].active_count > target)
            u.dropped = drop_smallest_count(layers[m].weights, masks[m], masks[m].active_count - target);
        u.density_post = masks[m].density();
        ev.layers.push_back(std::move(u));
    }
    return ev;
}

// Channel-level RigL for conv layers: drop f of the active output channels
// with smallest L2 weight norm, regrow as many inactive channels by largest
// summed |gradient|. Linear layers stay dense and untouched.
inline UpdateEvent rigl_struct_update(std::size_t step, std::vector<LayerTensors>& layers, MaskSet& masks, double f) {
    UpdateEvent ev{step, {}};
    for (std::size_t m = 0; m < masks.size(); ++m) {
        auto& mask = masks[m];
        LayerUpdate u;
        u.layer = m;
        u.density_pre = mask.density();
        if (mask.is_conv()) {
            const std::size_t C = mask.channels(), cs = mask.channel_size();
            std::vector<std::size_t> active_ch, inactive_ch;
            for (std::size_t c = 0; c < C; ++c) (mask.active[c * cs] ? active_ch : inactive_ch).push_back(c);
            const auto n_drop = static_cast<std::size_t>(std::floor(f * static_cast<double>(active_ch.size())));
            if (n_drop > 0) {
                std::vector<double> norm(C, 0.0), gsum(C, 0.0);
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t j = 0; j < cs; ++j) {
                        const double w = layers[m].weights[c * cs + j];
                        norm[c] += w * w;
                        gsum[c] += std::abs(layers[m].grads[c * cs + j]);
                    }
                std::stable_sort(active_ch.begin(), active_ch.end(),
                                 [&](std::size_t a, std::size_t b) { return norm[a] < norm[b]; });
                std::vector<std::size_t> dropped_ch(active_ch.begin(), active_ch.begin() + static_cast<std::ptrdiff_t>(n_drop));
                for (auto c : dropped_ch) {
                    inactive_ch.push_back(c);
                    for (std::size_t j = 0; j < cs; ++j) {
                        mask.deactivate(c * cs + j);
                        layers[m].weights[c * cs + j] = 0.0;
                    }
                }
                std::sort(inactive_ch.begin(), inactive_ch.end());
                std::stable_sort(inactive_ch.begin(), inactive_ch.end(),
                                 [&](std::size_t a, std::size_t b) { return gsum[a] > gsum[b]; });
                std::vector<std::size_t> grown_ch(inactive_ch.begin(), inactive_ch.begin() + static_cast<std::ptrdiff_t>(n_drop));
                for (auto c : grown_ch)
                    for (std::size_t j = 0; j < cs; ++j) {
                        mask.activate(c * cs + j);
                        layers[m].weights[c * cs + j] = 0.0;
                    }
                std::sort(dropped_ch.begin(), dropped_ch.end());
                std::sort(grown_ch.begin(), grown_ch.end());
                for (auto c : dropped_ch)
                    for (std::size_t j = 0; j < cs; ++j) u.dropped.push_back(c * cs + j);
                for (auto c : grown_ch)
                    for (std::size_t j = 0; j < cs; ++j) u.grown.push_back(c * cs + j);
            }
        }
        u.density_post = mask.density();
        ev.layers.push_back(std::move(u));
    }
    return ev;
}

// ---- driver -------------------------------------------------------------------

// Decides when to update and dispatches to the method's update rule.
class MaskUpdater {
public:
    MaskUpdater(UpdatePolicy policy, BufferMode buffer_mode, std::vector<double> prune_targets = {},
                std::uint64_t seed = 0)
        : policy_(policy), buffer_mode_(buffer_mode), prune_targets_(std::move(prune_targets)), rng_(seed) {
        if (policy_.delta_t == 0) throw InputError("delta_t must be at least 1");
    }

    const UpdatePolicy& policy() const { return policy_; }

    bool due(std::size_t t) const {
        switch (policy_.method) {
            case Method::dense:
            case Method::small_dense:
            case Method::static_sparse: return false;
            case Method::pruning: {
                const auto& p = policy_.prune;
                if (t <= p.t_start || t > p.t_stop) return false;
                return (t - p.t_start) % policy_.delta_t == 0 || t == p.t_stop;
            }
            default: return should_update(t, policy_.delta_t, policy_.t_end);
        }
    }

    // Dense gradients are needed at update steps (SNFS: at every step, via
    // its dense momentum buffers).
    bool needs_dense_grad(std::size_t t) const { return policy_.method == Method::snfs || due(t); }

    UpdateEvent update(std::size_t t, std::vector<LayerTensors>& layers, MaskSet& masks) {
        if (layers.size() != masks.size()) throw InputError("MaskUpdater: tensors/masks layer count mismatch");
        const double f = prune_fraction(t, policy_.alpha, policy_.t_end);
        UpdateEvent ev;
        switch (policy_.method) {
            case Method::rigl: ev = rigl_update(t, layers, masks, f); break;
            case Method::set: ev = set_update(t, layers, masks, f, rng_); break;
            case Method::snfs: ev = snfs_update(t, layers, masks, f); break;
            case Method::rigl_sg:
            case Method::rigl_sm: {
                auto crit = policy_.redistribution == Redistribution::none ? default_redistribution(policy_.method)
                                                                           : policy_.redistribution;
                ev = rigl_redistribute_update(t, layers, masks, f, crit);
                break;
            }
            case Method::pruning:
                ev = gradual_prune_update(t, layers, masks, policy_.prune, prune_targets_);
                break;
            case Method::rigl_struct: ev = rigl_struct_update(t, layers, masks, f); break;
            default: ev.step = t; return ev;
        }
        if (buffer_mode_ == BufferMode::sparse) {
            for (const auto& u : ev.layers) {
                auto mom = layers[u.layer].momentum;
                if (mom.empty()) continue;
                for (auto i : u.dropped) mom[i] = 0.0;
                for (auto i : u.grown) mom[i] = 0.0;
            }
        }
        return ev;
    }

private:
    UpdatePolicy policy_;
    BufferMode buffer_mode_;
    std::vector<double> prune_targets_;
    std::mt19937_64 rng_;
};

// ---- event log ---------------------------------------------------------------------

// Applies logged drops then grows to `initial`.
inline MaskSet replay_events(MaskSet initial, const std::vector<UpdateEvent>& events) {
    for (const auto& ev : events)
        for (const auto& u : ev.layers) {
            if (u.layer >= initial.size()) throw InputError("event refers to unknown layer " + std::to_string(u.layer));
            auto& mask = initial[u.layer];
            for (auto i : u.dropped) mask.deactivate(i);
            for (auto i : u.grown) mask.activate(i);
        }
    return initial;
}

namespace detail {

inline std::string join_indices(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(v[i]);
    }
    return s;
}

inline std::vector<std::size_t> split_indices(const std::string& s) {
    std::vector<std::size_t> v;
    std::istringstream is(s);
    std::size_t x;
    while (is >> x) v.push_back(x);
    return v;
}

}  // namespace detail

inline constexpr const char* kEventsCsvHeader = "step,layer,dropped,grown,density_pre,density_post,dropped_idx,grown_idx";

// One row per (event, layer). The trailing index columns are space-separated
// flat indices so the log can be replayed.
inline void write_events_csv(std::ostream& os, const std::vector<UpdateEvent>& events, const MaskSet& names,
                             bool header = true) {
    if (header) os << kEventsCsvHeader << '\n';
    std::ostringstream line;
    line.precision(17);
    for (const auto& ev : events)
        for (const auto& u : ev.layers) {
            line.str("");
            line << ev.step << ',' << names[u.layer].name << ',' << u.dropped.size() << ',' << u.grown.size() << ','
                 << u.density_pre << ',' << u.density_post << ',' << detail::join_indices(u.dropped) << ','
                 << detail::join_indices(u.grown) << '\n';
            os << line.str();
        }
}

inline std::vector<UpdateEvent> read_events_csv(std::istream& is, const MaskSet& names) {
    std::map<std::string, std::size_t> index;
    for (std::size_t m = 0; m < names.size(); ++m) index[names[m].name] = m;
    std::vector<UpdateEvent> events;
    std::string line;
    if (!std::getline(is, line) || line != kEventsCsvHeader) throw InputError("events.csv: unexpected header");
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cols.push_back(cell);
        if (!line.empty() && line.back() == ',') cols.emplace_back();
        if (cols.size() != 8) throw InputError("events.csv line " + std::to_string(lineno) + ": expected 8 columns");
        const auto step = static_cast<std::size_t>(std::stoull(cols[0]));
        auto it = index.find(cols[1]);
        if (it == index.end()) throw InputError("events.csv line " + std::to_string(lineno) + ": unknown layer " + cols[1]);
        if (events.empty() || events.back().step != step) events.push_back({step, {}});
        LayerUpdate u;
        u.layer = it->second;
        u.density_pre = std::stod(cols[4]);
        u.density_post = std::stod(cols[5]);
        u.dropped = detail::split_indices(cols[6]);
        u.grown = detail::split_indices(cols[7]);
        if (u.dropped.size() != std::stoull(cols[2]) || u.grown.size() != std::stoull(cols[3]))
            throw InputError("events.csv line " + std::to_string(lineno) + ": counts disagree with index lists");
        events.back().layers.push_back(std::move(u));
    }
    return events;
}

}  // namespace rigl
