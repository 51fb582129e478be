#pragma once

// Shared fixtures for the unit suites and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rigl/rigl.hpp"

namespace rigl::testing {

// Two convs and two linear layers; small enough for exhaustive checks.
inline ArchSpec toy_conv_net() {
    detail::SpecBuilder b;
    b.spec.name = "toy-conv";
    b.spec.input_shape = {2, 6, 6};
    b.spec.class_count = 4;
    int x = b.conv("conv1", 2, 8, 3, 1, 1, true, kNetworkInput, true);
    x = b.simple(LayerKind::relu, "relu1", x);
    x = b.conv("conv2", 8, 12, 3, 2, 1, true, x);
    x = b.simple(LayerKind::relu, "relu2", x);
    x = b.simple(LayerKind::flatten, "flatten", x);
    x = b.linear("fc1", 12 * 3 * 3, 16, x);
    x = b.simple(LayerKind::relu, "relu3", x);
    b.linear("fc2", 16, 4, x);
    b.spec.validate();
    return b.spec;
}

struct DriverReport {
    std::size_t steps = 0;
    std::size_t updates = 0;
    std::size_t changed = 0;  // updates that moved at least one weight
    std::vector<std::string> violations;

    bool ok() const { return violations.empty() && updates > 0 && changed > 0; }
};

// Drives MaskUpdater for `steps` steps with random weights, gradients and
// momentum, checking after every update:
//   rigl / set / rigl_struct: per-layer active count unchanged
//   snfs / rigl_sg / rigl_sm: global active count unchanged
//   pruning: active sets only shrink
//   all: grown weights exactly 0, counts consistent with a recount
//   rigl_struct: channels uniform, linear layers dense
inline DriverReport random_driver(Method method, std::size_t steps, std::uint64_t seed, double sparsity = 0.8,
                                  std::size_t delta_t = 1) {
    const ArchSpec spec = toy_conv_net();
    SparsityConfig cfg;
    cfg.sparsity = sparsity;
    cfg.distribution = Distribution::erk;
    if (method == Method::rigl_struct) {
        cfg.granularity = Granularity::channel;
        cfg.distribution = Distribution::uniform;
        cfg.keep_first_layer_dense = false;
        // The dense linear layers hold most of the toy net's weights.
        cfg.sparsity = std::min(sparsity, 0.15);
    }
    const auto targets = solve_distribution(spec, cfg);
    MaskSet masks = method == Method::pruning ? dense_masks(spec) : init_masks(spec, targets, seed, cfg.granularity);

    UpdatePolicy policy;
    policy.method = method;
    policy.alpha = 0.3;
    policy.delta_t = delta_t;
    policy.t_end = steps;
    policy.prune = {0, steps};
    policy.redistribution = default_redistribution(method);
    const BufferMode mode = method == Method::snfs ? BufferMode::dense : BufferMode::sparse;
    MaskUpdater updater(policy, mode, targets, seed + 1);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> w(masks.size()), g(masks.size()), mom(masks.size());
    for (std::size_t m = 0; m < masks.size(); ++m) {
        w[m].resize(masks[m].size());
        g[m].resize(masks[m].size());
        mom[m].resize(masks[m].size());
        for (auto& v : w[m]) v = normal(rng);
        apply_mask(masks[m], w[m]);
    }

    DriverReport rep;
    std::vector<std::size_t> per_layer(masks.size());
    std::vector<LayerTensors> views(masks.size());
    for (std::size_t t = 0; t < steps; ++t) {
        ++rep.steps;
        for (std::size_t m = 0; m < masks.size(); ++m) {
            for (std::size_t i = 0; i < w[m].size(); ++i) {
                if (masks[m].active[i]) w[m][i] += 0.1 * normal(rng);
                g[m][i] = normal(rng);
                mom[m][i] = 0.9 * mom[m][i] + g[m][i];
            }
        }
        if (!updater.due(t)) continue;
        ++rep.updates;
        const MaskSet before = masks;
        const std::size_t global_before = masks.total_active();
        for (std::size_t m = 0; m < masks.size(); ++m) {
            per_layer[m] = masks[m].active_count;
            views[m] = {w[m], g[m], mom[m]};
        }
        const UpdateEvent ev = updater.update(t, views, masks);
        if (!(masks == before)) ++rep.changed;
        auto fail = [&](const std::string& what) {
            if (rep.violations.size() < 20) rep.violations.push_back("step " + std::to_string(t) + ": " + what);
        };
        if (!masks.counts_consistent()) fail("active counts disagree with recount");
        for (const auto& u : ev.layers)
            for (auto i : u.grown)
                if (w[u.layer][i] != 0.0) fail("grown weight not zero in " + masks[u.layer].name);
        for (std::size_t m = 0; m < masks.size(); ++m)
            for (std::size_t i = 0; i < w[m].size(); ++i)
                if (!masks[m].active[i] && w[m][i] != 0.0) fail("inactive weight nonzero in " + masks[m].name);
        switch (method) {
            case Method::rigl:
            case Method::set:
            case Method::rigl_struct:
                for (std::size_t m = 0; m < masks.size(); ++m)
                    if (masks[m].active_count != per_layer[m]) fail("layer count changed in " + masks[m].name);
                break;
            case Method::snfs:
            case Method::rigl_sg:
            case Method::rigl_sm:
                if (masks.total_active() != global_before) fail("global count changed");
                break;
            case Method::pruning:
                for (std::size_t m = 0; m < masks.size(); ++m)
                    for (std::size_t i = 0; i < masks[m].size(); ++i)
                        if (masks[m].active[i] && !before[m].active[i]) fail("pruned weight regrown");
                break;
            default: break;
        }
        if (method == Method::rigl_struct) {
            for (std::size_t m = 0; m < masks.size(); ++m) {
                const auto& mk = masks[m];
                if (!mk.is_conv()) {
                    if (mk.active_count != mk.size()) fail("linear layer not dense");
                    continue;
                }
                for (std::size_t c = 0; c < mk.channels(); ++c)
                    for (std::size_t j = 1; j < mk.channel_size(); ++j)
                        if (mk.active[c * mk.channel_size() + j] != mk.active[c * mk.channel_size()])
                            fail("mixed channel in " + mk.name);
            }
        }
    }
    return rep;
}

struct OracleTrial {
    bool equal = false;           // grown set equals the finite-difference top-k
    bool tie_explained = false;   // every mismatch sits inside a |grad| tie band
    // Mismatches outside the tie band where a 100x finer difference agrees with
    // backprop, i.e. the eps window straddles a ReLU kink. Diagnostic only.
    std::size_t kink_mismatches = 0;
    std::size_t grown = 0;
};

// One growth-oracle trial on a small MLP: RigL's grown set versus top-k over
// central finite-difference gradients (eps) among the post-drop inactive set.
inline OracleTrial growth_oracle_trial(std::uint64_t seed, double eps = 1e-4, double tie_band = 1e-6) {
    const ArchSpec spec = build_mlp({8, 16, 10, 4});
    Network net(spec, seed);
    SparsityConfig cfg;
    cfg.sparsity = 0.5;
    const auto targets = solve_distribution(spec, cfg);
    MaskSet masks = init_masks(spec, targets, seed);
    apply_mask(masks, net.weights());

    std::mt19937_64 rng(seed * 7919 + 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> label(0, 3);
    for (auto& w : net.weights())
        for (auto& v : w.values) v *= 1.0 + 0.1 * normal(rng);
    apply_mask(masks, net.weights());
    for (auto& b : net.biases())
        for (auto& v : b.values) v = 0.1 * normal(rng);
    Tensor x({16, 8});
    for (auto& v : x.values) v = normal(rng);
    std::vector<std::size_t> y(16);
    for (auto& v : y) v = label(rng);

    auto loss = [&]() { return cross_entropy_with_label_smoothing(net.forward(x, false), y).loss; };

    // Finite differences at the pre-update weights.
    std::vector<std::vector<double>> fd(masks.size()), fd_fine(masks.size());
    for (std::size_t m = 0; m < masks.size(); ++m) {
        auto& wv = net.weights()[m].values;
        fd[m].resize(wv.size());
        fd_fine[m].resize(wv.size());
        for (std::size_t i = 0; i < wv.size(); ++i) {
            const double w0 = wv[i];
            wv[i] = w0 + eps;
            const double up = loss();
            wv[i] = w0 - eps;
            const double down = loss();
            wv[i] = w0 + eps / 100;
            const double fine_up = loss();
            wv[i] = w0 - eps / 100;
            const double fine_down = loss();
            wv[i] = w0;
            fd[m][i] = (up - down) / (2 * eps);
            fd_fine[m][i] = (fine_up - fine_down) / (2 * eps / 100);
        }
    }
    const double f = 0.3;

    // Independent drop: floor(f k) smallest |w| among active, ties to the
    // lower index, then top-k |fd| among everything not kept.
    std::vector<std::set<std::size_t>> expected(masks.size());
    std::vector<std::vector<std::size_t>> candidates(masks.size());
    std::vector<std::size_t> kcount(masks.size());
    for (std::size_t m = 0; m < masks.size(); ++m) {
        const auto& wv = net.weights()[m].values;
        auto act = masks[m].active_indices();
        std::stable_sort(act.begin(), act.end(),
                         [&](std::size_t a, std::size_t b) { return std::abs(wv[a]) < std::abs(wv[b]); });
        const auto k = static_cast<std::size_t>(std::floor(f * static_cast<double>(act.size())));
        kcount[m] = k;
        std::set<std::size_t> dropped(act.begin(), act.begin() + static_cast<std::ptrdiff_t>(k));
        for (std::size_t i = 0; i < wv.size(); ++i)
            if (!masks[m].active[i] || dropped.count(i)) candidates[m].push_back(i);
        auto c = candidates[m];
        std::stable_sort(c.begin(), c.end(),
                         [&](std::size_t a, std::size_t b) { return std::abs(fd[m][a]) > std::abs(fd[m][b]); });
        expected[m] = std::set<std::size_t>(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(k));
    }

    // Library path: backprop gradients then rigl_update.
    const Tensor logits = net.forward(x);
    net.backward(cross_entropy_with_label_smoothing(logits, y).logits_grad);
    std::vector<LayerTensors> views;
    for (auto& w : net.weights()) views.push_back({w.values, w.grad, {}});
    const UpdateEvent ev = rigl_update(0, views, masks, f);

    OracleTrial trial;
    trial.equal = true;
    trial.tie_explained = true;
    for (std::size_t m = 0; m < masks.size(); ++m) {
        const std::set<std::size_t> got(ev.layers[m].grown.begin(), ev.layers[m].grown.end());
        trial.grown += got.size();
        if (got == expected[m]) continue;
        trial.equal = false;
        // The k-th largest |fd| among candidates is the selection threshold;
        // any mismatched index must sit within tie_band of it.
        std::vector<double> mags;
        for (auto i : candidates[m]) mags.push_back(std::abs(fd[m][i]));
        std::sort(mags.begin(), mags.end(), std::greater<>());
        const double threshold = kcount[m] ? mags[kcount[m] - 1] : 0.0;
        const auto& grad = net.weights()[m].grad;
        auto unexplained = [&](std::size_t i) {
            if (std::abs(std::abs(fd[m][i]) - threshold) <= tie_band) return;
            trial.tie_explained = false;
            if (std::abs(fd_fine[m][i] - grad[i]) <= 1e-3 * std::max(1.0, std::abs(grad[i])) &&
                std::abs(fd[m][i] - grad[i]) > 1e-3 * std::max(1.0, std::abs(grad[i])))
                ++trial.kink_mismatches;
        };
        for (auto i : got)
            if (!expected[m].count(i)) unexplained(i);
        for (auto i : expected[m])
            if (!got.count(i)) unexplained(i);
    }
    return trial;
}

}  // namespace rigl::testing
