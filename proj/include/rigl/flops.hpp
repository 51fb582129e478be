#pragma once

// Theoretical FLOP accounting. A multiply-accumulate is 2 FLOPs; only conv
// and linear layers carry cost (activations, pooling, norm, residual adds and
// biases are free). Sparse cost scales each layer linearly with its density.

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigl/arch.hpp"
#include "rigl/errors.hpp"
#include "rigl/schedulers.hpp"
#include "rigl/sparsity.hpp"

namespace rigl {

struct LayerFlops {
    std::string name;
    double dense = 0.0;
    double density = 1.0;
    double sparse = 0.0;
};

struct FlopReport {
    double f_d = 0.0;  // dense forward FLOPs per sample
    double f_s = 0.0;  // sparse forward FLOPs per sample
    std::vector<LayerFlops> per_layer;
    double train_flops = 0.0;  // average per-step training FLOPs per sample
    double train_ratio = 0.0;  // train_flops / (3 f_d), 2 decimals
    double test_ratio = 0.0;   // f_s / f_d, 2 decimals
};

// Per-epoch f_s snapshots and their running mean E[f_{s,t}].
struct FlopTrace {
    std::vector<double> snapshots;
    double running_mean = 0.0;

    void record(double f_s) {
        snapshots.push_back(f_s);
        running_mean += (f_s - running_mean) / static_cast<double>(snapshots.size());
    }
    double mean() const { return running_mean; }
    bool empty() const { return snapshots.empty(); }
};

inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

// Dense forward cost of layer i given its output shape.
inline double layer_dense_flops(const LayerDecl& l, const Shape& out_shape) {
    if (l.kind == LayerKind::conv2d)
        return 2.0 * static_cast<double>(l.in) * static_cast<double>(l.out) * static_cast<double>(l.kernel_h) *
               static_cast<double>(l.kernel_w) * static_cast<double>(out_shape[1]) * static_cast<double>(out_shape[2]);
    if (l.kind == LayerKind::linear) return 2.0 * static_cast<double>(l.in) * static_cast<double>(l.out);
    return 0.0;
}

// densities: one per maskable layer, or empty for all-dense.
inline FlopReport forward_flops(const ArchSpec& spec, std::span<const double> densities = {}) {
    const auto shapes = spec.output_shapes();
    const auto idx = spec.maskable_indices();
    if (!densities.empty() && densities.size() != idx.size())
        throw InputError("expected " + std::to_string(idx.size()) + " layer densities, got " +
                         std::to_string(densities.size()));
    FlopReport r;
    for (std::size_t m = 0; m < idx.size(); ++m) {
        const auto& l = spec.layers[idx[m]];
        const double d = densities.empty() ? 1.0 : densities[m];
        if (!(d >= 0.0 && d <= 1.0)) throw InputError("density of " + l.name + " outside [0, 1]");
        LayerFlops lf{l.name, layer_dense_flops(l, shapes[idx[m]]), d, 0.0};
        lf.sparse = d * lf.dense;
        r.f_d += lf.dense;
        r.f_s += lf.sparse;
        r.per_layer.push_back(std::move(lf));
    }
    r.test_ratio = r.f_d > 0.0 ? round2(r.f_s / r.f_d) : 0.0;
    return r;
}

inline FlopReport forward_flops(const ArchSpec& spec, const MaskSet& masks) {
    const auto d = masks.densities();
    return forward_flops(spec, d);
}

inline bool needs_flop_trace(Method m) {
    return m == Method::snfs || m == Method::pruning || m == Method::rigl_sg || m == Method::rigl_sm;
}

// Per-step training FLOPs for one sample, averaged over training:
//   dense                     3 f_d
//   static, small-dense, SET  3 f_s
//   RigL, RigL-struct         (3 dT f_s + 2 f_s + f_d) / (dT + 1)
//   RigL-SG/SM                RigL with E[f_s] for f_s
//   SNFS                      2 E[f_s] + f_d
//   pruning                   3 E[f_s]
// `trace` is required for the time-varying methods.
inline double train_flops(Method method, double f_d, double f_s, std::size_t delta_t,
                          const FlopTrace* trace = nullptr) {
    if (needs_flop_trace(method)) {
        if (!trace || trace->empty())
            throw InputError(std::string("train FLOPs of ") + to_string(method) + " need a FLOP trace");
        f_s = trace->mean();
    }
    const double dt = static_cast<double>(delta_t);
    auto rigl = [&] {
        if (std::isinf(dt)) return 3.0 * f_s;
        return (3.0 * dt * f_s + 2.0 * f_s + f_d) / (dt + 1.0);
    };
    switch (method) {
        case Method::dense: return 3.0 * f_d;
        case Method::small_dense:
        case Method::static_sparse:
        case Method::set: return 3.0 * f_s;
        case Method::rigl:
        case Method::rigl_struct:
        case Method::rigl_sg:
        case Method::rigl_sm: return rigl();
        case Method::snfs: return 2.0 * f_s + f_d;
        case Method::pruning: return 3.0 * f_s;
    }
    return 0.0;
}

// Same formulas with f_s taken from a single snapshot; used to integrate the
// per-epoch cost of time-varying methods.
inline double step_train_flops(Method method, double f_d, double f_s, std::size_t delta_t) {
    FlopTrace t;
    t.record(f_s);
    return train_flops(method, f_d, f_s, delta_t, &t);
}

inline void record_epoch(FlopTrace& trace, const MaskSet& masks, const ArchSpec& spec) {
    trace.record(forward_flops(spec, masks).f_s);
}

// Full report: inference cost from `densities` (the final masks), training
// cost from the method formula.
inline FlopReport flop_report(const ArchSpec& spec, std::span<const double> densities, Method method,
                              std::size_t delta_t, const FlopTrace* trace = nullptr) {
    FlopReport r = forward_flops(spec, densities);
    r.train_flops = train_flops(method, r.f_d, r.f_s, delta_t, trace);
    r.train_ratio = round2(r.train_flops / (3.0 * r.f_d));
    return r;
}

inline nlohmann::json to_json(const FlopReport& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : r.per_layer)
        layers.push_back({{"name", l.name}, {"dense", l.dense}, {"density", l.density}, {"sparse", l.sparse}});
    return {{"f_d", r.f_d},
            {"f_s", r.f_s},
            {"train_flops", r.train_flops},
            {"train_ratio", r.train_ratio},
            {"test_ratio", r.test_ratio},
            {"per_layer", layers}};
}

inline void print_report(std::ostream& os, const FlopReport& r) {
    std::size_t width = 5;
    for (const auto& l : r.per_layer) width = std::max(width, l.name.size());
    const auto flags = os.flags();
    os << std::left << std::setw(static_cast<int>(width)) << "layer" << std::right << std::setw(14) << "dense"
       << std::setw(10) << "density" << std::setw(14) << "sparse" << '\n';
    os << std::scientific << std::setprecision(4);
    for (const auto& l : r.per_layer)
        os << std::left << std::setw(static_cast<int>(width)) << l.name << std::right << std::setw(14) << l.dense
           << std::fixed << std::setprecision(4) << std::setw(10) << l.density << std::scientific
           << std::setprecision(4) << std::setw(14) << l.sparse << '\n';
    os << "f_d          " << r.f_d << '\n'
       << "f_s          " << r.f_s << '\n'
       << "train_flops  " << r.train_flops << '\n'
       << std::fixed << std::setprecision(2) << "train_ratio  " << r.train_ratio << "x\n"
       << "test_ratio   " << r.test_ratio << "x\n";
    os.flags(flags);
}

}  // namespace rigl
