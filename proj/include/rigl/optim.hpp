#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rigl/errors.hpp"
#include "rigl/nn.hpp"
#include "rigl/sparsity.hpp"

namespace rigl {

// sparse: momentum entries at masked-out weights are forced to 0 every step.
// dense: momentum accumulates everywhere, so a re-grown weight may carry it.
enum class BufferMode { sparse, dense };

inline const char* to_string(BufferMode m) { return m == BufferMode::sparse ? "sparse" : "dense"; }

inline BufferMode buffer_mode_from_string(const std::string& s) {
    if (s == "sparse") return BufferMode::sparse;
    if (s == "dense") return BufferMode::dense;
    throw InputError("unknown buffer mode '" + s + "'");
}

struct SgdState {
    double momentum = 0.9;
    double learning_rate = 0.1;
    double weight_decay = 0.0;
    BufferMode buffer_mode = BufferMode::sparse;
    std::vector<std::vector<double>> buffers;  // one per parameter, lazily sized

    // Momentum buffer of the i-th parameter in Network::parameters() order.
    std::span<double> buffer(std::size_t i) { return buffers[i]; }
};

// b <- momentum*b + (g + wd*w); w <- w - lr*b; masked weights forced to 0;
// under the sparse buffer mode masked momentum entries are forced to 0.
inline void sgd_step(SgdState& state, std::span<const ParamRef> params, const MaskSet* masks) {
    if (!(state.momentum >= 0.0 && state.momentum < 1.0)) throw InputError("momentum must be in [0, 1)");
    if (state.buffers.size() != params.size()) {
        state.buffers.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) state.buffers[i].assign(params[i].tensor->size(), 0.0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].tensor;
        auto& b = state.buffers[i];
        if (p.grad.size() != p.size() || b.size() != p.size())
            throw InputError("parameter " + std::to_string(i) + " has mismatched gradient or buffer length");
        for (std::size_t k = 0; k < p.size(); ++k) {
            b[k] = state.momentum * b[k] + p.grad[k] + state.weight_decay * p.values[k];
            p.values[k] -= state.learning_rate * b[k];
        }
        if (masks && params[i].mask_layer) {
            const LayerMask& mask = (*masks)[*params[i].mask_layer];
            apply_mask(mask, p.values);
            if (state.buffer_mode == BufferMode::sparse) apply_mask(mask, b);
        }
    }
}

// Linear warmup to the base rate over warmup_steps, then multiply by `factor`
// at each milestone (given in steps).
struct LrSchedule {
    double base = 0.1;
    std::size_t warmup_steps = 0;
    std::vector<std::size_t> milestones;
    double factor = 0.2;

    double at(std::size_t step) const {
        if (step < warmup_steps)
            return base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
        double lr = base;
        for (auto m : milestones)
            if (step >= m) lr *= factor;
        return lr;
    }
};

}  // namespace rigl
