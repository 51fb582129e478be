#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "rigl/errors.hpp"
#include "rigl/tensor.hpp"

namespace rigl {

struct LossResult {
    double loss = 0.0;  // mean over the batch
    Tensor logits_grad;
};

// Softmax cross-entropy against a smoothed target: 1 - smoothing + smoothing/K
// on the true class, smoothing/K elsewhere. logits is [K] or [B, K]; the
// gradient is of the batch-mean loss.
inline LossResult cross_entropy_with_label_smoothing(const Tensor& logits, std::span<const std::size_t> targets,
                                                     double smoothing = 0.0) {
    if (!(smoothing >= 0.0 && smoothing < 1.0)) throw InputError("label smoothing must be in [0, 1)");
    if (logits.shape.empty() || logits.shape.size() > 2) throw InputError("logits must be 1-D or 2-D");
    const std::size_t batch = logits.shape.size() == 2 ? logits.shape[0] : 1;
    const std::size_t k = logits.shape.back();
    if (targets.size() != batch)
        throw InputError("got " + std::to_string(targets.size()) + " targets for a batch of " + std::to_string(batch));

    LossResult r;
    r.logits_grad = Tensor(logits.shape);
    const double off = smoothing / static_cast<double>(k);
    const double inv_batch = 1.0 / static_cast<double>(batch);
    std::vector<double> p(k);
    for (std::size_t b = 0; b < batch; ++b) {
        if (targets[b] >= k)
            throw InputError("target class " + std::to_string(targets[b]) + " out of range for " + std::to_string(k) +
                             " classes");
        const double* z = &logits.values[b * k];
        const double zmax = *std::max_element(z, z + k);
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) sum += std::exp(z[c] - zmax);
        const double log_sum = std::log(sum) + zmax;
        for (std::size_t c = 0; c < k; ++c) {
            const double q = off + (c == targets[b] ? 1.0 - smoothing : 0.0);
            const double log_softmax = z[c] - log_sum;
            r.loss -= q * log_softmax * inv_batch;
            r.logits_grad.values[b * k + c] = (std::exp(log_softmax) - q) * inv_batch;
        }
    }
    return r;
}

inline LossResult cross_entropy_with_label_smoothing(const Tensor& logits, std::size_t target, double smoothing = 0.0) {
    const std::size_t t[1] = {target};
    return cross_entropy_with_label_smoothing(logits, std::span<const std::size_t>(t), smoothing);
}

}  // namespace rigl
