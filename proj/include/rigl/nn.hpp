#pragma once

// Deterministic forward/backward engine over an ArchSpec layer graph.
// Accumulation order is fixed (row-major, sequential), so identical inputs
// give bit-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rigl/arch.hpp"
#include "rigl/errors.hpp"
#include "rigl/tensor.hpp"

namespace rigl {

namespace kernels {

// Four fixed partial sums; the reduction order never changes between calls.
inline double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct ConvGeometry {
    std::size_t c_in, h, w, kh, kw, stride, pad, h_out, w_out;
    std::size_t rows() const { return c_in * kh * kw; }
    std::size_t cols() const { return h_out * w_out; }
};

// cols[(c*kh + i)*kw + j][oy*w_out + ox] = x[c][oy*stride + i - pad][ox*stride + j - pad]
inline void im2col(const double* x, const ConvGeometry& g, double* cols) {
    for (std::size_t c = 0; c < g.c_in; ++c)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                double* row = cols + ((c * g.kh + i) * g.kw + j) * g.cols();
                for (std::size_t oy = 0; oy < g.h_out; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.w_out; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                            ix < static_cast<std::ptrdiff_t>(g.w);
                        row[oy * g.w_out + ox] =
                            inside ? x[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)]
                                   : 0.0;
                    }
                }
            }
}

inline void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
    for (std::size_t c = 0; c < g.c_in; ++c)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                const double* row = cols + ((c * g.kh + i) * g.kw + j) * g.cols();
                for (std::size_t oy = 0; oy < g.h_out; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.w_out; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        dx[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                            row[oy * g.w_out + ox];
                    }
                }
            }
}

}  // namespace kernels

// A trainable tensor plus the mask layer it belongs to (none for biases).
struct ParamRef {
    Tensor* tensor = nullptr;
    std::optional<std::size_t> mask_layer;
};

class Network {
public:
    Network(ArchSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
        shapes_ = spec_.output_shapes();
        std::mt19937_64 rng(seed);
        param_of_layer_.assign(spec_.layers.size(), -1);
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            const auto& l = spec_.layers[i];
            if (!l.maskable()) continue;
            param_of_layer_[i] = static_cast<int>(weights_.size());
            Tensor w(l.weight_shape());
            const double fan_in = static_cast<double>(l.in * l.kernel_h * l.kernel_w);
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
            for (auto& v : w.values) v = dist(rng);
            w.zero_grad();
            weights_.push_back(std::move(w));
            Tensor b;
            if (l.has_bias()) {
                b = Tensor({l.out});
                b.zero_grad();
            }
            biases_.push_back(std::move(b));
            weight_layer_.push_back(i);
        }
    }

    const ArchSpec& spec() const { return spec_; }
    const std::vector<Shape>& output_shapes() const { return shapes_; }

    // Weights of the maskable layers in spec order.
    std::vector<Tensor>& weights() { return weights_; }
    const std::vector<Tensor>& weights() const { return weights_; }
    std::vector<Tensor>& biases() { return biases_; }
    const std::vector<Tensor>& biases() const { return biases_; }
    // Spec layer index of maskable layer m.
    std::size_t layer_of_weight(std::size_t m) const { return weight_layer_[m]; }

    std::vector<ParamRef> parameters() {
        std::vector<ParamRef> out;
        for (std::size_t m = 0; m < weights_.size(); ++m) {
            out.push_back({&weights_[m], m});
            if (!biases_[m].values.empty()) out.push_back({&biases_[m], std::nullopt});
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t m = 0; m < weights_.size(); ++m) n += weights_[m].size() + biases_[m].size();
        return n;
    }

    // input: [B, ...] where the trailing dims hold one sample of the ArchSpec's
    // input size. Returns logits [B, class_count].
    Tensor forward(const Tensor& input, bool cache = true) {
        const std::size_t per_sample = shape_size(spec_.input_shape);
        if (input.shape.empty() || input.size() == 0 || input.size() % per_sample != 0 ||
            input.size() / input.shape[0] != per_sample)
            throw ConfigError(spec_.name + ": layer 0 (" + spec_.layers[0].name + "): input " +
                              shape_str(input.shape) + " does not match " + shape_str(spec_.input_shape));
        batch_ = input.shape[0];
        input_ = input.values;
        acts_.assign(spec_.layers.size(), {});
        argmax_.assign(spec_.layers.size(), {});
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) forward_layer(i);
        Tensor logits({batch_, spec_.class_count}, acts_.back());
        cached_ = cache;
        if (!cache) {
            acts_.clear();
            argmax_.clear();
        }
        return logits;
    }

    // Fills weight/bias gradients, densely: masked-out weights get the
    // gradient of the loss at their (zero) value.
    void backward(const Tensor& logits_grad) {
        if (!cached_) throw StateError(spec_.name + ": backward called without a cached forward pass");
        if (logits_grad.size() != batch_ * spec_.class_count)
            throw InputError("logits gradient has " + std::to_string(logits_grad.size()) + " entries, expected " +
                             std::to_string(batch_ * spec_.class_count));
        for (auto& w : weights_) w.zero_grad();
        for (auto& b : biases_)
            if (!b.values.empty()) b.zero_grad();
        std::vector<std::vector<double>> grads(spec_.layers.size());
        grads.back() = logits_grad.values;
        for (std::size_t i = spec_.layers.size(); i-- > 0;) {
            if (grads[i].empty()) continue;  // output unused downstream
            backward_layer(i, grads);
            grads[i].clear();
            grads[i].shrink_to_fit();
        }
    }

private:
    const std::vector<double>& act(int producer) const {
        return producer == kNetworkInput ? input_ : acts_[static_cast<std::size_t>(producer)];
    }
    Shape in_shape(int producer) const {
        return producer == kNetworkInput ? spec_.input_shape : shapes_[static_cast<std::size_t>(producer)];
    }

    kernels::ConvGeometry geometry(std::size_t i) const {
        const auto& l = spec_.layers[i];
        const Shape x = in_shape(spec_.inputs_of(i)[0]);
        const Shape& y = shapes_[i];
        return {x[0], x[1], x[2], l.kernel_h, l.kernel_w, l.stride, l.padding, y[1], y[2]};
    }

    void forward_layer(std::size_t i) {
        const auto& l = spec_.layers[i];
        const auto producers = spec_.inputs_of(i);
        const auto& x = act(producers[0]);
        const std::size_t in_n = shape_size(in_shape(producers[0]));
        const std::size_t out_n = shape_size(shapes_[i]);
        auto& y = acts_[i];
        y.assign(batch_ * out_n, 0.0);
        switch (l.kind) {
            case LayerKind::linear: {
                const auto& w = weights_[static_cast<std::size_t>(param_of_layer_[i])].values;
                const auto& b = biases_[static_cast<std::size_t>(param_of_layer_[i])].values;
                for (std::size_t s = 0; s < batch_; ++s)
                    for (std::size_t o = 0; o < l.out; ++o)
                        y[s * l.out + o] = (b.empty() ? 0.0 : b[o]) + kernels::dot(&w[o * l.in], &x[s * l.in], l.in);
                break;
            }
            case LayerKind::conv2d: {
                const auto g = geometry(i);
                const auto& w = weights_[static_cast<std::size_t>(param_of_layer_[i])].values;
                const auto& b = biases_[static_cast<std::size_t>(param_of_layer_[i])].values;
                std::vector<double> cols(g.rows() * g.cols());
                for (std::size_t s = 0; s < batch_; ++s) {
                    kernels::im2col(&x[s * in_n], g, cols.data());
                    double* ys = &y[s * out_n];
                    for (std::size_t co = 0; co < l.out; ++co) {
                        double* yrow = ys + co * g.cols();
                        if (!b.empty()) std::fill(yrow, yrow + g.cols(), b[co]);
                        for (std::size_t k = 0; k < g.rows(); ++k) {
                            const double wk = w[co * g.rows() + k];
                            if (wk != 0.0) kernels::axpy(wk, &cols[k * g.cols()], yrow, g.cols());
                        }
                    }
                }
                break;
            }
            case LayerKind::relu:
                for (std::size_t k = 0; k < y.size(); ++k) y[k] = x[k] > 0.0 ? x[k] : 0.0;
                break;
            case LayerKind::norm:
            case LayerKind::flatten:
                y = x;
                break;
            case LayerKind::add_residual: {
                const auto& x2 = act(producers[1]);
                for (std::size_t k = 0; k < y.size(); ++k) y[k] = x[k] + x2[k];
                break;
            }
            case LayerKind::maxpool2d:
            case LayerKind::avgpool2d: {
                const Shape xs = in_shape(producers[0]);
                const Shape& ys = shapes_[i];
                const bool is_max = l.kind == LayerKind::maxpool2d;
                if (is_max) argmax_[i].assign(y.size(), 0);
                const double inv = 1.0 / static_cast<double>(l.kernel_h * l.kernel_w);
                for (std::size_t s = 0; s < batch_; ++s)
                    for (std::size_t c = 0; c < ys[0]; ++c)
                        for (std::size_t oy = 0; oy < ys[1]; ++oy)
                            for (std::size_t ox = 0; ox < ys[2]; ++ox) {
                                const std::size_t oi = ((s * ys[0] + c) * ys[1] + oy) * ys[2] + ox;
                                double acc = is_max ? -INFINITY : 0.0;
                                std::size_t best = 0;
                                for (std::size_t ky = 0; ky < l.kernel_h; ++ky)
                                    for (std::size_t kx = 0; kx < l.kernel_w; ++kx) {
                                        const std::size_t ii =
                                            ((s * xs[0] + c) * xs[1] + oy * l.stride + ky) * xs[2] + ox * l.stride + kx;
                                        if (is_max) {
                                            if ((ky == 0 && kx == 0) || x[ii] > acc) {
                                                acc = x[ii];
                                                best = ii;
                                            }
                                        } else {
                                            acc += x[ii];
                                        }
                                    }
                                y[oi] = is_max ? acc : acc * inv;
                                if (is_max) argmax_[i][oi] = best;
                            }
                break;
            }
        }
    }

    void accumulate(std::vector<std::vector<double>>& grads, int producer, std::size_t n,
                    const std::vector<double>& g) {
        if (producer == kNetworkInput) return;
        auto& dst = grads[static_cast<std::size_t>(producer)];
        if (dst.empty()) dst.assign(n, 0.0);
        for (std::size_t k = 0; k < n; ++k) dst[k] += g[k];
    }

    void backward_layer(std::size_t i, std::vector<std::vector<double>>& grads) {
        const auto& l = spec_.layers[i];
        const auto producers = spec_.inputs_of(i);
        const auto& x = act(producers[0]);
        const std::size_t in_n = shape_size(in_shape(producers[0]));
        const std::size_t out_n = shape_size(shapes_[i]);
        const std::vector<double>& dy = grads[i];
        const bool need_dx = producers[0] != kNetworkInput;
        std::vector<double> dx;
        if (need_dx || l.kind == LayerKind::add_residual) dx.assign(batch_ * in_n, 0.0);

        switch (l.kind) {
            case LayerKind::linear: {
                const auto m = static_cast<std::size_t>(param_of_layer_[i]);
                auto& w = weights_[m];
                auto& b = biases_[m];
                for (std::size_t s = 0; s < batch_; ++s)
                    for (std::size_t o = 0; o < l.out; ++o) {
                        const double g = dy[s * l.out + o];
                        kernels::axpy(g, &x[s * l.in], &w.grad[o * l.in], l.in);
                        if (!b.values.empty()) b.grad[o] += g;
                        if (need_dx) kernels::axpy(g, &w.values[o * l.in], &dx[s * l.in], l.in);
                    }
                break;
            }
            case LayerKind::conv2d: {
                const auto m = static_cast<std::size_t>(param_of_layer_[i]);
                auto& w = weights_[m];
                auto& b = biases_[m];
                const auto g = geometry(i);
                std::vector<double> cols(g.rows() * g.cols());
                std::vector<double> dcols(g.rows() * g.cols());
                for (std::size_t s = 0; s < batch_; ++s) {
                    kernels::im2col(&x[s * in_n], g, cols.data());
                    const double* dys = &dy[s * out_n];
                    if (need_dx) std::fill(dcols.begin(), dcols.end(), 0.0);
                    for (std::size_t co = 0; co < l.out; ++co) {
                        const double* dyrow = dys + co * g.cols();
                        if (!b.values.empty())
                            for (std::size_t p = 0; p < g.cols(); ++p) b.grad[co] += dyrow[p];
                        for (std::size_t k = 0; k < g.rows(); ++k) {
                            w.grad[co * g.rows() + k] += kernels::dot(dyrow, &cols[k * g.cols()], g.cols());
                            if (need_dx)
                                kernels::axpy(w.values[co * g.rows() + k], dyrow, &dcols[k * g.cols()], g.cols());
                        }
                    }
                    if (need_dx) kernels::col2im_add(dcols.data(), g, &dx[s * in_n]);
                }
                break;
            }
            case LayerKind::relu:
                for (std::size_t k = 0; k < dx.size(); ++k) dx[k] = x[k] > 0.0 ? dy[k] : 0.0;
                break;
            case LayerKind::norm:
            case LayerKind::flatten:
                dx = dy;
                break;
            case LayerKind::add_residual:
                dx = dy;
                accumulate(grads, producers[1], dx.size(), dx);
                break;
            case LayerKind::maxpool2d:
                for (std::size_t k = 0; k < dy.size(); ++k) dx[argmax_[i][k]] += dy[k];
                break;
            case LayerKind::avgpool2d: {
                const Shape xs = in_shape(producers[0]);
                const Shape& ys = shapes_[i];
                const double inv = 1.0 / static_cast<double>(l.kernel_h * l.kernel_w);
                for (std::size_t s = 0; s < batch_; ++s)
                    for (std::size_t c = 0; c < ys[0]; ++c)
                        for (std::size_t oy = 0; oy < ys[1]; ++oy)
                            for (std::size_t ox = 0; ox < ys[2]; ++ox) {
                                const double g = dy[((s * ys[0] + c) * ys[1] + oy) * ys[2] + ox] * inv;
                                for (std::size_t ky = 0; ky < l.kernel_h; ++ky)
                                    for (std::size_t kx = 0; kx < l.kernel_w; ++kx)
                                        dx[((s * xs[0] + c) * xs[1] + oy * l.stride + ky) * xs[2] + ox * l.stride +
                                           kx] += g;
                            }
                break;
            }
        }
        if (need_dx) accumulate(grads, producers[0], dx.size(), dx);
    }

    ArchSpec spec_;
    std::vector<Shape> shapes_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
    std::vector<std::size_t> weight_layer_;
    std::vector<int> param_of_layer_;

    std::size_t batch_ = 0;
    bool cached_ = false;
    std::vector<double> input_;
    std::vector<std::vector<double>> acts_;
    std::vector<std::vector<std::size_t>> argmax_;
};

}  // namespace rigl
