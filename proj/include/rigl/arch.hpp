#pragma once

// Declarative architecture specs: a topologically ordered layer list that both
// the training engine and the symbolic FLOP counter consume.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigl/errors.hpp"
#include "rigl/tensor.hpp"

namespace rigl {

enum class LayerKind { linear, conv2d, relu, maxpool2d, avgpool2d, flatten, add_residual, norm };

inline const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::linear: return "linear";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::avgpool2d: return "avgpool2d";
        case LayerKind::flatten: return "flatten";
        case LayerKind::add_residual: return "add_residual";
        case LayerKind::norm: return "norm";
    }
    return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
    for (auto k : {LayerKind::linear, LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2d,
                   LayerKind::avgpool2d, LayerKind::flatten, LayerKind::add_residual, LayerKind::norm})
        if (s == to_string(k)) return k;
    throw InputError("unknown layer kind '" + s + "'");
}

// Input index meaning "the network input".
inline constexpr int kNetworkInput = -1;

struct LayerDecl {
    LayerKind kind = LayerKind::relu;
    std::string name;
    // Producers of this layer's input(s); empty means the previous layer
    // (or the network input for layer 0). add_residual takes two.
    std::vector<int> inputs;
    // Channels for conv2d, features for linear.
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    bool bias = true;
    bool first_layer = false;

    bool maskable() const { return kind == LayerKind::conv2d || kind == LayerKind::linear; }
    bool has_bias() const { return maskable() && bias; }

    // N_l: weight count, bias excluded.
    std::size_t parameter_count() const {
        if (kind == LayerKind::conv2d) return out * in * kernel_h * kernel_w;
        if (kind == LayerKind::linear) return out * in;
        return 0;
    }

    Shape weight_shape() const {
        if (kind == LayerKind::conv2d) return {out, in, kernel_h, kernel_w};
        if (kind == LayerKind::linear) return {out, in};
        return {};
    }
};

struct ArchSpec {
    std::string name;
    Shape input_shape;  // [C, H, W] or [features]
    std::vector<LayerDecl> layers;
    std::size_t class_count = 0;

    // Resolved producer indices for layer i.
    std::vector<int> inputs_of(std::size_t i) const {
        const auto& l = layers[i];
        if (!l.inputs.empty()) return l.inputs;
        return {static_cast<int>(i) - 1};
    }

    std::vector<std::size_t> maskable_indices() const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].maskable()) idx.push_back(i);
        return idx;
    }

    std::size_t maskable_parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.parameter_count();
        return n;
    }

    // Static shape propagation. Returns the per-sample output shape of each
    // layer; throws ConfigError naming the first inconsistent layer.
    std::vector<Shape> output_shapes() const { return propagate(*this); }

    void validate() const { (void)output_shapes(); }

    // Rewrites every conv/linear `in` from the shape actually feeding it.
    // Used after width rescaling.
    void rewire_inputs() { propagate(*this); }

private:
    template <class Self>
    static std::vector<Shape> propagate(Self& self) {
        constexpr bool fix_inputs = !std::is_const_v<Self>;
        const auto& name = self.name;
        const auto& input_shape = self.input_shape;
        auto& layers = self.layers;
        if (layers.empty()) throw ConfigError(name + ": architecture has no layers");
        if (input_shape.empty() || shape_size(input_shape) == 0)
            throw ConfigError(name + ": empty input shape");
        std::size_t first_count = 0;
        for (const auto& l : layers) first_count += l.first_layer ? 1 : 0;
        if (first_count != 1) throw ConfigError(name + ": exactly one layer must be flagged first_layer");

        std::vector<Shape> shapes(layers.size());
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto& l = layers[i];
            auto fail = [&](const std::string& why) -> ConfigError {
                return ConfigError(name + ": layer " + std::to_string(i) + " (" + l.name + ", " +
                                   to_string(l.kind) + "): " + why);
            };
            if (l.first_layer && !l.maskable()) throw fail("first_layer must be conv2d or linear");
            auto producers = self.inputs_of(i);
            std::vector<Shape> in_shapes;
            for (int p : producers) {
                if (p == kNetworkInput) {
                    in_shapes.push_back(input_shape);
                } else if (p < 0 || static_cast<std::size_t>(p) >= i) {
                    throw fail("input index " + std::to_string(p) + " does not refer to an earlier layer");
                } else {
                    in_shapes.push_back(shapes[static_cast<std::size_t>(p)]);
                }
            }
            const std::size_t expected_inputs = l.kind == LayerKind::add_residual ? 2 : 1;
            if (in_shapes.size() != expected_inputs)
                throw fail("expects " + std::to_string(expected_inputs) + " input(s)");
            const Shape& x = in_shapes[0];

            switch (l.kind) {
                case LayerKind::conv2d: {
                    if (x.size() != 3) throw fail("expects [C,H,W] input, got " + shape_str(x));
                    if constexpr (fix_inputs) l.in = x[0];
                    if (x[0] != l.in)
                        throw fail("input has " + std::to_string(x[0]) + " channels, layer expects " +
                                   std::to_string(l.in));
                    if (l.out == 0 || l.in == 0) throw fail("zero channels");
                    if (l.stride == 0 || l.kernel_h == 0 || l.kernel_w == 0) throw fail("zero kernel or stride");
                    if (x[1] + 2 * l.padding < l.kernel_h || x[2] + 2 * l.padding < l.kernel_w)
                        throw fail("kernel larger than padded input");
                    shapes[i] = {l.out, (x[1] + 2 * l.padding - l.kernel_h) / l.stride + 1,
                                 (x[2] + 2 * l.padding - l.kernel_w) / l.stride + 1};
                    break;
                }
                case LayerKind::linear: {
                    const std::size_t features = shape_size(x);
                    if (x.size() != 1 && !(i == 0 && producers[0] == kNetworkInput))
                        throw fail("expects flat input, got " + shape_str(x));
                    if constexpr (fix_inputs) l.in = features;
                    if (features != l.in)
                        throw fail("input has " + std::to_string(features) + " features, layer expects " +
                                   std::to_string(l.in));
                    if (l.out == 0 || l.in == 0) throw fail("zero features");
                    shapes[i] = {l.out};
                    break;
                }
                case LayerKind::relu:
                case LayerKind::norm:
                    shapes[i] = x;
                    break;
                case LayerKind::maxpool2d:
                case LayerKind::avgpool2d: {
                    if (x.size() != 3) throw fail("expects [C,H,W] input, got " + shape_str(x));
                    if (l.stride == 0 || l.kernel_h == 0 || l.kernel_w == 0) throw fail("zero kernel or stride");
                    if (x[1] < l.kernel_h || x[2] < l.kernel_w) throw fail("pool window larger than input");
                    shapes[i] = {x[0], (x[1] - l.kernel_h) / l.stride + 1, (x[2] - l.kernel_w) / l.stride + 1};
                    break;
                }
                case LayerKind::flatten:
                    shapes[i] = {shape_size(x)};
                    break;
                case LayerKind::add_residual:
                    if (in_shapes[0] != in_shapes[1])
                        throw fail("residual operands differ: " + shape_str(in_shapes[0]) + " vs " +
                                   shape_str(in_shapes[1]));
                    shapes[i] = x;
                    break;
            }
        }
        if (shapes.back() != Shape{self.class_count})
            throw ConfigError(name + ": final output " + shape_str(shapes.back()) + " does not match " +
                              std::to_string(self.class_count) + " classes");
        return shapes;
    }
};

namespace detail {

struct SpecBuilder {
    ArchSpec spec;

    int last() const { return static_cast<int>(spec.layers.size()) - 1; }

    int add(LayerDecl d, std::vector<int> inputs = {}) {
        d.inputs = std::move(inputs);
        spec.layers.push_back(std::move(d));
        return last();
    }

    int conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
             std::size_t pad, bool bias, int input, bool first = false) {
        LayerDecl d;
        d.kind = LayerKind::conv2d;
        d.name = name;
        d.in = in;
        d.out = out;
        d.kernel_h = d.kernel_w = k;
        d.stride = stride;
        d.padding = pad;
        d.bias = bias;
        d.first_layer = first;
        return add(d, {input});
    }

    int linear(const std::string& name, std::size_t in, std::size_t out, int input, bool first = false) {
        LayerDecl d;
        d.kind = LayerKind::linear;
        d.name = name;
        d.in = in;
        d.out = out;
        d.first_layer = first;
        return add(d, {input});
    }

    int simple(LayerKind kind, const std::string& name, int input) {
        LayerDecl d;
        d.kind = kind;
        d.name = name;
        return add(d, {input});
    }

    int pool(LayerKind kind, const std::string& name, std::size_t k, std::size_t stride, int input) {
        LayerDecl d;
        d.kind = kind;
        d.name = name;
        d.kernel_h = d.kernel_w = k;
        d.stride = stride;
        return add(d, {input});
    }

    int residual(const std::string& name, int a, int b) {
        LayerDecl d;
        d.kind = LayerKind::add_residual;
        d.name = name;
        return add(d, {a, b});
    }
};

}  // namespace detail

// Wide ResNet for 32x32 inputs. depth = 6n + 4 with n basic blocks per group.
// Norm layers are identity markers; convs carry no bias.
inline ArchSpec build_wrn(std::size_t depth, std::size_t width, std::size_t classes = 10) {
    if (depth < 10 || (depth - 4) % 6 != 0) throw InputError("WRN depth must be 6n+4");
    const std::size_t n = (depth - 4) / 6;
    detail::SpecBuilder b;
    b.spec.name = "wrn-" + std::to_string(depth) + "-" + std::to_string(width);
    b.spec.input_shape = {3, 32, 32};
    b.spec.class_count = classes;

    int x = b.conv("conv1", 3, 16, 3, 1, 1, false, kNetworkInput, true);
    x = b.simple(LayerKind::norm, "bn1", x);
    x = b.simple(LayerKind::relu, "relu1", x);

    std::size_t in = 16;
    const std::size_t widths[3] = {16 * width, 32 * width, 64 * width};
    const std::size_t strides[3] = {1, 2, 2};
    for (std::size_t g = 0; g < 3; ++g) {
        for (std::size_t blk = 0; blk < n; ++blk) {
            const std::string p = "group" + std::to_string(g + 1) + ".block" + std::to_string(blk + 1) + ".";
            const std::size_t out = widths[g];
            const std::size_t s = blk == 0 ? strides[g] : 1;
            const int block_in = x;
            int y = b.conv(p + "conv1", in, out, 3, s, 1, false, block_in);
            y = b.simple(LayerKind::norm, p + "bn1", y);
            y = b.simple(LayerKind::relu, p + "relu1", y);
            y = b.conv(p + "conv2", out, out, 3, 1, 1, false, y);
            y = b.simple(LayerKind::norm, p + "bn2", y);
            int skip = block_in;
            if (in != out || s != 1) {
                skip = b.conv(p + "shortcut", in, out, 1, s, 0, false, block_in);
                skip = b.simple(LayerKind::norm, p + "shortcut_bn", skip);
            }
            x = b.residual(p + "add", y, skip);
            x = b.simple(LayerKind::relu, p + "relu2", x);
            in = out;
        }
    }
    x = b.pool(LayerKind::avgpool2d, "avgpool", 8, 8, x);
    x = b.simple(LayerKind::flatten, "flatten", x);
    b.linear("fc", in, classes, x);
    b.spec.validate();
    return b.spec;
}

inline ArchSpec build_wrn_22_2() { return build_wrn(22, 2, 10); }

// ResNet-50 for 32x32 CIFAR-100: a single 3x3/64 stride-1 stem, bottleneck
// stacks {3,4,6,3}, downsampling on the 3x3 conv of the first block of stages
// 3-5, 1x1 projection shortcuts where shape changes.
inline ArchSpec build_resnet50_cifar(std::size_t classes = 100) {
    detail::SpecBuilder b;
    b.spec.name = "resnet50-cifar";
    b.spec.input_shape = {3, 32, 32};
    b.spec.class_count = classes;

    int x = b.conv("conv1", 3, 64, 3, 1, 1, false, kNetworkInput, true);
    x = b.simple(LayerKind::norm, "bn1", x);
    x = b.simple(LayerKind::relu, "relu1", x);

    struct Stage {
        std::size_t mid, out, blocks, stride;
    };
    const Stage stages[4] = {{64, 256, 3, 1}, {128, 512, 4, 2}, {256, 1024, 6, 2}, {512, 2048, 3, 2}};
    std::size_t in = 64;
    for (std::size_t si = 0; si < 4; ++si) {
        const auto& st = stages[si];
        for (std::size_t blk = 0; blk < st.blocks; ++blk) {
            const std::string p = "conv" + std::to_string(si + 2) + "_" + std::to_string(blk + 1) + ".";
            const std::size_t s = blk == 0 ? st.stride : 1;
            const int block_in = x;
            int y = b.conv(p + "conv1", in, st.mid, 1, 1, 0, false, block_in);
            y = b.simple(LayerKind::norm, p + "bn1", y);
            y = b.simple(LayerKind::relu, p + "relu1", y);
            y = b.conv(p + "conv2", st.mid, st.mid, 3, s, 1, false, y);
            y = b.simple(LayerKind::norm, p + "bn2", y);
            y = b.simple(LayerKind::relu, p + "relu2", y);
            y = b.conv(p + "conv3", st.mid, st.out, 1, 1, 0, false, y);
            y = b.simple(LayerKind::norm, p + "bn3", y);
            int skip = block_in;
            if (in != st.out || s != 1) {
                skip = b.conv(p + "shortcut", in, st.out, 1, s, 0, false, block_in);
                skip = b.simple(LayerKind::norm, p + "shortcut_bn", skip);
            }
            x = b.residual(p + "add", y, skip);
            x = b.simple(LayerKind::relu, p + "relu3", x);
            in = st.out;
        }
    }
    x = b.pool(LayerKind::avgpool2d, "avgpool", 4, 4, x);
    x = b.simple(LayerKind::flatten, "flatten", x);
    b.linear("fc", in, classes, x);
    b.spec.validate();
    return b.spec;
}

inline ArchSpec build_mlp(const std::vector<std::size_t>& dims) {
    if (dims.size() < 2) throw InputError("MLP needs at least an input and an output width");
    for (auto d : dims)
        if (d == 0) throw InputError("MLP widths must be positive");
    detail::SpecBuilder b;
    b.spec.name = "mlp";
    for (auto d : dims) b.spec.name += "-" + std::to_string(d);
    b.spec.input_shape = {dims.front()};
    b.spec.class_count = dims.back();
    int x = kNetworkInput;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        if (i > 0) x = b.simple(LayerKind::relu, "relu" + std::to_string(i), x);
        x = b.linear("fc" + std::to_string(i + 1), dims[i], dims[i + 1], x, i == 0);
    }
    b.spec.validate();
    return b.spec;
}

// Two 3x3 convs (each followed by relu and 2x2 max-pool) and two linear layers.
inline ArchSpec build_small_cnn(const Shape& input_shape = {3, 32, 32}, std::size_t classes = 10,
                                std::size_t c1 = 16, std::size_t c2 = 32, std::size_t hidden = 128) {
    if (input_shape.size() != 3) throw InputError("small CNN expects a [C,H,W] input shape");
    detail::SpecBuilder b;
    b.spec.name = "small-cnn";
    b.spec.input_shape = input_shape;
    b.spec.class_count = classes;
    int x = b.conv("conv1", input_shape[0], c1, 3, 1, 1, true, kNetworkInput, true);
    x = b.simple(LayerKind::relu, "relu1", x);
    x = b.pool(LayerKind::maxpool2d, "pool1", 2, 2, x);
    x = b.conv("conv2", c1, c2, 3, 1, 1, true, x);
    x = b.simple(LayerKind::relu, "relu2", x);
    x = b.pool(LayerKind::maxpool2d, "pool2", 2, 2, x);
    x = b.simple(LayerKind::flatten, "flatten", x);
    const std::size_t flat = c2 * (input_shape[1] / 4) * (input_shape[2] / 4);
    x = b.linear("fc1", flat, hidden, x);
    x = b.simple(LayerKind::relu, "relu3", x);
    b.linear("fc2", hidden, classes, x);
    b.spec.validate();
    return b.spec;
}

namespace detail {

// Index of the classifier: the layer producing the network output.
inline std::size_t classifier_index(const ArchSpec& spec) {
    for (std::size_t i = spec.layers.size(); i-- > 0;)
        if (spec.layers[i].maskable()) return i;
    throw ConfigError(spec.name + ": no conv/linear layer");
}

// Widths scaled by gamma; any zero-width layer makes the result invalid.
inline std::optional<ArchSpec> scale_widths(const ArchSpec& spec, double gamma) {
    ArchSpec out = spec;
    const std::size_t cls = classifier_index(spec);
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
        auto& l = out.layers[i];
        if (!l.maskable() || i == cls) continue;
        const auto w = static_cast<std::size_t>(std::llround(gamma * static_cast<double>(l.out)));
        if (w == 0) return std::nullopt;
        l.out = w;
    }
    out.rewire_inputs();
    return out;
}

}  // namespace detail

// Small-dense baseline: all hidden widths times one global factor, chosen by
// bisection so the weight count is as close as possible to density * N.
inline ArchSpec scale_small_dense(const ArchSpec& spec, double density) {
    if (!(density > 0.0 && density <= 1.0)) throw InputError("small-dense density must be in (0, 1]");
    if (density == 1.0) return spec;
    const double target = density * static_cast<double>(spec.maskable_parameter_count());
    auto count = [&](double g) -> double {
        auto s = detail::scale_widths(spec, g);
        return s ? static_cast<double>(s->maskable_parameter_count()) : -1.0;
    };
    double lo = 0.0, hi = 1.0;  // count(lo) < target <= count(hi)
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (count(mid) < target) lo = mid;
        else hi = mid;
    }
    const double c_hi = count(hi), c_lo = count(lo);
    // Below the smallest valid width the closer fit would need zero channels.
    if (c_lo < 0.0 && c_hi > 1.01 * target)
        throw InputError("density " + std::to_string(density) + " rounds some layer of " + spec.name +
                         " to zero channels");
    const double gamma = (c_lo >= 0.0 && target - c_lo < c_hi - target) ? lo : hi;
    auto scaled = detail::scale_widths(spec, gamma);
    if (!scaled)
        throw InputError("density " + std::to_string(density) + " rounds some layer of " + spec.name +
                         " to zero channels");
    scaled->name = spec.name + "-small-dense";
    return *scaled;
}

// ---- JSON architecture files ------------------------------------------------

inline void to_json(nlohmann::json& j, const LayerDecl& l) {
    j = nlohmann::json{{"kind", to_string(l.kind)}, {"name", l.name}};
    if (!l.inputs.empty()) j["inputs"] = l.inputs;
    if (l.maskable()) {
        j["in"] = l.in;
        j["out"] = l.out;
        j["bias"] = l.bias;
        j["maskable"] = true;
        j["first_layer"] = l.first_layer;
    }
    if (l.kind == LayerKind::conv2d || l.kind == LayerKind::maxpool2d || l.kind == LayerKind::avgpool2d) {
        j["kernel"] = {l.kernel_h, l.kernel_w};
        j["stride"] = l.stride;
    }
    if (l.kind == LayerKind::conv2d) j["padding"] = l.padding;
}

inline void from_json(const nlohmann::json& j, LayerDecl& l) {
    l = LayerDecl{};
    l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    l.name = j.value("name", std::string{});
    l.inputs = j.value("inputs", std::vector<int>{});
    l.in = j.value("in", std::size_t{0});
    l.out = j.value("out", std::size_t{0});
    l.bias = j.value("bias", true);
    l.first_layer = j.value("first_layer", false);
    if (j.contains("kernel")) {
        const auto& k = j.at("kernel");
        if (k.is_array()) {
            l.kernel_h = k.at(0).get<std::size_t>();
            l.kernel_w = k.at(1).get<std::size_t>();
        } else {
            l.kernel_h = l.kernel_w = k.get<std::size_t>();
        }
    }
    l.stride = j.value("stride", std::size_t{1});
    l.padding = j.value("padding", std::size_t{0});
    if (j.contains("maskable") && j.at("maskable").get<bool>() != l.maskable())
        throw InputError("layer '" + l.name + "': maskable flag must be true exactly for conv2d/linear");
}

inline void to_json(nlohmann::json& j, const ArchSpec& s) {
    j = nlohmann::json{{"name", s.name},
                       {"input_shape", s.input_shape},
                       {"class_count", s.class_count},
                       {"layers", s.layers}};
}

inline void from_json(const nlohmann::json& j, ArchSpec& s) {
    s.name = j.value("name", std::string{"arch"});
    s.input_shape = j.at("input_shape").get<Shape>();
    s.class_count = j.at("class_count").get<std::size_t>();
    s.layers = j.at("layers").get<std::vector<LayerDecl>>();
    s.validate();
}

}  // namespace rigl
