#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rigl/loss.hpp"
#include "rigl/nn.hpp"
#include "rigl/optim.hpp"

using namespace rigl;

namespace {

// conv -> norm -> relu -> (conv + 1x1 shortcut) -> maxpool -> avgpool -> flatten -> fc
ArchSpec residual_toy() {
    detail::SpecBuilder b;
    b.spec.name = "toy";
    b.spec.input_shape = {2, 6, 6};
    b.spec.class_count = 3;
    int x = b.conv("c1", 2, 3, 3, 1, 1, true, kNetworkInput, true);
    x = b.simple(LayerKind::norm, "n1", x);
    x = b.simple(LayerKind::relu, "r1", x);
    int main = b.conv("c2", 3, 4, 3, 1, 1, false, x);
    int sc = b.conv("sc", 3, 4, 1, 1, 0, false, x);
    x = b.residual("add", main, sc);
    x = b.pool(LayerKind::maxpool2d, "mp", 2, 2, x);
    x = b.pool(LayerKind::avgpool2d, "ap", 3, 3, x);
    x = b.simple(LayerKind::flatten, "flat", x);
    b.linear("fc", 4, 3, x);
    b.spec.validate();
    return b.spec;
}

Tensor random_input(const Shape& shape, std::uint64_t seed) {
    Tensor t(shape);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& v : t.values) v = d(rng);
    return t;
}

double loss_of(Network& net, const Tensor& x, const std::vector<std::size_t>& y) {
    return cross_entropy_with_label_smoothing(net.forward(x, false), y, 0.1).loss;
}

}  // namespace

TEST(Kernels, DotMatchesNaiveSum) {
    std::vector<double> a(37), b(37);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = 0.1 * static_cast<double>(i) - 1.0;
        b[i] = std::sin(static_cast<double>(i));
    }
    double naive = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) naive += a[i] * b[i];
    EXPECT_NEAR(kernels::dot(a.data(), b.data(), a.size()), naive, 1e-12);
}

TEST(Kernels, Col2imIsAdjointOfIm2col) {
    kernels::ConvGeometry g{2, 5, 4, 3, 3, 2, 1, 3, 2};
    std::mt19937_64 rng(3);
    std::normal_distribution<double> d;
    std::vector<double> x(g.c_in * g.h * g.w);
    std::vector<double> c(g.rows() * g.cols());
    for (auto& v : x) v = d(rng);
    for (auto& v : c) v = d(rng);
    std::vector<double> cols(c.size()), back(x.size(), 0.0);
    kernels::im2col(x.data(), g, cols.data());
    kernels::col2im_add(c.data(), g, back.data());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) lhs += cols[i] * c[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Network, OutputShapeAndDeterministicInit) {
    Network a(residual_toy(), 5), b(residual_toy(), 5), c(residual_toy(), 6);
    EXPECT_EQ(a.weights()[0].values, b.weights()[0].values);
    EXPECT_NE(a.weights()[0].values, c.weights()[0].values);
    const Tensor out = a.forward(random_input({4, 2, 6, 6}, 1));
    EXPECT_EQ(out.shape, (Shape{4, 3}));
}

TEST(Network, GradientsMatchCentralDifferences) {
    Network net(residual_toy(), 11);
    for (auto& b : net.biases())
        for (auto& v : b.values) v = 0.05;
    const Tensor x = random_input({2, 2, 6, 6}, 2);
    const std::vector<std::size_t> y{0, 2};
    const Tensor logits = net.forward(x);
    net.backward(cross_entropy_with_label_smoothing(logits, y, 0.1).logits_grad);

    const double eps = 1e-5;
    for (auto p : net.parameters()) {
        Tensor& t = *p.tensor;
        const std::vector<double> analytic = t.grad;
        for (std::size_t i = 0; i < t.size(); i += 3) {
            const double w = t.values[i];
            t.values[i] = w + eps;
            const double up = loss_of(net, x, y);
            t.values[i] = w - eps;
            const double down = loss_of(net, x, y);
            t.values[i] = w;
            EXPECT_NEAR(analytic[i], (up - down) / (2 * eps), 1e-6) << "param index " << i;
        }
    }
}

TEST(Network, ZeroedWeightsStillReceiveGradient) {
    Network net(build_mlp({4, 5, 3}), 1);
    auto& w = net.weights()[1].values;
    for (std::size_t i = 0; i < w.size(); i += 2) w[i] = 0.0;
    const Tensor logits = net.forward(random_input({3, 4}, 9));
    net.backward(cross_entropy_with_label_smoothing(logits, std::vector<std::size_t>{0, 1, 2}).logits_grad);
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < w.size(); i += 2) nonzero += net.weights()[1].grad[i] != 0.0;
    EXPECT_GT(nonzero, 0u);
}

TEST(Network, InputMismatchNamesFirstLayer) {
    Network net(build_mlp({4, 3}), 0);
    try {
        net.forward(Tensor({2, 5}));
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
    }
}

TEST(Network, BackwardWithoutForwardIsStateError) {
    Network net(build_mlp({4, 3}), 0);
    EXPECT_THROW(net.backward(Tensor({1, 3})), StateError);
    net.forward(Tensor({1, 4}), false);
    EXPECT_THROW(net.backward(Tensor({1, 3})), StateError);
}

TEST(Loss, HandComputedValueWithSmoothing) {
    Tensor logits({1, 3}, std::vector<double>{1.0, 2.0, 3.0});
    const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    const double s = 0.1;
    const double q0 = s / 3, q1 = s / 3, q2 = 1 - s + s / 3;
    const double expected = -(q0 * (1 - lse) + q1 * (2 - lse) + q2 * (3 - lse));
    const auto r = cross_entropy_with_label_smoothing(logits, std::size_t{2}, s);
    EXPECT_NEAR(r.loss, expected, 1e-14);
    double sum = 0.0;
    for (double g : r.logits_grad.values) sum += g;
    EXPECT_NEAR(sum, 0.0, 1e-15);
}

TEST(Loss, RejectsOutOfRangeTarget) {
    Tensor logits({2, 3});
    EXPECT_THROW(cross_entropy_with_label_smoothing(logits, std::vector<std::size_t>{0, 3}), InputError);
    EXPECT_THROW(cross_entropy_with_label_smoothing(logits, std::vector<std::size_t>{0}), InputError);
}

TEST(Sgd, TwoStepsOfMomentumByHand) {
    Tensor w({2}, std::vector<double>{1.0, -2.0});
    w.grad = {0.5, 0.25};
    std::vector<ParamRef> params{{&w, std::nullopt}};
    SgdState s;
    s.momentum = 0.9;
    s.learning_rate = 0.1;
    s.weight_decay = 0.01;
    sgd_step(s, params, nullptr);
    // b = g + wd*w
    const double b0 = 0.5 + 0.01 * 1.0;
    EXPECT_DOUBLE_EQ(w.values[0], 1.0 - 0.1 * b0);
    const double w1 = w.values[0];
    sgd_step(s, params, nullptr);
    const double b1 = 0.9 * b0 + 0.5 + 0.01 * w1;
    EXPECT_DOUBLE_EQ(w.values[0], w1 - 0.1 * b1);
}

TEST(Sgd, MaskKeepsWeightsZeroAndBufferModeControlsMomentum) {
    ArchSpec spec = build_mlp({2, 2});
    MaskSet masks = dense_masks(spec);
    masks[0].deactivate(1);
    for (auto mode : {BufferMode::sparse, BufferMode::dense}) {
        Tensor w({2, 2}, std::vector<double>{1.0, 0.0, 1.0, 1.0});
        w.grad = {0.1, 0.2, 0.3, 0.4};
        std::vector<ParamRef> params{{&w, 0}};
        SgdState s;
        s.buffer_mode = mode;
        sgd_step(s, params, &masks);
        sgd_step(s, params, &masks);
        EXPECT_EQ(w.values[1], 0.0);
        if (mode == BufferMode::sparse) {
            EXPECT_EQ(s.buffers[0][1], 0.0);
        } else {
            EXPECT_GT(s.buffers[0][1], 0.0);
        }
    }
}

TEST(Sgd, RejectsMomentumOutsideUnitInterval) {
    Tensor w({1}, 1.0);
    w.zero_grad();
    std::vector<ParamRef> params{{&w, std::nullopt}};
    SgdState s;
    s.momentum = 1.0;
    EXPECT_THROW(sgd_step(s, params, nullptr), InputError);
}

TEST(LrSchedule, WarmupRampsLinearlyThenDecays) {
    LrSchedule lr{0.1, 10, {50, 75}, 0.2};
    EXPECT_DOUBLE_EQ(lr.at(0), 0.01);
    EXPECT_DOUBLE_EQ(lr.at(9), 0.1);
    EXPECT_DOUBLE_EQ(lr.at(10), 0.1);
    EXPECT_DOUBLE_EQ(lr.at(49), 0.1);
    EXPECT_DOUBLE_EQ(lr.at(50), 0.1 * 0.2);
    EXPECT_DOUBLE_EQ(lr.at(80), 0.1 * 0.2 * 0.2);
}
