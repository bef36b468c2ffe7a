#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dregnet/data/data.hpp"
#include "dregnet/dreg/dreg.hpp"
#include "dregnet/errors.hpp"
#include "dregnet/nn/layers.hpp"

using namespace dregnet;
using nn::Path;

namespace {

Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = n(rng);
    return Tensor(s, std::move(v));
}

nn::Network small_mlp(std::uint64_t seed) {
    nn::Network net({4});
    net.emplace<nn::Dense>(4, 6);
    net.emplace<nn::Relu>();
    net.emplace<nn::Dense>(6, 6);
    net.emplace<nn::Relu>();
    net.emplace<nn::Dense>(6, 3);
    net.initialize(seed);
    return net;
}

/// Random orthogonal n×n matrix by Gram-Schmidt.
Tensor random_orthogonal(std::size_t n, std::mt19937_64& rng) {
    Tensor q = random_tensor({n, n}, rng);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t p = 0; p < c; ++p) {
            double dot = 0.0;
            for (std::size_t r = 0; r < n; ++r) dot += q[r * n + c] * q[r * n + p];
            for (std::size_t r = 0; r < n; ++r) q[r * n + c] -= dot * q[r * n + p];
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < n; ++r) norm += q[r * n + c] * q[r * n + c];
        for (std::size_t r = 0; r < n; ++r) q[r * n + c] /= std::sqrt(norm);
    }
    return q;
}

}  // namespace

TEST(InitDreg, RejectsNonPositiveEpsilon) {
    EXPECT_THROW(dreg::init_dreg(Tensor({2, 2}, 1.0), 0.0, 1), std::invalid_argument);
    EXPECT_THROW(dreg::init_dreg(Tensor({2, 2}, 1.0), -1e-3, 1), std::invalid_argument);
}

TEST(InitDreg, ZeroBaseGivesSmallPositiveDistance) {
    const Tensor base = Tensor::zeros({8, 5});
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto [w_r, w_l] = dreg::init_dreg(base, 1e-2, seed);
        EXPECT_EQ(w_r, base);
        const double d = dreg::dreg_loss(w_r, w_l);
        EXPECT_GT(d, 0.0);
        EXPECT_LT(d, 1e-2 * static_cast<double>(base.size()));
    }
}

TEST(InitDreg, DeterministicPerSeed) {
    std::mt19937_64 rng(2);
    const Tensor base = random_tensor({3, 3}, rng);
    EXPECT_EQ(dreg::init_dreg(base, 1e-2, 7), dreg::init_dreg(base, 1e-2, 7));
    EXPECT_NE(dreg::init_dreg(base, 1e-2, 7).second, dreg::init_dreg(base, 1e-2, 8).second);
}

TEST(DregLoss, Examples) {
    const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
    const Tensor b = Tensor::from_rows({{0, 2}, {3, 3}});
    EXPECT_EQ(dreg::dreg_loss(a, a), 0.0);
    EXPECT_EQ(dreg::dreg_loss(a, b), 2.0);
    EXPECT_EQ(dreg::dreg_loss(a, b), dreg::dreg_loss(b, a));
    EXPECT_THROW(dreg::dreg_loss(a, Tensor({4})), ShapeError);
}

TEST(DregGrad, Examples) {
    const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
    const auto [zr, zl] = dreg::dreg_grad(a, a);
    EXPECT_EQ(zr, Tensor::zeros({2, 2}));
    EXPECT_EQ(zl, Tensor::zeros({2, 2}));
    const auto [gr, gl] = dreg::dreg_grad(add(a, Tensor::identity(2)), a);
    EXPECT_EQ(gr, Tensor::from_rows({{2, 0}, {0, 2}}));
    EXPECT_EQ(gl, Tensor::from_rows({{-2, 0}, {0, -2}}));
    EXPECT_THROW(dreg::dreg_grad(a, Tensor({2, 3})), ShapeError);
}

TEST(DregGrad, Antisymmetric) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 30; ++i) {
        const auto [gr, gl] = dreg::dreg_grad(random_tensor({3, 2}, rng), random_tensor({3, 2}, rng));
        EXPECT_EQ(add(gr, gl), Tensor::zeros({3, 2}));
    }
}

TEST(DregUpdate, ZeroGradsGrowDistanceBy104) {
    std::mt19937_64 rng(6);
    const Tensor w_r = random_tensor({3, 3}, rng), w_l = random_tensor({3, 3}, rng);
    const Tensor zero = Tensor::zeros({3, 3});
    const auto [nr, nl] = dreg::dreg_update(w_r, w_l, zero, zero, 0.1, 0.1);
    EXPECT_LE(max_abs(sub(sub(nr, nl), scale(sub(w_r, w_l), 1.04))), 1e-15);
}

TEST(DregUpdate, LambdaZeroIsTwoSgdSteps) {
    std::mt19937_64 rng(7);
    const Tensor w_r = random_tensor({4}, rng), w_l = random_tensor({4}, rng);
    const Tensor g_r = random_tensor({4}, rng), g_l = random_tensor({4}, rng);
    const auto [nr, nl] = dreg::dreg_update(w_r, w_l, g_r, g_l, 0.05, 0.0);
    EXPECT_EQ(nr, sub(w_r, scale(g_r, 0.05)));
    EXPECT_EQ(nl, sub(w_l, scale(g_l, 0.05)));
}

TEST(DregUpdate, EqualWeightsAndGradsStayEqual) {
    std::mt19937_64 rng(8);
    const Tensor w = random_tensor({2, 3}, rng), g = random_tensor({2, 3}, rng);
    const auto [nr, nl] = dreg::dreg_update(w, w, g, g, 0.1, 0.5);
    EXPECT_EQ(nr, nl);
}

TEST(DregUpdate, RejectsNonFiniteAndBadShapes) {
    const double huge = std::numeric_limits<double>::max();
    EXPECT_THROW(dreg::dreg_update(Tensor({1}, huge), Tensor({1}, -huge), Tensor({1}), Tensor({1}), 1.0, 1.0),
                 NonFiniteError);
    EXPECT_THROW(dreg::dreg_update(Tensor({2}), Tensor({2}), Tensor({3}), Tensor({2}), 0.1, 0.1), ShapeError);
}

TEST(DregUpdate, RotationEquivariant) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor q = random_orthogonal(4, rng);
        const Tensor w_r = random_tensor({4, 3}, rng), w_l = random_tensor({4, 3}, rng);
        const Tensor s_r = random_tensor({4, 3}, rng), s_l = random_tensor({4, 3}, rng);
        const auto [nr, nl] = dreg::dreg_update(w_r, w_l, s_r, s_l, 0.07, 0.3);
        const auto [rr, rl] = dreg::dreg_update(matmul(q, w_r), matmul(q, w_l), matmul(q, s_r), matmul(q, s_l), 0.07, 0.3);
        EXPECT_LE(max_abs(sub(rr, matmul(q, nr))), 1e-12);
        EXPECT_LE(max_abs(sub(rl, matmul(q, nl))), 1e-12);
        EXPECT_NEAR(frobenius(sub(rr, rl)), frobenius(sub(nr, nl)), 1e-12);

        const dreg::TraceStep plain{w_r, w_l, s_r, s_l, 0.07, 0.3};
        const dreg::TraceStep rotated{matmul(q, w_r), matmul(q, w_l), matmul(q, s_r), matmul(q, s_l), 0.07, 0.3};
        EXPECT_LE(dreg::decomposition_residual(plain, nr, nl), 1e-12);
        EXPECT_LE(dreg::decomposition_residual(rotated, rr, rl), 1e-12);
    }
}

TEST(Decomposition, LambdaZeroAndPureDregForms) {
    std::mt19937_64 rng(10);
    const Tensor w_r = random_tensor({3}, rng), w_l = random_tensor({3}, rng);
    const Tensor s_r = random_tensor({3}, rng), s_l = random_tensor({3}, rng);
    {
        const auto [nr, nl] = dreg::dreg_update(w_r, w_l, s_r, s_l, 0.2, 0.0);
        const Tensor expected = sub(sub(w_r, w_l), scale(sub(s_r, s_l), 0.2));
        EXPECT_LE(max_abs(sub(sub(nr, nl), expected)), 1e-15);
    }
    {
        const Tensor zero = Tensor::zeros({3});
        const auto [nr, nl] = dreg::dreg_update(w_r, w_l, zero, zero, 0.1, 0.1);
        EXPECT_LE(dreg::decomposition_residual(dreg::TraceStep{w_r, w_l, zero, zero, 0.1, 0.1}, nr, nl), 1e-15);
    }
}

TEST(Decomposition, DetectsWrongUpdate) {
    std::mt19937_64 rng(11);
    const Tensor w_r = random_tensor({3}, rng), w_l = random_tensor({3}, rng);
    const Tensor s = random_tensor({3}, rng);
    auto wrong = [](const Tensor& a, const Tensor& b) {
        const Tensor d = scale(sub(a, b), 3.0);
        return std::make_pair(d, scale(d, -1.0));
    };
    const auto [nr, nl] = dreg::dreg_update(w_r, w_l, s, s, 0.1, 0.1, wrong);
    EXPECT_GT(dreg::decomposition_residual(dreg::TraceStep{w_r, w_l, s, s, 0.1, 0.1}, nr, nl), 1e-6);
}

TEST(Decomposition, MissingTensorsRejected) {
    const dreg::TraceStep empty{};
    EXPECT_THROW(dreg::decomposition_residual(empty, Tensor({2}), Tensor({2})), std::exception);
}

TEST(Positions, ParseAndLabel) {
    EXPECT_EQ(dreg::parse_position("Block-R1"), 0u);
    EXPECT_EQ(dreg::parse_position("Block-R3"), 2u);
    EXPECT_EQ(dreg::position_label(1), "Block-R2");
    EXPECT_THROW(dreg::parse_position("Block-R0"), UsageError);
    EXPECT_THROW(dreg::parse_position("R1"), UsageError);
    EXPECT_THROW(dreg::parse_position("Block-Rx"), UsageError);
}

TEST(Attach, PositionAndParameterShape) {
    nn::Network net = small_mlp(1);
    const auto before = net.layer(2).parameters()[0]->value;
    EXPECT_EQ(dreg::attach_at(net, "Block-R1", 1e-2, 3), 2u);
    const auto* layer = dynamic_cast<const dreg::DRegLayer*>(net.dual_layer());
    ASSERT_NE(layer, nullptr);
    EXPECT_EQ(layer->inner_kind(), nn::LayerKind::Dense);
    EXPECT_EQ(layer->w_r().value, before);
    EXPECT_GT(layer->distance_sq(), 0.0);
    EXPECT_EQ(layer->bias().role, nn::ParamRole::Shared);

    nn::Network other = small_mlp(1);
    EXPECT_EQ(dreg::attach_at(other, "Block-R2", 1e-2, 3), 0u);
    nn::Network third = small_mlp(1);
    EXPECT_THROW(dreg::attach_at(third, "Block-R3", 1e-2, 3), UsageError);
    EXPECT_THROW(dreg::attach(third, 1, 1e-2, 3), UsageError);
}

TEST(CrossPath, GradientsAreExactlyZero) {
    std::mt19937_64 rng(12);
    nn::Network net = small_mlp(2);
    dreg::attach_at(net, "Block-R1", 0.1, 4);
    const Tensor x = random_tensor({5, 4}, rng);
    const std::vector<int> labels{0, 1, 2, 1, 0};
    const auto cross = dreg::measure_cross_path_gradients(net, x, labels);
    EXPECT_EQ(max_abs(cross.l_wrt_r), 0.0);
    EXPECT_EQ(max_abs(cross.r_wrt_l), 0.0);

    // Sanity: the same-path gradients are not zero, so the masking is real.
    const auto eval = nn::evaluate_loss(net, net.forward(x), labels, 0.0);
    net.backward(eval.grad);
    auto* layer = dynamic_cast<dreg::DRegLayer*>(net.dual_layer());
    EXPECT_GT(max_abs(layer->w_r().grad), 0.0);
    EXPECT_GT(max_abs(layer->w_l().grad), 0.0);
}

TEST(SelectPath, TieGoesToR) {
    std::mt19937_64 rng(13);
    nn::Network net = small_mlp(3);
    const auto& base = dynamic_cast<const nn::Dense&>(net.layer(2));
    net.replace(2, std::make_unique<dreg::DRegLayer>(base, base.weight().value, base.weight().value));
    const Tensor x = random_tensor({10, 4}, rng);
    const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
    const auto sel = dreg::select_inference_path(net, x, labels);
    EXPECT_EQ(sel.chosen, Path::R);
    EXPECT_EQ(sel.accuracy_r, sel.accuracy_l);
    EXPECT_FALSE(sel.network.dual_index().has_value());
}

TEST(SelectPath, CorruptedLPathLoses) {
    auto ds = data::gen_blobs(3, 40, 12.0, 4, 1);
    nn::Network net = small_mlp(4);
    dreg::attach_at(net, "Block-R1", 1e-2, 5);
    // A few plain gradient steps so that R is good.
    for (int step = 0; step < 200; ++step) {
        const auto eval = nn::evaluate_loss(net, net.forward(ds.inputs), ds.labels, 0.0);
        net.backward(eval.grad);
        for (auto* p : net.parameters()) p->value = axpy(p->value, -0.05, p->grad);
    }
    std::mt19937_64 rng(14);
    auto* layer = dynamic_cast<dreg::DRegLayer*>(net.dual_layer());
    layer->w_l().value = random_tensor(layer->w_l().value.shape(), rng, 3.0);
    const auto sel = dreg::select_inference_path(net, ds.inputs, ds.labels);
    EXPECT_EQ(sel.chosen, Path::R);
    EXPECT_GT(sel.accuracy_r, sel.accuracy_l);
}

TEST(SelectPath, ForwardMatchesChosenBranchAndKeepsValues) {
    std::mt19937_64 rng(15);
    nn::Network net({1, 4, 4});
    net.emplace<nn::Conv2d>(1, 2, 3, 1, 1);
    net.emplace<nn::Relu>();
    net.emplace<nn::Conv2d>(2, 2, 3, 1, 1);
    net.emplace<nn::Flatten>();
    net.emplace<nn::Dense>(32, 3);
    net.initialize(6);
    const std::size_t base_count = net.parameter_count();
    dreg::attach_at(net, "Block-R1", 0.5, 7);
    const nn::Network snapshot = net;

    const Tensor x = random_tensor({12, 1, 4, 4}, rng);
    const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2};
    const auto sel = dreg::select_inference_path(net, x, labels);
    nn::Network chosen = sel.network;
    EXPECT_EQ(chosen.parameter_count(), base_count);
    EXPECT_EQ(chosen.forward(x).r, net.forward_path(x, sel.chosen));

    // The dual network is untouched and the kept weights are copied verbatim.
    const auto before = snapshot.parameters();
    const auto after = net.parameters();
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i]->value, after[i]->value);
    const auto* layer = dynamic_cast<const dreg::DRegLayer*>(net.dual_layer());
    EXPECT_EQ(chosen.layer(2).parameters()[0]->value, layer->weights(sel.chosen).value);
}

TEST(SelectPath, EmptyValidationRejected) {
    nn::Network net = small_mlp(1);
    dreg::attach_at(net, "Block-R1", 1e-2, 1);
    EXPECT_THROW(dreg::select_inference_path(net, Tensor({1, 4}), std::vector<int>{}), UsageError);
}

TEST(ClampDistance, CapsNormSymmetrically) {
    Tensor w_r({2}, {3.0, 0.0}), w_l({2}, {-3.0, 0.0});
    dreg::clamp_distance(w_r, w_l, 2.0);
    EXPECT_NEAR(frobenius(sub(w_r, w_l)), 2.0, 1e-15);
    EXPECT_NEAR(w_r[0] + w_l[0], 0.0, 1e-15);
    Tensor a({1}, 1.0), b({1}, 0.5);
    dreg::clamp_distance(a, b, 0.0);
    EXPECT_EQ(a[0], 1.0);
}
