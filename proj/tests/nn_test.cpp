#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dregnet/dreg/dreg.hpp"
#include "dregnet/errors.hpp"
#include "dregnet/nn/layers.hpp"
#include "dregnet/nn/network.hpp"
#include "dregnet/oracle/oracle.hpp"

using namespace dregnet;
using nn::Path;

namespace {

Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = n(rng);
    return Tensor(s, std::move(v));
}

double loss_of(nn::Network& net, const Tensor& x, const std::vector<int>& labels, double lambda) {
    return nn::evaluate_loss(net, net.forward(x), labels, lambda).breakdown.total;
}

void expect_gradcheck(nn::Network& net, const Tensor& x, const std::vector<int>& labels, double lambda) {
    const auto eval = nn::evaluate_loss(net, net.forward(x), labels, lambda);
    net.backward(eval.grad);
    const auto analytic = nn::composite_gradients(net, lambda);
    auto fn = [&](nn::Network& n) { return loss_of(n, x, labels, lambda); };
    for (std::size_t p = 0; p < analytic.size(); ++p) {
        const Tensor numeric = nn::finite_diff_grad(net, fn, p, 1e-6);
        for (std::size_t k = 0; k < numeric.size(); ++k) {
            const double a = analytic[p][k], n = numeric[k];
            EXPECT_LE(std::abs(a - n), std::max(1e-7, 1e-5 * std::max(std::abs(a), std::abs(n))))
                << "parameter " << p << " element " << k;
        }
    }
}

}  // namespace

TEST(Forward, IdentityDenseChain) {
    nn::Network net({3});
    net.emplace<nn::Dense>(Tensor::identity(3), Tensor::zeros({3}));
    net.emplace<nn::Dense>(Tensor::identity(3), Tensor::zeros({3}));
    const Tensor x = Tensor::from_rows({{1, -2, 3}, {0.5, 0, 4}});
    EXPECT_EQ(net.forward(x).r, x);
    EXPECT_FALSE(net.forward(x).dual());
}

TEST(Forward, SingleDenseHandValue) {
    nn::Network net({1});
    net.emplace<nn::Dense>(Tensor::from_rows({{2}}), Tensor::zeros({1}));
    EXPECT_EQ(net.forward(Tensor::from_rows({{3}})).r, Tensor::from_rows({{6}}));
}

TEST(Forward, EqualDualWeightsGiveEqualLogits) {
    std::mt19937_64 rng(1);
    nn::Network net({4});
    net.emplace<nn::Dense>(4, 5);
    net.emplace<nn::Relu>();
    net.emplace<nn::Dense>(5, 5);
    net.emplace<nn::Dense>(5, 3);
    net.initialize(9);
    const auto& base = dynamic_cast<const nn::Dense&>(net.layer(2));
    net.replace(2, std::make_unique<dreg::DRegLayer>(base, base.weight().value, base.weight().value));
    const auto out = net.forward(random_tensor({6, 4}, rng));
    ASSERT_TRUE(out.dual());
    EXPECT_EQ(out.r, *out.l);
}

TEST(Forward, ShapeMismatchRejected) {
    nn::Network net({4});
    net.emplace<nn::Dense>(4, 2);
    EXPECT_THROW(net.emplace<nn::Dense>(3, 2), ShapeError);
    EXPECT_THROW(net.forward(Tensor({2, 5})), ShapeError);
    nn::Network conv({1, 4, 4});
    EXPECT_THROW(conv.emplace<nn::Dense>(16, 2), ShapeError);
}

TEST(CrossEntropy, Examples) {
    const std::vector<int> one{2};
    EXPECT_NEAR(nn::cross_entropy(Tensor({1, 4}, 0.0), one), std::log(4.0), 1e-12);
    EXPECT_NEAR(nn::cross_entropy(Tensor({1, 4}, 0.0), one), 1.386294, 1e-6);
    EXPECT_LT(nn::cross_entropy(Tensor({1, 3}, {0.0, 0.0, 40.0}), one), 1e-6);
    const Tensor row({1, 3}, {0.3, -1.2, 2.0});
    const Tensor two({2, 3}, {0.3, -1.2, 2.0, 0.3, -1.2, 2.0});
    EXPECT_NEAR(nn::cross_entropy(two, std::vector<int>{1, 1}), nn::cross_entropy(row, std::vector<int>{1}), 1e-15);
}

TEST(CrossEntropy, LabelOutOfRange) {
    EXPECT_THROW(nn::cross_entropy(Tensor({1, 3}), std::vector<int>{3}), std::out_of_range);
    EXPECT_THROW(nn::cross_entropy(Tensor({1, 3}), std::vector<int>{-1}), std::out_of_range);
}

TEST(CrossEntropy, StableForHugeLogits) {
    const Tensor logits({1, 2}, {1000.0, -1000.0});
    EXPECT_NEAR(nn::cross_entropy(logits, std::vector<int>{0}), 0.0, 1e-12);
    EXPECT_NEAR(nn::cross_entropy(logits, std::vector<int>{1}), 2000.0, 1e-9);
}

TEST(CrossEntropy, GradMatchesOracle) {
    std::mt19937_64 rng(4);
    const Tensor logits = random_tensor({5, 4}, rng, 3.0);
    const std::vector<int> labels{0, 3, 1, 1, 2};
    EXPECT_LE(max_abs(sub(nn::cross_entropy_grad(logits, labels), oracle::softmax_xent_grad(logits, labels))), 1e-15);
}

TEST(Softmax, RowsSumToOne) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 20; ++i) {
        const Tensor p = nn::softmax(random_tensor({7, 5}, rng, 10.0));
        for (std::size_t r = 0; r < 7; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 5; ++c) s += p.at({r, c});
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Accuracy, TiesGoToLowerIndex) {
    const Tensor logits({2, 3}, {1.0, 1.0, 0.0, 0.0, 2.0, 2.0});
    EXPECT_EQ(nn::accuracy(logits, std::vector<int>{0, 1}), 1.0);
    EXPECT_EQ(nn::accuracy(logits, std::vector<int>{1, 2}), 0.0);
}

TEST(Backward, ScalarSquaredErrorChainRule) {
    // y = w x with loss (y - t)^2 through the engine's dense layer.
    nn::Network net({1});
    net.emplace<nn::Dense>(Tensor::from_rows({{2}}), Tensor::zeros({1}));
    const Tensor x = Tensor::from_rows({{3}});
    const Tensor y = net.forward(x).r;
    net.backward({scale(y, 2.0), std::nullopt});
    EXPECT_EQ(net.parameters()[0]->grad[0], 36.0);
    EXPECT_EQ(oracle::scalar_linear_sq_grad(2.0, 3.0, 0.0), 36.0);
    auto fn = [&](nn::Network& n) {
        const double v = n.forward(x).r[0];
        return v * v;
    };
    EXPECT_NEAR(nn::finite_diff_grad(net, fn, 0, 1e-5)[0], 36.0, 1e-6);
}

TEST(Backward, ChainThroughReluMatchesScalarOracle) {
    for (double w1 : {0.7, -0.4}) {
        nn::Network net({1});
        net.emplace<nn::Dense>(Tensor::from_rows({{w1}}), Tensor::zeros({1}));
        net.emplace<nn::Relu>();
        net.emplace<nn::Dense>(Tensor::from_rows({{1.3}}), Tensor::zeros({1}));
        const Tensor x = Tensor::from_rows({{2.0}});
        const Tensor y = net.forward(x).r;
        net.backward({scale(add_scalar(y, -0.5), 2.0), std::nullopt});
        const auto [d1, d2] = oracle::scalar_chain_sq_grad(w1, 1.3, 2.0, 0.5);
        EXPECT_NEAR(net.parameters()[0]->grad[0], d1, 1e-14);
        EXPECT_NEAR(net.parameters()[2]->grad[0], d2, 1e-14);
    }
}

TEST(Backward, RequiresForward) {
    nn::Network net({2});
    net.emplace<nn::Dense>(2, 2);
    EXPECT_THROW(net.backward({Tensor({1, 2}), std::nullopt}), UsageError);
    net.forward(Tensor({1, 2}));
    EXPECT_THROW(net.backward({Tensor({1, 2}), Tensor({1, 2})}), UsageError);
}

TEST(Backward, ConstantLossGivesZeroGradient) {
    nn::Network net({3});
    net.emplace<nn::Dense>(3, 2);
    net.initialize(1);
    net.forward(Tensor({4, 3}, 1.0));
    net.backward({Tensor::zeros({4, 2}), std::nullopt});
    for (const auto* p : net.parameters()) EXPECT_EQ(max_abs(p->grad), 0.0);
}

TEST(Backward, EqualPathsGiveEqualDualGradients) {
    std::mt19937_64 rng(12);
    nn::Network net({1, 4, 4});
    net.emplace<nn::Conv2d>(1, 2, 3, 1, 1);
    net.emplace<nn::Relu>();
    net.emplace<nn::Conv2d>(2, 2, 3, 1, 1);
    net.emplace<nn::Flatten>();
    net.emplace<nn::Dense>(32, 3);
    net.initialize(3);
    const nn::Network vanilla = net;
    const auto& base = dynamic_cast<const nn::Conv2d&>(net.layer(2));
    net.replace(2, std::make_unique<dreg::DRegLayer>(base, base.kernel().value, base.kernel().value));

    const Tensor x = random_tensor({4, 1, 4, 4}, rng);
    const std::vector<int> labels{0, 2, 1, 1};
    const auto eval = nn::evaluate_loss(net, net.forward(x), labels, 0.0);
    net.backward(eval.grad);
    auto* layer = dynamic_cast<dreg::DRegLayer*>(net.dual_layer());
    EXPECT_EQ(layer->w_r().grad, layer->w_l().grad);

    // Every shared parameter sees exactly twice the single-path gradient.
    nn::Network single = vanilla;
    const auto ev = nn::evaluate_loss(single, single.forward(x), labels, 0.0);
    single.backward(ev.grad);
    const auto dual_params = net.parameters();
    const auto single_params = single.parameters();
    std::size_t j = 0;
    for (const auto* p : dual_params) {
        if (p->role == nn::ParamRole::DualL) continue;
        if (p->role == nn::ParamRole::Shared) EXPECT_EQ(p->grad, scale(single_params[j]->grad, 2.0)) << p->name;
        else EXPECT_EQ(p->grad, single_params[j]->grad);
        ++j;
    }
}

TEST(FiniteDiff, Examples) {
    nn::Network net({1});
    net.emplace<nn::Dense>(Tensor::from_rows({{1.0}}), Tensor::zeros({1}));
    auto linear = [](nn::Network& n) { return 3.0 * n.parameters()[0]->value[0]; };
    auto quadratic = [](nn::Network& n) {
        const double w = n.parameters()[0]->value[0];
        return w * w;
    };
    auto constant = [](nn::Network&) { return 4.0; };
    EXPECT_NEAR(nn::finite_diff_grad(net, linear, 0, 1e-4)[0], 3.0, 1e-8);
    EXPECT_NEAR(nn::finite_diff_grad(net, quadratic, 0, 1e-4)[0], 2.0, 1e-6);
    EXPECT_EQ(nn::finite_diff_grad(net, constant, 0, 1e-4)[0], 0.0);
    EXPECT_EQ(net.parameters()[0]->value[0], 1.0);
}

TEST(GradCheck, EveryLayerKind) {
    std::mt19937_64 rng(2024);
    {
        nn::Network net({5});
        net.emplace<nn::Dense>(5, 4);
        net.emplace<nn::Relu>();
        net.emplace<nn::Dense>(4, 3);
        net.initialize(1);
        expect_gradcheck(net, random_tensor({3, 5}, rng), {0, 2, 1}, 0.0);
    }
    {
        nn::Network net({2, 5, 5});
        net.emplace<nn::Conv2d>(2, 3, 3, 2, 1);
        net.emplace<nn::Relu>();
        net.emplace<nn::AvgPool>(3);
        net.emplace<nn::Flatten>();
        net.emplace<nn::Dense>(3, 2);
        net.initialize(2);
        expect_gradcheck(net, random_tensor({2, 2, 5, 5}, rng), {1, 0}, 0.0);
    }
    {
        nn::Network net({1, 4, 4});
        net.emplace<nn::Conv2d>(1, 2, 3, 1, 1);
        net.add(nn::ResidualBlock::basic(2));
        net.emplace<nn::Flatten>();
        net.emplace<nn::Dense>(32, 3);
        net.initialize(3);
        expect_gradcheck(net, random_tensor({2, 1, 4, 4}, rng), {2, 0}, 0.0);
    }
    {
        nn::Network net({1, 4, 4});
        net.emplace<nn::Conv2d>(1, 2, 3, 1, 1);
        net.emplace<nn::Relu>();
        net.emplace<nn::Conv2d>(2, 2, 3, 1, 1);
        net.emplace<nn::Flatten>();
        net.emplace<nn::Dense>(32, 3);
        net.initialize(4);
        dreg::attach_at(net, "Block-R1", 0.3, 5);
        expect_gradcheck(net, random_tensor({3, 1, 4, 4}, rng), {0, 1, 2}, 0.25);
    }
}

TEST(Network, EligiblePositionsAreReverseTopological) {
    nn::Network net({1, 4, 4});
    net.emplace<nn::Conv2d>(1, 2, 3, 1, 1);  // 0
    net.emplace<nn::Relu>();                  // 1
    net.add(nn::ResidualBlock::basic(2));     // 2
    net.emplace<nn::Conv2d>(2, 2, 3, 1, 1);  // 3
    net.emplace<nn::Flatten>();               // 4
    net.emplace<nn::Dense>(32, 8);            // 5
    net.emplace<nn::Dense>(8, 3);             // 6 (classifier)
    EXPECT_EQ(net.eligible_positions(), (std::vector<std::size_t>{5, 3, 0}));
}

TEST(Network, AtMostOneDualLayer) {
    nn::Network net({3});
    net.emplace<nn::Dense>(3, 3);
    net.emplace<nn::Dense>(3, 3);
    net.emplace<nn::Dense>(3, 2);
    net.initialize(1);
    dreg::attach(net, 1, 0.1, 1);
    EXPECT_THROW(dreg::attach(net, 0, 0.1, 1), UsageError);
}

TEST(Network, CopyIsDeep) {
    nn::Network net({2});
    net.emplace<nn::Dense>(2, 2);
    net.initialize(1);
    nn::Network copy = net;
    copy.parameters()[0]->value = Tensor::zeros({2, 2});
    EXPECT_NE(net.parameters()[0]->value, copy.parameters()[0]->value);
}

TEST(Network, FlopsCountMultiplyAccumulates) {
    nn::Network net({1, 4, 4});
    net.emplace<nn::Conv2d>(1, 2, 3, 1, 1);
    net.emplace<nn::Flatten>();
    net.emplace<nn::Dense>(32, 3);
    EXPECT_EQ(net.flops_from(2), 96u);
    EXPECT_EQ(net.forward_flops(), 2u * 16u * 9u + 96u);
}
