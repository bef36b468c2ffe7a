#pragma once

#include <cstdint>
#include <vector>

#include "dregnet/data/data.hpp"
#include "dregnet/nn/network.hpp"

// Reference implementations used for verification. They deliberately avoid
// the engine's tensor kernels and update rules.
namespace dregnet::oracle {

/// Naive convolution: materialises the zero-padded input, then sums over
/// every (n, f, y, x, c, ky, kx). Same contract as dregnet::conv2d.
Tensor conv2d_bruteforce(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

/// y = w * x with loss (y - target)^2: returns d loss / d w = 2 (w x - t) x.
double scalar_linear_sq_grad(double w, double x, double target);

/// y = w2 * relu(w1 * x) with loss (y - target)^2: returns (dL/dw1, dL/dw2).
std::pair<double, double> scalar_chain_sq_grad(double w1, double w2, double x, double target);

/// Row-wise softmax-cross-entropy gradient written out from first principles.
Tensor softmax_xent_grad(const Tensor& logits, const std::vector<int>& labels);

struct ReferenceConfig {
    double eta = 0.05;
    double beta = 0.0;
    std::size_t batch_size = 32;
    std::size_t steps = 0;  ///< 0: run `epochs` full epochs
    std::size_t epochs = 1;
    std::uint64_t seed = 1;
    /// Per-parameter learning-rate multipliers (aligned with parameters());
    /// empty means 1 everywhere.
    std::vector<double> lr_scale;
};

/// Plain minibatch SGD (momentum when beta > 0) over the same shuffled batch
/// sequence the engine uses. Returns a snapshot of every parameter before the
/// first step and after each step.
std::vector<std::vector<Tensor>> reference_vanilla_trainer(nn::Network net, const data::Dataset& dataset,
                                                           const ReferenceConfig& config);

}  // namespace dregnet::oracle
