#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dregnet/dreg/dreg.hpp"
#include "dregnet/nn/network.hpp"

namespace dregnet::optim {

/// Hyperparameters of one training run.
struct TrainConfig {
    double eta = 0.05;
    double beta = 0.9;
    double lambda = 0.1;
    std::size_t batch_size = 32;
    std::size_t devices = 1;
    std::size_t epochs = 10;
    std::uint64_t seed = 1;
    /// Feed the distance term through the momentum accumulator instead of
    /// adding it after the accumulator.
    bool dreg_through_momentum = false;
    /// Max-norm safeguard on ||W^R - W^L||_F; 0 disables.
    double dreg_max_norm = 0.0;

    /// Throws std::invalid_argument on out-of-range values.
    void validate() const;
};

/// One velocity tensor per network parameter, same shapes.
struct MomentumState {
    double beta = 0.0;
    std::vector<Tensor> v;

    static MomentumState zeros_for(const nn::Network& net, double beta);
};

/// param - eta * grad
Tensor sgd_step(const Tensor& param, const Tensor& grad, double eta);

struct MomentumStep {
    Tensor param;
    Tensor velocity;
};

/// v' = beta * v + grad; param' = param - eta * v'.
MomentumStep momentum_step(const Tensor& param, const Tensor& grad, const Tensor& velocity, double beta,
                           double eta);

/// What apply_update did to the dual weights, for trace checks.
struct UpdateRecord {
    std::optional<dreg::TraceStep> dual;
};

/// Updates every parameter of `net` in place from its data-loss gradient
/// (aligned with net.parameters()). Shared weights take a momentum step (an
/// SGD step when beta == 0). The dual weights take a momentum step on their
/// cross-entropy gradient followed by the distance term of dreg_update.
UpdateRecord apply_update(nn::Network& net, const std::vector<Tensor>& grads, const TrainConfig& config,
                          MomentumState& state, const dreg::DRegGradFn& grad_fn = dreg::dreg_grad);

}  // namespace dregnet::optim
