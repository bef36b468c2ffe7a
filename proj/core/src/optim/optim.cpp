#include "dregnet/optim/optim.hpp"

#include <stdexcept>
#include <string>

namespace dregnet::optim {

using nn::ParamRole;

void TrainConfig::validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
    if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("beta must lie in [0, 1)");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (devices == 0) throw std::invalid_argument("devices must be positive");
    if (batch_size % devices != 0) {
        throw std::invalid_argument("batch_size " + std::to_string(batch_size) + " is not divisible by devices " +
                                    std::to_string(devices));
    }
    if (dreg_max_norm < 0.0) throw std::invalid_argument("dreg max_norm must be non-negative");
}

MomentumState MomentumState::zeros_for(const nn::Network& net, double beta) {
    MomentumState s;
    s.beta = beta;
    for (const auto* p : net.parameters()) s.v.push_back(Tensor::zeros_like(p->value));
    return s;
}

Tensor sgd_step(const Tensor& param, const Tensor& grad, double eta) {
    if (param.shape() != grad.shape()) throw ShapeError("sgd_step: parameter and gradient shapes differ");
    Tensor out(param.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = param[i] - eta * grad[i];
    require_finite(out, "sgd_step");
    return out;
}

MomentumStep momentum_step(const Tensor& param, const Tensor& grad, const Tensor& velocity, double beta,
                           double eta) {
    if (param.shape() != grad.shape() || velocity.shape() != grad.shape()) {
        throw ShapeError("momentum_step: parameter, gradient and velocity shapes differ");
    }
    MomentumStep out{Tensor(param.shape()), Tensor(param.shape())};
    for (std::size_t i = 0; i < param.size(); ++i) {
        out.velocity[i] = beta * velocity[i] + grad[i];
        out.param[i] = param[i] - eta * out.velocity[i];
    }
    require_finite(out.param, "momentum_step");
    require_finite(out.velocity, "momentum_step");
    return out;
}

UpdateRecord apply_update(nn::Network& net, const std::vector<Tensor>& grads, const TrainConfig& config,
                          MomentumState& state, const dreg::DRegGradFn& grad_fn) {
    auto params = net.parameters();
    if (grads.size() != params.size() || state.v.size() != params.size()) {
        throw std::invalid_argument("apply_update: " + std::to_string(grads.size()) + " gradients and " +
                                    std::to_string(state.v.size()) + " velocities for " +
                                    std::to_string(params.size()) + " parameters");
    }
    const double eta = config.eta;
    const double beta = state.beta;
    std::optional<std::size_t> r_idx, l_idx;
    for (std::size_t i = 0; i < params.size(); ++i) {
        switch (params[i]->role) {
            case ParamRole::DualR: r_idx = i; continue;
            case ParamRole::DualL: l_idx = i; continue;
            case ParamRole::Shared: break;
        }
        if (beta == 0.0) {
            params[i]->value = sgd_step(params[i]->value, grads[i], eta);
        } else {
            auto step = momentum_step(params[i]->value, grads[i], state.v[i], beta, eta);
            params[i]->value = std::move(step.param);
            state.v[i] = std::move(step.velocity);
        }
    }
    if (r_idx.has_value() != l_idx.has_value()) throw UsageError("apply_update: unpaired dual weights");

    UpdateRecord record;
    if (!r_idx) return record;

    Tensor& w_r = params[*r_idx]->value;
    Tensor& w_l = params[*l_idx]->value;
    if (config.dreg_through_momentum) {
        const auto [g_r, g_l] = grad_fn(w_r, w_l);
        auto step_r = momentum_step(w_r, axpy(grads[*r_idx], -config.lambda, g_r), state.v[*r_idx], beta, eta);
        auto step_l = momentum_step(w_l, axpy(grads[*l_idx], -config.lambda, g_l), state.v[*l_idx], beta, eta);
        w_r = std::move(step_r.param);
        w_l = std::move(step_l.param);
        state.v[*r_idx] = std::move(step_r.velocity);
        state.v[*l_idx] = std::move(step_l.velocity);
    } else {
        // Momentum on the cross-entropy part only; the distance term is added
        // by dreg_update outside the accumulator.
        Tensor dir_r = axpy(grads[*r_idx], beta, state.v[*r_idx]);
        Tensor dir_l = axpy(grads[*l_idx], beta, state.v[*l_idx]);
        record.dual = dreg::TraceStep{w_r, w_l, dir_r, dir_l, eta, config.lambda};
        auto [new_r, new_l] = dreg::dreg_update(w_r, w_l, dir_r, dir_l, eta, config.lambda, grad_fn);
        w_r = std::move(new_r);
        w_l = std::move(new_l);
        state.v[*r_idx] = std::move(dir_r);
        state.v[*l_idx] = std::move(dir_l);
    }
    dreg::clamp_distance(w_r, w_l, config.dreg_max_norm);
    return record;
}

}  // namespace dregnet::optim
