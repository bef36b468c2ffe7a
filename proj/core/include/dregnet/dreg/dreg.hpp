#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dregnet/nn/layers.hpp"
#include "dregnet/nn/network.hpp"

namespace dregnet::dreg {

using nn::Path;

/// Dual-weight wrapper around a dense or conv2d layer. The two weight sets
/// W^R and W^L are used by the R and L paths respectively; the bias stays a
/// single shared parameter.
class DRegLayer final : public nn::DualPathLayer {
public:
    /// Wraps `base` with explicit weight sets; both must match the base
    /// layer's weight shape.
    DRegLayer(const nn::Layer& base, Tensor w_r, Tensor w_l);

    nn::LayerKind kind() const noexcept override { return nn::LayerKind::DReg; }
    nn::LayerKind inner_kind() const noexcept override { return inner_; }
    Shape output_shape(const Shape& sample_in) const override;
    Tensor forward(const Tensor& x, Path path) override;
    Tensor backward(const Tensor& grad_out, Path path) override;
    std::unique_ptr<nn::Layer> clone() const override { return std::make_unique<DRegLayer>(*this); }
    std::uint64_t flops(const Shape& sample_in) const override;
    std::vector<nn::Parameter*> parameters() override { return {&w_r_, &w_l_, &bias_}; }
    void reset_parameters(std::mt19937_64& rng) override;
    std::vector<std::int64_t> hyperparameters() const override;

    double distance_sq() const override;
    std::pair<Tensor, Tensor> distance_grad() const override;
    std::unique_ptr<nn::Layer> collapse(Path keep) const override;

    nn::Parameter& w_r() { return w_r_; }
    nn::Parameter& w_l() { return w_l_; }
    nn::Parameter& bias() { return bias_; }
    const nn::Parameter& w_r() const { return w_r_; }
    const nn::Parameter& w_l() const { return w_l_; }
    const nn::Parameter& bias() const { return bias_; }
    nn::Parameter& weights(Path p) { return p == Path::R ? w_r_ : w_l_; }
    const nn::Parameter& weights(Path p) const { return p == Path::R ? w_r_ : w_l_; }
    std::size_t stride() const { return stride_; }
    std::size_t padding() const { return padding_; }

private:
    Tensor apply(const Tensor& x, const Tensor& w) const;

    nn::LayerKind inner_;
    nn::Parameter w_r_;
    nn::Parameter w_l_;
    nn::Parameter bias_;
    std::size_t stride_ = 1;
    std::size_t padding_ = 0;
};

struct DRegConfig {
    double lambda = 0.1;
    double epsilon_init = 1e-2;
    /// "Block-R1" is the eligible layer closest to the output.
    std::string position = "Block-R1";
    /// Rescale W^R - W^L to this Frobenius norm when exceeded; 0 disables.
    double max_norm = 0.0;
};

/// Parses "Block-Rk" (k >= 1) into the zero-based reverse-topological rank.
std::size_t parse_position(const std::string& label);
std::string position_label(std::size_t rank);

/// (w_r, w_l) with w_r = base and w_l = base + eps * std(base) * N(0, 1)
/// (std taken as 1 for an all-zero base). Throws for eps <= 0.
std::pair<Tensor, Tensor> init_dreg(const Tensor& base, double epsilon_init, std::uint64_t seed);

/// ||w_r - w_l||_F^2.
double dreg_loss(const Tensor& w_r, const Tensor& w_l);
/// Gradients of dreg_loss: (2(w_r - w_l), -2(w_r - w_l)).
std::pair<Tensor, Tensor> dreg_grad(const Tensor& w_r, const Tensor& w_l);

using DRegGradFn = std::function<std::pair<Tensor, Tensor>(const Tensor&, const Tensor&)>;

/// One descent step on the composite loss for the dual weights:
///   w_r <- w_r - eta*step_r + lambda*eta*g_r
///   w_l <- w_l - eta*step_l + lambda*eta*g_l
/// with (g_r, g_l) = grad_fn(w_r, w_l), i.e. +2*lambda*eta*(w_r - w_l) for the
/// true distance gradient. step_* are the cross-entropy gradients (or their
/// momentum-smoothed directions).
std::pair<Tensor, Tensor> dreg_update(const Tensor& w_r, const Tensor& w_l, const Tensor& step_r,
                                      const Tensor& step_l, double eta, double lambda,
                                      const DRegGradFn& grad_fn = dreg_grad);

/// Pulls w_r and w_l symmetrically toward their midpoint so that
/// ||w_r - w_l||_F <= max_norm.
void clamp_distance(Tensor& w_r, Tensor& w_l, double max_norm);

/// Snapshot of the dual weights and the update directions applied from them.
struct TraceStep {
    Tensor w_r;
    Tensor w_l;
    Tensor step_r;
    Tensor step_l;
    double eta = 0.0;
    double lambda = 0.0;
};

/// || D_t - [(1 + 4*lambda*eta) D_{t-1} - eta (step_r - step_l)] ||_F with
/// D = w_r - w_l, taking lambda/eta from `prev`.
double decomposition_residual(const TraceStep& prev, const Tensor& w_r_next, const Tensor& w_l_next);
double decomposition_residual(const TraceStep& prev, const TraceStep& next);

/// Replaces layer `index` (a dense or conv2d layer) of `net` with a DReg
/// layer initialised from its current weights.
void attach(nn::Network& net, std::size_t index, double epsilon_init, std::uint64_t seed);
/// attach() at a named position ("Block-R1", ...).
std::size_t attach_at(nn::Network& net, const std::string& position, double epsilon_init, std::uint64_t seed);

/// d L_L / d W^R and d L_R / d W^L, measured by back-propagating each path's
/// loss on its own through the engine.
struct CrossPathGradients {
    Tensor l_wrt_r;
    Tensor r_wrt_l;
};

/// Runs forward on (inputs, labels) and two masked backward passes. Leaves
/// the network's gradients holding the last masked pass.
CrossPathGradients measure_cross_path_gradients(nn::Network& net, const Tensor& inputs,
                                                std::span<const int> labels);

struct PathSelection {
    nn::Network network;
    Path chosen = Path::R;
    double accuracy_r = 0.0;
    double accuracy_l = 0.0;
};

/// Evaluates both paths on the validation data and returns the single-path
/// network keeping the better weight set (R on ties).
PathSelection select_inference_path(const nn::Network& net, const Tensor& val_inputs,
                                    std::span<const int> val_labels);

}  // namespace dregnet::dreg
