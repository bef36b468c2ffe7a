#include "dregnet/dreg/dreg.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace dregnet::dreg {

using nn::LayerKind;
using nn::Parameter;
using nn::ParamRole;

namespace {

void accumulate(Tensor& into, const Tensor& g) {
    auto dst = into.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Shape sample_shape(const Tensor& x) { return Shape(x.shape().begin() + 1, x.shape().end()); }

}  // namespace

// ---------------------------------------------------------------- DRegLayer

DRegLayer::DRegLayer(const nn::Layer& base, Tensor w_r, Tensor w_l) : inner_(base.kind()) {
    const Tensor* base_weight = nullptr;
    const Tensor* base_bias = nullptr;
    if (const auto* d = dynamic_cast<const nn::Dense*>(&base)) {
        base_weight = &d->weight().value;
        base_bias = &d->bias().value;
    } else if (const auto* c = dynamic_cast<const nn::Conv2d*>(&base)) {
        base_weight = &c->kernel().value;
        base_bias = &c->bias().value;
        stride_ = c->stride();
        padding_ = c->padding();
    } else {
        throw UsageError("DReg can only wrap dense or conv2d layers, got " + nn::to_string(base.kind()));
    }
    if (w_r.shape() != base_weight->shape() || w_l.shape() != base_weight->shape()) {
        throw ShapeError("DReg weights " + shape_to_string(w_r.shape()) + "/" + shape_to_string(w_l.shape()) +
                         " do not match wrapped weight " + shape_to_string(base_weight->shape()));
    }
    w_r_ = Parameter("weight_r", std::move(w_r), ParamRole::DualR);
    w_l_ = Parameter("weight_l", std::move(w_l), ParamRole::DualL);
    bias_ = Parameter("bias", *base_bias, ParamRole::Shared);
}

Shape DRegLayer::output_shape(const Shape& sample_in) const {
    const Shape& w = w_r_.value.shape();
    if (inner_ == LayerKind::Dense) {
        if (sample_in != Shape{w[0]}) {
            throw ShapeError("dreg(dense) expects [" + std::to_string(w[0]) + "], got " + shape_to_string(sample_in));
        }
        return {w[1]};
    }
    return nn::Conv2d::output_shape_for(sample_in, w, stride_, padding_);
}

Tensor DRegLayer::apply(const Tensor& x, const Tensor& w) const {
    if (inner_ == LayerKind::Dense) return nn::Dense::apply(x, w, bias_.value);
    return nn::Conv2d::apply(x, w, bias_.value, stride_, padding_);
}

Tensor DRegLayer::forward(const Tensor& x, Path path) {
    output_shape(sample_shape(x));
    remember(x, path);
    return apply(x, weights(path).value);
}

Tensor DRegLayer::backward(const Tensor& grad_out, Path path) {
    const Tensor& x = recall(path);
    const Tensor& w = weights(path).value;
    Tensor wg = inner_ == LayerKind::Dense
                    ? nn::Dense::weight_grad(x, grad_out)
                    : conv2d_backward_kernel(grad_out, x, w.shape(), stride_, padding_);
    accumulate(weights(path).grad, wg);
    if (inner_ == LayerKind::Dense) {
        accumulate(bias_.grad, nn::Dense::bias_grad(grad_out));
        return nn::Dense::input_grad(grad_out, w);
    }
    accumulate(bias_.grad, nn::Conv2d::bias_grad(grad_out));
    return conv2d_backward_input(grad_out, w, x.shape(), stride_, padding_);
}

std::uint64_t DRegLayer::flops(const Shape& sample_in) const {
    const Shape out = output_shape(sample_in);
    const Shape& w = w_r_.value.shape();
    if (inner_ == LayerKind::Dense) return static_cast<std::uint64_t>(w[0]) * w[1];
    return static_cast<std::uint64_t>(out[0]) * out[1] * out[2] * w[1] * w[2] * w[3];
}

void DRegLayer::reset_parameters(std::mt19937_64& rng) {
    const Shape& w = w_r_.value.shape();
    const std::size_t fan_in = inner_ == LayerKind::Dense ? w[0] : w[1] * w[2] * w[3];
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor base(w);
    for (double& v : base.data()) v = dist(rng);
    auto [r, l] = init_dreg(base, DRegConfig{}.epsilon_init, rng());
    w_r_.value = std::move(r);
    w_l_.value = std::move(l);
    bias_.value = Tensor::zeros_like(bias_.value);
}

std::vector<std::int64_t> DRegLayer::hyperparameters() const {
    const Shape& w = w_r_.value.shape();
    if (inner_ == LayerKind::Dense) {
        return {static_cast<std::int64_t>(LayerKind::Dense), static_cast<std::int64_t>(w[0]),
                static_cast<std::int64_t>(w[1])};
    }
    return {static_cast<std::int64_t>(LayerKind::Conv2d), static_cast<std::int64_t>(w[1]),
            static_cast<std::int64_t>(w[0]),           static_cast<std::int64_t>(w[2]),
            static_cast<std::int64_t>(stride_),        static_cast<std::int64_t>(padding_)};
}

double DRegLayer::distance_sq() const { return dreg_loss(w_r_.value, w_l_.value); }

std::pair<Tensor, Tensor> DRegLayer::distance_grad() const { return dreg_grad(w_r_.value, w_l_.value); }

std::unique_ptr<nn::Layer> DRegLayer::collapse(Path keep) const {
    const Tensor& w = weights(keep).value;
    if (inner_ == LayerKind::Dense) return std::make_unique<nn::Dense>(w, bias_.value);
    return std::make_unique<nn::Conv2d>(w, bias_.value, stride_, padding_);
}

// ---------------------------------------------------------------- positions

std::size_t parse_position(const std::string& label) {
    const std::string prefix = "Block-R";
    if (label.rfind(prefix, 0) != 0 || label.size() == prefix.size()) {
        throw UsageError("position must look like Block-R<k>, got '" + label + "'");
    }
    std::size_t consumed = 0;
    unsigned long k = 0;
    try {
        k = std::stoul(label.substr(prefix.size()), &consumed);
    } catch (const std::exception&) {
        throw UsageError("position must look like Block-R<k>, got '" + label + "'");
    }
    if (consumed != label.size() - prefix.size() || k == 0) {
        throw UsageError("position must look like Block-R<k> with k >= 1, got '" + label + "'");
    }
    return k - 1;
}

std::string position_label(std::size_t rank) { return "Block-R" + std::to_string(rank + 1); }

// ---------------------------------------------------------------- DReg ops

std::pair<Tensor, Tensor> init_dreg(const Tensor& base, double epsilon_init, std::uint64_t seed) {
    if (!(epsilon_init > 0.0)) {
        throw std::invalid_argument("init_dreg: epsilon_init must be > 0 so the two weight sets start distinct");
    }
    const double n = static_cast<double>(base.size());
    const double mean = sum(base) / n;
    double var = 0.0;
    for (double v : base.data()) var += (v - mean) * (v - mean);
    double sigma = std::sqrt(var / n);
    if (sigma == 0.0) sigma = 1.0;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    Tensor w_l = base;
    do {
        for (std::size_t i = 0; i < base.size(); ++i) w_l[i] = base[i] + epsilon_init * sigma * unit(rng);
    } while (dreg_loss(base, w_l) == 0.0);
    require_finite(w_l, "init_dreg");
    return {base, std::move(w_l)};
}

double dreg_loss(const Tensor& w_r, const Tensor& w_l) { return frobenius_sq(sub(w_r, w_l)); }

std::pair<Tensor, Tensor> dreg_grad(const Tensor& w_r, const Tensor& w_l) {
    Tensor g = scale(sub(w_r, w_l), 2.0);
    Tensor neg = scale(g, -1.0);
    return {std::move(g), std::move(neg)};
}

std::pair<Tensor, Tensor> dreg_update(const Tensor& w_r, const Tensor& w_l, const Tensor& step_r,
                                      const Tensor& step_l, double eta, double lambda, const DRegGradFn& grad_fn) {
    if (!(eta > 0.0)) throw std::invalid_argument("dreg_update: eta must be positive");
    if (w_r.shape() != w_l.shape() || step_r.shape() != w_r.shape() || step_l.shape() != w_r.shape()) {
        throw ShapeError("dreg_update: weight and gradient shapes differ");
    }
    const auto [g_r, g_l] = grad_fn(w_r, w_l);
    const double reg = lambda * eta;
    Tensor r(w_r.shape());
    Tensor l(w_l.shape());
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] = w_r[i] - eta * step_r[i] + reg * g_r[i];
        l[i] = w_l[i] - eta * step_l[i] + reg * g_l[i];
    }
    require_finite(r, "dreg_update");
    require_finite(l, "dreg_update");
    return {std::move(r), std::move(l)};
}

void clamp_distance(Tensor& w_r, Tensor& w_l, double max_norm) {
    if (max_norm <= 0.0) return;
    const double norm = std::sqrt(dreg_loss(w_r, w_l));
    if (norm <= max_norm) return;
    const double shrink = max_norm / norm;
    for (std::size_t i = 0; i < w_r.size(); ++i) {
        const double mid = 0.5 * (w_r[i] + w_l[i]);
        const double half = 0.5 * (w_r[i] - w_l[i]) * shrink;
        w_r[i] = mid + half;
        w_l[i] = mid - half;
    }
}

double decomposition_residual(const TraceStep& prev, const Tensor& w_r_next, const Tensor& w_l_next) {
    const double growth = 1.0 + 4.0 * prev.lambda * prev.eta;
    const Tensor d_prev = sub(prev.w_r, prev.w_l);
    const Tensor diversity = sub(prev.step_r, prev.step_l);
    const Tensor predicted = axpy(scale(d_prev, growth), -prev.eta, diversity);
    return frobenius(sub(sub(w_r_next, w_l_next), predicted));
}

double decomposition_residual(const TraceStep& prev, const TraceStep& next) {
    return decomposition_residual(prev, next.w_r, next.w_l);
}

// ---------------------------------------------------------------- network surgery

void attach(nn::Network& net, std::size_t index, double epsilon_init, std::uint64_t seed) {
    const nn::Layer& base = net.layer(index);
    const Tensor* weight = nullptr;
    if (const auto* d = dynamic_cast<const nn::Dense*>(&base)) {
        weight = &d->weight().value;
    } else if (const auto* c = dynamic_cast<const nn::Conv2d*>(&base)) {
        weight = &c->kernel().value;
    } else {
        throw UsageError("layer " + std::to_string(index) + " (" + nn::to_string(base.kind()) +
                         ") cannot host a DReg layer");
    }
    auto [w_r, w_l] = init_dreg(*weight, epsilon_init, seed);
    net.replace(index, std::make_unique<DRegLayer>(base, std::move(w_r), std::move(w_l)));
}

std::size_t attach_at(nn::Network& net, const std::string& position, double epsilon_init, std::uint64_t seed) {
    const std::size_t rank = parse_position(position);
    const auto eligible = net.eligible_positions();
    if (rank >= eligible.size()) {
        throw UsageError(position + " does not exist; the network has " + std::to_string(eligible.size()) +
                         " eligible layers");
    }
    attach(net, eligible[rank], epsilon_init, seed);
    return eligible[rank];
}

CrossPathGradients measure_cross_path_gradients(nn::Network& net, const Tensor& inputs,
                                                std::span<const int> labels) {
    auto* dual = dynamic_cast<DRegLayer*>(net.dual_layer());
    if (!dual) throw UsageError("measure_cross_path_gradients: network has no DReg layer");
    const nn::ForwardResult out = net.forward(inputs);
    const nn::LossEvaluation ev = nn::evaluate_loss(net, out, labels, 0.0);
    CrossPathGradients cg;
    net.backward({Tensor::zeros_like(ev.grad.r), ev.grad.l});
    cg.l_wrt_r = dual->w_r().grad;
    net.backward({ev.grad.r, Tensor::zeros_like(*ev.grad.l)});
    cg.r_wrt_l = dual->w_l().grad;
    return cg;
}

PathSelection select_inference_path(const nn::Network& net, const Tensor& val_inputs,
                                    std::span<const int> val_labels) {
    if (val_labels.empty() || val_inputs.empty()) throw UsageError("select_inference_path: empty validation set");
    if (!net.dual_index()) throw UsageError("select_inference_path: network has no DReg layer");
    nn::Network work = net;
    const nn::ForwardResult out = work.forward(val_inputs);
    PathSelection sel{net, Path::R, nn::accuracy(out.r, val_labels), nn::accuracy(*out.l, val_labels)};
    sel.chosen = sel.accuracy_l > sel.accuracy_r ? Path::L : Path::R;
    const std::size_t idx = *net.dual_index();
    sel.network.replace(idx, net.dual_layer()->collapse(sel.chosen));
    return sel;
}

}  // namespace dregnet::dreg
