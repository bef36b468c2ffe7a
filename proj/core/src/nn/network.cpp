#include "dregnet/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dregnet::nn {

namespace {

Shape sample_shape(const Tensor& x) { return Shape(x.shape().begin() + 1, x.shape().end()); }

bool is_eligible(const Layer& l) {
    return l.kind() == LayerKind::Dense || l.kind() == LayerKind::Conv2d || l.kind() == LayerKind::DReg;
}

}  // namespace

Network::Network(Shape sample_input_shape) : input_shape_(std::move(sample_input_shape)) {
    if (input_shape_.empty() || shape_numel(input_shape_) == 0) {
        throw ShapeError("network input shape must be non-empty");
    }
}

Network::Network(const Network& other)
    : input_shape_(other.input_shape_), dual_index_(other.dual_index_), has_forward_(other.has_forward_) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
    if (this != &other) {
        Network copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Layer& Network::add(std::unique_ptr<Layer> layer) {
    layer->output_shape(output_shape());
    if (layer->kind() == LayerKind::DReg) {
        if (dual_index_) throw UsageError("network already holds a dual-path layer");
        dual_index_ = layers_.size();
    }
    layers_.push_back(std::move(layer));
    return *layers_.back();
}

void Network::replace(std::size_t index, std::unique_ptr<Layer> layer) {
    if (index >= layers_.size()) throw UsageError("replace: layer index out of range");
    const Shape in = shape_before(index);
    if (layer->output_shape(in) != layers_[index]->output_shape(in)) {
        throw ShapeError("replace: replacement changes the output shape of layer " + std::to_string(index));
    }
    const bool incoming_dual = layer->kind() == LayerKind::DReg;
    if (incoming_dual && dual_index_ && *dual_index_ != index) {
        throw UsageError("network already holds a dual-path layer");
    }
    layers_[index] = std::move(layer);
    if (incoming_dual) {
        dual_index_ = index;
    } else if (dual_index_ == index) {
        dual_index_.reset();
    }
    has_forward_ = false;
}

Shape Network::shape_before(std::size_t index) const {
    Shape s = input_shape_;
    for (std::size_t i = 0; i < index && i < layers_.size(); ++i) s = layers_[i]->output_shape(s);
    return s;
}

Shape Network::output_shape() const { return shape_before(layers_.size()); }

DualPathLayer* Network::dual_layer() {
    return dual_index_ ? static_cast<DualPathLayer*>(layers_[*dual_index_].get()) : nullptr;
}

const DualPathLayer* Network::dual_layer() const {
    return dual_index_ ? static_cast<const DualPathLayer*>(layers_[*dual_index_].get()) : nullptr;
}

ForwardResult Network::forward(const Tensor& x) {
    if (x.rank() < 2 || sample_shape(x) != input_shape_) {
        throw ShapeError("network expects samples of shape " + shape_to_string(input_shape_) + ", got batch " +
                         shape_to_string(x.shape()));
    }
    const std::size_t split = dual_index_.value_or(layers_.size());
    Tensor h = x;
    for (std::size_t i = 0; i < split; ++i) h = layers_[i]->forward(h, Path::R);
    has_forward_ = true;
    if (!dual_index_) return {std::move(h), std::nullopt};

    ForwardResult out;
    for (Path p : {Path::R, Path::L}) {
        Tensor hp = h;
        for (std::size_t i = split; i < layers_.size(); ++i) hp = layers_[i]->forward(hp, p);
        (p == Path::R ? out.r : out.l.emplace()) = std::move(hp);
    }
    return out;
}

Tensor Network::forward_path(const Tensor& x, Path path) {
    if (x.rank() < 2 || sample_shape(x) != input_shape_) {
        throw ShapeError("network expects samples of shape " + shape_to_string(input_shape_) + ", got batch " +
                         shape_to_string(x.shape()));
    }
    const std::size_t split = dual_index_.value_or(layers_.size());
    Tensor h = x;
    for (std::size_t i = 0; i < split; ++i) h = layers_[i]->forward(h, Path::R);
    for (std::size_t i = split; i < layers_.size(); ++i) h = layers_[i]->forward(h, path);
    return h;
}

void Network::backward(const OutputGradient& grad) {
    if (!has_forward_) throw UsageError("network backward without a prior forward");
    if (dual_index_.has_value() != grad.l.has_value()) {
        throw UsageError(dual_index_ ? "dual-path network needs gradients for both paths"
                                     : "single-path network received two output gradients");
    }
    zero_grad();
    const std::size_t split = dual_index_.value_or(layers_.size());
    Tensor g;
    if (!dual_index_) {
        g = grad.r;
    } else {
        std::optional<Tensor> merged;
        for (Path p : {Path::R, Path::L}) {
            Tensor gp = p == Path::R ? grad.r : *grad.l;
            for (std::size_t i = layers_.size(); i-- > split;) gp = layers_[i]->backward(gp, p);
            merged = merged ? dregnet::add(*merged, gp) : std::move(gp);
        }
        g = std::move(*merged);
    }
    for (std::size_t i = split; i-- > 0;) g = layers_[i]->backward(g, Path::R);
}

void Network::zero_grad() {
    for (auto& l : layers_) l->zero_grad();
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
        auto p = l->parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<const Parameter*> Network::parameters() const {
    auto p = const_cast<Network*>(this)->parameters();
    return {p.begin(), p.end()};
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
}

void Network::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : layers_) l->reset_parameters(rng);
}

std::uint64_t Network::forward_flops() const { return flops_from(0); }

std::uint64_t Network::flops_from(std::size_t index) const {
    std::uint64_t total = 0;
    Shape s = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (i >= index) total += layers_[i]->flops(s);
        s = layers_[i]->output_shape(s);
    }
    return total;
}

std::vector<std::size_t> Network::eligible_positions() const {
    std::vector<std::size_t> out;
    bool classifier_skipped = false;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const Layer& l = *layers_[i];
        if (!is_eligible(l)) {
            if (!l.parameters().empty()) classifier_skipped = true;
            continue;
        }
        if (!classifier_skipped) {
            classifier_skipped = true;
            continue;
        }
        out.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------- losses

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax expects N×C logits, got " + shape_to_string(logits.shape()));
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    Tensor p(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data().data() + i * c;
        double* out = p.data().data() + i * c;
        const double m = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (out[j] = std::exp(row[j] - m));
        for (std::size_t j = 0; j < c; ++j) out[j] /= z;
    }
    return p;
}

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw ShapeError("expected N×C logits, got " + shape_to_string(logits.shape()));
    if (labels.size() != logits.dim(0)) {
        throw ShapeError("label count " + std::to_string(labels.size()) + " does not match batch " +
                         std::to_string(logits.dim(0)));
    }
    const auto classes = static_cast<int>(logits.dim(1));
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
        }
    }
}

}  // namespace

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
    check_labels(logits, labels);
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data().data() + i * c;
        const double m = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
        total += m + std::log(z) - row[labels[i]];
    }
    const double loss = total / static_cast<double>(n);
    if (!std::isfinite(loss)) throw NonFiniteError("cross_entropy: non-finite loss");
    return loss;
}

Tensor cross_entropy_grad(const Tensor& logits, std::span<const int> labels) {
    check_labels(logits, labels);
    Tensor g = softmax(logits);
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        g[i * c + static_cast<std::size_t>(labels[i])] -= 1.0;
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] *= inv_n;
    }
    return g;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
    check_labels(logits, labels);
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data().data() + i * c;
        const auto best = static_cast<int>(std::max_element(row, row + c) - row);
        if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

LossEvaluation evaluate_loss(const Network& net, const ForwardResult& out, std::span<const int> labels,
                             double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
    LossEvaluation ev;
    auto& b = ev.breakdown;
    b.lambda = lambda;
    b.l_r = cross_entropy(out.r, labels);
    ev.grad.r = cross_entropy_grad(out.r, labels);
    if (!out.dual()) {
        b.total = b.l_r;
        return ev;
    }
    const DualPathLayer* dual = net.dual_layer();
    if (!dual) throw UsageError("dual forward result for a network without a dual-path layer");
    b.l_l = cross_entropy(*out.l, labels);
    ev.grad.l = cross_entropy_grad(*out.l, labels);
    b.l_dreg_raw = dual->distance_sq();
    b.total = b.l_r + *b.l_l - lambda * b.l_dreg_raw;
    return ev;
}

std::vector<Tensor> composite_gradients(const Network& net, double lambda) {
    std::vector<Tensor> out;
    std::optional<std::pair<Tensor, Tensor>> dist;
    for (const auto* p : net.parameters()) {
        if (p->role == ParamRole::Shared) {
            out.push_back(p->grad);
            continue;
        }
        if (!dist) dist = net.dual_layer()->distance_grad();
        const Tensor& dg = p->role == ParamRole::DualR ? dist->first : dist->second;
        out.push_back(axpy(p->grad, -lambda, dg));
    }
    return out;
}

Tensor finite_diff_grad(Network& net, const std::function<double(Network&)>& loss, std::size_t param_index,
                        double epsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("finite_diff_grad: epsilon must be positive");
    auto params = net.parameters();
    if (param_index >= params.size()) throw std::out_of_range("finite_diff_grad: parameter index out of range");
    Tensor& value = params[param_index]->value;
    Tensor estimate = Tensor::zeros_like(value);
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double saved = value[i];
        value[i] = saved + epsilon;
        const double up = loss(net);
        value[i] = saved - epsilon;
        const double down = loss(net);
        value[i] = saved;
        estimate[i] = (up - down) / (2.0 * epsilon);
    }
    return estimate;
}

}  // namespace dregnet::nn
