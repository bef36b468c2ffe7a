#include "dregnet/nn/layers.hpp"

#include <cmath>

namespace dregnet::nn {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::AvgPool: return "avgpool";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Residual: return "residual";
        case LayerKind::DReg: return "dreg";
    }
    return "unknown";
}

std::vector<const Parameter*> Layer::parameters() const {
    auto mutable_params = const_cast<Layer*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
}

void Layer::zero_grad() {
    for (auto* p : parameters()) p->grad = Tensor::zeros_like(p->value);
}

const Tensor& Layer::recall(Path p) const {
    const auto& slot = cache_[static_cast<std::size_t>(p)];
    if (!slot) {
        throw UsageError(to_string(kind()) + ": backward on path " + to_string(p) + " without a prior forward");
    }
    return *slot;
}

namespace {

void he_normal(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& v : t.data()) v = dist(rng);
}

Shape sample_shape(const Tensor& x) { return Shape(x.shape().begin() + 1, x.shape().end()); }

void accumulate(Tensor& into, const Tensor& g) {
    auto dst = into.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in, std::size_t out)
    : weight_("weight", Tensor({in, out})), bias_("bias", Tensor({out})) {}

Dense::Dense(Tensor weight, Tensor bias) : weight_("weight", std::move(weight)), bias_("bias", std::move(bias)) {
    if (weight_.value.rank() != 2 || bias_.value.shape() != Shape{weight_.value.dim(1)}) {
        throw ShapeError("dense: weight " + shape_to_string(weight_.value.shape()) + " and bias " +
                         shape_to_string(bias_.value.shape()) + " do not agree");
    }
}

Shape Dense::output_shape(const Shape& sample_in) const {
    if (sample_in != Shape{in_features()}) {
        throw ShapeError("dense expects [" + std::to_string(in_features()) + "], got " + shape_to_string(sample_in));
    }
    return {out_features()};
}

Tensor Dense::apply(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    Tensor y = matmul(x, weight);
    const std::size_t n = y.dim(0), out = y.dim(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j) y[i * out + j] += bias[j];
    return y;
}

Tensor Dense::weight_grad(const Tensor& x, const Tensor& grad_out) { return matmul(transpose(x), grad_out); }

Tensor Dense::input_grad(const Tensor& grad_out, const Tensor& weight) {
    return matmul(grad_out, transpose(weight));
}

Tensor Dense::bias_grad(const Tensor& grad_out) {
    const std::size_t n = grad_out.dim(0), out = grad_out.dim(1);
    Tensor g({out});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j) g[j] += grad_out[i * out + j];
    return g;
}

Tensor Dense::forward(const Tensor& x, Path path) {
    output_shape(sample_shape(x));
    remember(x, path);
    return apply(x, weight_.value, bias_.value);
}

Tensor Dense::backward(const Tensor& grad_out, Path path) {
    const Tensor& x = recall(path);
    accumulate(weight_.grad, weight_grad(x, grad_out));
    accumulate(bias_.grad, bias_grad(grad_out));
    return input_grad(grad_out, weight_.value);
}

std::uint64_t Dense::flops(const Shape&) const { return in_features() * out_features(); }

void Dense::reset_parameters(std::mt19937_64& rng) {
    he_normal(weight_.value, in_features(), rng);
    bias_.value = Tensor::zeros_like(bias_.value);
}

std::vector<std::int64_t> Dense::hyperparameters() const {
    return {static_cast<std::int64_t>(in_features()), static_cast<std::int64_t>(out_features())};
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
               std::size_t padding)
    : kernel_("kernel", Tensor({out_channels, in_channels, kernel, kernel})),
      bias_("bias", Tensor({out_channels})),
      stride_(stride),
      padding_(padding) {
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
}

Conv2d::Conv2d(Tensor kernel, Tensor bias, std::size_t stride, std::size_t padding)
    : kernel_("kernel", std::move(kernel)), bias_("bias", std::move(bias)), stride_(stride), padding_(padding) {
    if (kernel_.value.rank() != 4 || bias_.value.shape() != Shape{kernel_.value.dim(0)}) {
        throw ShapeError("conv2d: kernel " + shape_to_string(kernel_.value.shape()) + " and bias " +
                         shape_to_string(bias_.value.shape()) + " do not agree");
    }
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
}

Shape Conv2d::output_shape_for(const Shape& sample_in, const Shape& kernel, std::size_t stride,
                               std::size_t padding) {
    if (sample_in.size() != 3 || sample_in[0] != kernel[1]) {
        throw ShapeError("conv2d expects [" + std::to_string(kernel[1]) + "xHxW], got " + shape_to_string(sample_in));
    }
    return {kernel[0], conv_output_extent(sample_in[1], kernel[2], stride, padding),
            conv_output_extent(sample_in[2], kernel[3], stride, padding)};
}

Shape Conv2d::output_shape(const Shape& sample_in) const {
    return output_shape_for(sample_in, kernel_.value.shape(), stride_, padding_);
}

Tensor Conv2d::apply(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
    Tensor y = conv2d(x, kernel, stride, padding);
    const std::size_t n = y.dim(0), f = y.dim(1), plane = y.dim(2) * y.dim(3);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < f; ++c) {
            double* p = y.data().data() + (i * f + c) * plane;
            for (std::size_t k = 0; k < plane; ++k) p[k] += bias[c];
        }
    return y;
}

Tensor Conv2d::bias_grad(const Tensor& grad_out) {
    const std::size_t n = grad_out.dim(0), f = grad_out.dim(1), plane = grad_out.dim(2) * grad_out.dim(3);
    Tensor g({f});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < f; ++c) {
            const double* p = grad_out.data().data() + (i * f + c) * plane;
            double acc = 0.0;
            for (std::size_t k = 0; k < plane; ++k) acc += p[k];
            g[c] += acc;
        }
    return g;
}

Tensor Conv2d::forward(const Tensor& x, Path path) {
    output_shape(sample_shape(x));
    remember(x, path);
    return apply(x, kernel_.value, bias_.value, stride_, padding_);
}

Tensor Conv2d::backward(const Tensor& grad_out, Path path) {
    const Tensor& x = recall(path);
    accumulate(kernel_.grad, conv2d_backward_kernel(grad_out, x, kernel_.value.shape(), stride_, padding_));
    accumulate(bias_.grad, bias_grad(grad_out));
    return conv2d_backward_input(grad_out, kernel_.value, x.shape(), stride_, padding_);
}

std::uint64_t Conv2d::flops(const Shape& sample_in) const {
    const Shape out = output_shape(sample_in);
    const auto& k = kernel_.value.shape();
    return static_cast<std::uint64_t>(out[0]) * out[1] * out[2] * k[1] * k[2] * k[3];
}

void Conv2d::reset_parameters(std::mt19937_64& rng) {
    const auto& k = kernel_.value.shape();
    he_normal(kernel_.value, k[1] * k[2] * k[3], rng);
    bias_.value = Tensor::zeros_like(bias_.value);
}

std::vector<std::int64_t> Conv2d::hyperparameters() const {
    const auto& k = kernel_.value.shape();
    return {static_cast<std::int64_t>(k[1]), static_cast<std::int64_t>(k[0]), static_cast<std::int64_t>(k[2]),
            static_cast<std::int64_t>(stride_), static_cast<std::int64_t>(padding_)};
}

// ---------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor& x, Path path) {
    remember(x, path);
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

Tensor Relu::backward(const Tensor& grad_out, Path path) {
    const Tensor& x = recall(path);
    if (grad_out.shape() != x.shape()) throw ShapeError("relu: gradient shape mismatch");
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
    return g;
}

// ---------------------------------------------------------------- AvgPool

AvgPool::AvgPool(std::size_t window) : window_(window) {
    if (window == 0) throw ShapeError("avgpool: window must be positive");
}

Shape AvgPool::output_shape(const Shape& sample_in) const {
    if (sample_in.size() != 3 || sample_in[1] < window_ || sample_in[2] < window_) {
        throw ShapeError("avgpool(" + std::to_string(window_) + ") cannot pool " + shape_to_string(sample_in));
    }
    return {sample_in[0], sample_in[1] / window_, sample_in[2] / window_};
}

Tensor AvgPool::forward(const Tensor& x, Path path) {
    const Shape out_sample = output_shape(sample_shape(x));
    remember(x, path);
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = out_sample[1], ow = out_sample[2];
    const double inv = 1.0 / static_cast<double>(window_ * window_);
    Tensor y({n, c, oh, ow});
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* src = x.data().data() + i * h * w;
        double* dst = y.data().data() + i * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < window_; ++dy)
                    for (std::size_t dx = 0; dx < window_; ++dx)
                        acc += src[(oy * window_ + dy) * w + ox * window_ + dx];
                dst[oy * ow + ox] = acc * inv;
            }
    }
    return y;
}

Tensor AvgPool::backward(const Tensor& grad_out, Path path) {
    const Tensor& x = recall(path);
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / window_, ow = w / window_;
    if (grad_out.shape() != Shape{n, c, oh, ow}) throw ShapeError("avgpool: gradient shape mismatch");
    const double inv = 1.0 / static_cast<double>(window_ * window_);
    Tensor g(x.shape());
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* src = grad_out.data().data() + i * oh * ow;
        double* dst = g.data().data() + i * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double v = src[oy * ow + ox] * inv;
                for (std::size_t dy = 0; dy < window_; ++dy)
                    for (std::size_t dx = 0; dx < window_; ++dx) dst[(oy * window_ + dy) * w + ox * window_ + dx] = v;
            }
    }
    return g;
}

// ---------------------------------------------------------------- Flatten

Tensor Flatten::forward(const Tensor& x, Path path) {
    remember(x, path);
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

Tensor Flatten::backward(const Tensor& grad_out, Path path) {
    return grad_out.reshaped(recall(path).shape());
}

// ---------------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(std::vector<std::unique_ptr<Layer>> body) : body_(std::move(body)) {
    if (body_.empty()) throw ShapeError("residual block needs a non-empty body");
}

std::unique_ptr<ResidualBlock> ResidualBlock::basic(std::size_t channels) {
    std::vector<std::unique_ptr<Layer>> body;
    body.push_back(std::make_unique<Conv2d>(channels, channels, 3, 1, 1));
    body.push_back(std::make_unique<Relu>());
    body.push_back(std::make_unique<Conv2d>(channels, channels, 3, 1, 1));
    return std::make_unique<ResidualBlock>(std::move(body));
}

ResidualBlock::ResidualBlock(const ResidualBlock& other) : Layer(other) {
    body_.reserve(other.body_.size());
    for (const auto& l : other.body_) body_.push_back(l->clone());
}

Shape ResidualBlock::output_shape(const Shape& sample_in) const {
    Shape s = sample_in;
    for (const auto& l : body_) s = l->output_shape(s);
    if (s != sample_in) {
        throw ShapeError("residual body maps " + shape_to_string(sample_in) + " to " + shape_to_string(s));
    }
    return s;
}

Tensor ResidualBlock::forward(const Tensor& x, Path path) {
    output_shape(sample_shape(x));
    remember(x, path);
    Tensor h = x;
    for (auto& l : body_) h = l->forward(h, path);
    return add(x, h);
}

Tensor ResidualBlock::backward(const Tensor& grad_out, Path path) {
    recall(path);
    Tensor g = grad_out;
    for (auto it = body_.rbegin(); it != body_.rend(); ++it) g = (*it)->backward(g, path);
    return add(grad_out, g);
}

std::uint64_t ResidualBlock::flops(const Shape& sample_in) const {
    std::uint64_t total = shape_numel(sample_in);
    Shape s = sample_in;
    for (const auto& l : body_) {
        total += l->flops(s);
        s = l->output_shape(s);
    }
    return total;
}

std::vector<Parameter*> ResidualBlock::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : body_) {
        auto p = l->parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

void ResidualBlock::reset_parameters(std::mt19937_64& rng) {
    for (auto& l : body_) l->reset_parameters(rng);
}

std::vector<const Layer*> ResidualBlock::children() const {
    std::vector<const Layer*> out;
    for (const auto& l : body_) out.push_back(l.get());
    return out;
}

}  // namespace dregnet::nn
