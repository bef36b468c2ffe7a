#pragma once

#include <memory>
#include <vector>

#include "dregnet/nn/layer.hpp"

namespace dregnet::nn {

/// y = x·W + b with W of shape in×out.
class Dense final : public Layer {
public:
    Dense(std::size_t in, std::size_t out);
    Dense(Tensor weight, Tensor bias);

    LayerKind kind() const noexcept override { return LayerKind::Dense; }
    Shape output_shape(const Shape& sample_in) const override;
    Tensor forward(const Tensor& x, Path path) override;
    Tensor backward(const Tensor& grad_out, Path path) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
    std::uint64_t flops(const Shape& sample_in) const override;
    std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
    void reset_parameters(std::mt19937_64& rng) override;
    std::vector<std::int64_t> hyperparameters() const override;

    std::size_t in_features() const { return weight_.value.dim(0); }
    std::size_t out_features() const { return weight_.value.dim(1); }
    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }
    const Parameter& weight() const { return weight_; }
    const Parameter& bias() const { return bias_; }

    /// Stateless pieces shared with the dual-weight wrapper.
    static Tensor apply(const Tensor& x, const Tensor& weight, const Tensor& bias);
    static Tensor weight_grad(const Tensor& x, const Tensor& grad_out);
    static Tensor input_grad(const Tensor& grad_out, const Tensor& weight);
    static Tensor bias_grad(const Tensor& grad_out);

private:
    Parameter weight_;
    Parameter bias_;
};

/// Cross-correlation with square kernel, stride and zero padding, plus a
/// per-filter bias.
class Conv2d final : public Layer {
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
           std::size_t padding = 0);
    Conv2d(Tensor kernel, Tensor bias, std::size_t stride, std::size_t padding);

    LayerKind kind() const noexcept override { return LayerKind::Conv2d; }
    Shape output_shape(const Shape& sample_in) const override;
    Tensor forward(const Tensor& x, Path path) override;
    Tensor backward(const Tensor& grad_out, Path path) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
    std::uint64_t flops(const Shape& sample_in) const override;
    std::vector<Parameter*> parameters() override { return {&kernel_, &bias_}; }
    void reset_parameters(std::mt19937_64& rng) override;
    std::vector<std::int64_t> hyperparameters() const override;

    std::size_t stride() const { return stride_; }
    std::size_t padding() const { return padding_; }
    Parameter& kernel() { return kernel_; }
    Parameter& bias() { return bias_; }
    const Parameter& kernel() const { return kernel_; }
    const Parameter& bias() const { return bias_; }

    static Shape output_shape_for(const Shape& sample_in, const Shape& kernel, std::size_t stride,
                                  std::size_t padding);
    static Tensor apply(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                        std::size_t padding);
    static Tensor bias_grad(const Tensor& grad_out);

private:
    Parameter kernel_;
    Parameter bias_;
    std::size_t stride_;
    std::size_t padding_;
};

class Relu final : public Layer {
public:
    LayerKind kind() const noexcept override { return LayerKind::Relu; }
    Shape output_shape(const Shape& sample_in) const override { return sample_in; }
    Tensor forward(const Tensor& x, Path path) override;
    Tensor backward(const Tensor& grad_out, Path path) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
    std::uint64_t flops(const Shape& sample_in) const override { return shape_numel(sample_in); }
};

/// Non-overlapping average pooling (window == stride); trailing rows/cols
/// that do not fill a window are dropped.
class AvgPool final : public Layer {
public:
    explicit AvgPool(std::size_t window);

    LayerKind kind() const noexcept override { return LayerKind::AvgPool; }
    Shape output_shape(const Shape& sample_in) const override;
    Tensor forward(const Tensor& x, Path path) override;
    Tensor backward(const Tensor& grad_out, Path path) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool>(*this); }
    std::uint64_t flops(const Shape& sample_in) const override { return shape_numel(sample_in); }
    std::vector<std::int64_t> hyperparameters() const override {
        return {static_cast<std::int64_t>(window_)};
    }

private:
    std::size_t window_;
};

class Flatten final : public Layer {
public:
    LayerKind kind() const noexcept override { return LayerKind::Flatten; }
    Shape output_shape(const Shape& sample_in) const override { return {shape_numel(sample_in)}; }
    Tensor forward(const Tensor& x, Path path) override;
    Tensor backward(const Tensor& grad_out, Path path) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
    std::uint64_t flops(const Shape&) const override { return 0; }
};

/// y = x + body(x). The body must preserve the sample shape.
class ResidualBlock final : public Layer {
public:
    explicit ResidualBlock(std::vector<std::unique_ptr<Layer>> body);
    /// conv3x3 -> relu -> conv3x3 over `channels`, padding 1.
    static std::unique_ptr<ResidualBlock> basic(std::size_t channels);

    ResidualBlock(const ResidualBlock& other);
    ResidualBlock& operator=(const ResidualBlock&) = delete;

    LayerKind kind() const noexcept override { return LayerKind::Residual; }
    Shape output_shape(const Shape& sample_in) const override;
    Tensor forward(const Tensor& x, Path path) override;
    Tensor backward(const Tensor& grad_out, Path path) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ResidualBlock>(*this); }
    std::uint64_t flops(const Shape& sample_in) const override;
    std::vector<Parameter*> parameters() override;
    void reset_parameters(std::mt19937_64& rng) override;
    std::vector<const Layer*> children() const override;

private:
    std::vector<std::unique_ptr<Layer>> body_;
};

}  // namespace dregnet::nn
