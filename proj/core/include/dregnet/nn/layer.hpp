#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dregnet/tensor.hpp"

namespace dregnet::nn {

enum class LayerKind : std::uint32_t {
    Dense = 1,
    Conv2d = 2,
    Relu = 3,
    AvgPool = 4,
    Flatten = 5,
    Residual = 6,
    DReg = 7,
};

std::string to_string(LayerKind kind);

/// Which of the two evaluation paths a call belongs to. Layers without a
/// dual weight set treat both paths identically but keep separate caches, so
/// shared layers above a split can be evaluated once per path.
enum class Path : std::size_t { R = 0, L = 1 };

inline const char* to_string(Path p) { return p == Path::R ? "R" : "L"; }

/// Shared parameters belong to W; DualR/DualL are the two weight sets of a
/// dual-path layer.
enum class ParamRole { Shared, DualR, DualL };

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    ParamRole role = ParamRole::Shared;

    Parameter() = default;
    Parameter(std::string n, Tensor v, ParamRole r = ParamRole::Shared)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)), role(r) {}
};

/// A differentiable node. Forward caches what backward needs, one slot per
/// path; backward accumulates into the parameters' grad tensors.
class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerKind kind() const noexcept = 0;
    /// Per-sample output shape for a per-sample input shape. Throws ShapeError
    /// when the input does not fit this layer.
    virtual Shape output_shape(const Shape& sample_in) const = 0;
    virtual Tensor forward(const Tensor& x, Path path) = 0;
    virtual Tensor backward(const Tensor& grad_out, Path path) = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;
    /// Forward multiply-accumulate count per sample.
    virtual std::uint64_t flops(const Shape& sample_in) const = 0;

    virtual std::vector<Parameter*> parameters() { return {}; }
    std::vector<const Parameter*> parameters() const;
    virtual void reset_parameters(std::mt19937_64& /*rng*/) {}
    /// Integer hyperparameters sufficient to rebuild the layer (model files).
    virtual std::vector<std::int64_t> hyperparameters() const { return {}; }
    virtual std::vector<const Layer*> children() const { return {}; }

    void zero_grad();
    void clear_cache() noexcept { cache_ = {}; }

protected:
    Layer() = default;
    Layer(const Layer&) = default;
    Layer& operator=(const Layer&) = default;

    void remember(const Tensor& x, Path p) { cache_[static_cast<std::size_t>(p)] = x; }
    const Tensor& recall(Path p) const;

private:
    std::array<std::optional<Tensor>, 2> cache_;
};

/// A layer holding two weight sets, one per path (the split point of a
/// dual-path network).
class DualPathLayer : public Layer {
public:
    /// Squared Frobenius distance between the two weight sets.
    virtual double distance_sq() const = 0;
    /// Gradient of distance_sq with respect to the R and L weight sets.
    virtual std::pair<Tensor, Tensor> distance_grad() const = 0;
    /// Single-path layer holding the kept weight set (and any shared params).
    virtual std::unique_ptr<Layer> collapse(Path keep) const = 0;
    /// Wrapped layer kind.
    virtual LayerKind inner_kind() const noexcept = 0;
};

}  // namespace dregnet::nn
