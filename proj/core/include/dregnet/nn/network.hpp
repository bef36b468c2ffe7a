#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "dregnet/nn/layer.hpp"

namespace dregnet::nn {

/// Logits of one forward pass. `l` is present only when the network holds a
/// dual-path layer.
struct ForwardResult {
    Tensor r;
    std::optional<Tensor> l;

    bool dual() const noexcept { return l.has_value(); }
    const Tensor& logits(Path p) const { return p == Path::R ? r : *l; }
};

/// Gradient of the loss with respect to the logits of each path.
struct OutputGradient {
    Tensor r;
    std::optional<Tensor> l;
};

/// An ordered chain of layers with at most one dual-path layer. Layers before
/// the split are evaluated once; the split layer and every layer after it are
/// evaluated once per path and their shared parameters receive the sum of
/// both paths' gradients.
class Network {
public:
    explicit Network(Shape sample_input_shape);
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;
    ~Network() = default;

    /// Appends a layer, checking that its input fits the current output shape.
    Layer& add(std::unique_ptr<Layer> layer);
    template <typename L, typename... Args>
    L& emplace(Args&&... args) {
        return static_cast<L&>(add(std::make_unique<L>(std::forward<Args>(args)...)));
    }
    /// Replaces layer `index`; the replacement must have the same input/output
    /// sample shapes.
    void replace(std::size_t index, std::unique_ptr<Layer> layer);

    const Shape& input_shape() const noexcept { return input_shape_; }
    Shape output_shape() const;
    /// Per-sample input shape of layer `index`.
    Shape shape_before(std::size_t index) const;
    std::size_t size() const noexcept { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }

    std::optional<std::size_t> dual_index() const noexcept { return dual_index_; }
    DualPathLayer* dual_layer();
    const DualPathLayer* dual_layer() const;

    ForwardResult forward(const Tensor& x);
    /// Evaluates a single path only (both paths coincide without a split).
    Tensor forward_path(const Tensor& x, Path path);
    /// Zeroes every gradient then back-propagates the output gradients.
    /// Requires a preceding forward() on the same batch.
    void backward(const OutputGradient& grad);
    void zero_grad();

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    /// Total number of scalar parameters.
    std::size_t parameter_count() const;

    void initialize(std::uint64_t seed);

    std::uint64_t forward_flops() const;
    /// Forward FLOPs of layers [index, end) per sample.
    std::uint64_t flops_from(std::size_t index) const;

    /// Top-level conv/dense layers eligible to become the split point, in
    /// reverse topological order: element 0 is "Block-R1". The final
    /// classifier layer is excluded.
    std::vector<std::size_t> eligible_positions() const;

private:
    Shape input_shape_;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::optional<std::size_t> dual_index_;
    bool has_forward_ = false;
};

/// Numerically stable row-wise softmax of N×C logits.
Tensor softmax(const Tensor& logits);
/// Mean over the batch of -log softmax(logits)[label].
double cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Gradient of cross_entropy with respect to the logits.
Tensor cross_entropy_grad(const Tensor& logits, std::span<const int> labels);
/// Fraction of rows whose argmax equals the label (ties resolve to the lower
/// class index).
double accuracy(const Tensor& logits, std::span<const int> labels);

/// Components of the composite objective L_R + L_L - lambda * ||W^R - W^L||_F^2.
struct LossBreakdown {
    double l_r = 0.0;
    std::optional<double> l_l;
    double l_dreg_raw = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

struct LossEvaluation {
    LossBreakdown breakdown;
    OutputGradient grad;
};

/// Cross-entropy on each path plus the distance term of the split layer.
LossEvaluation evaluate_loss(const Network& net, const ForwardResult& out, std::span<const int> labels,
                             double lambda);

/// Gradient of the composite objective for every parameter (aligned with
/// parameters()), after backward() has filled the data-loss gradients.
std::vector<Tensor> composite_gradients(const Network& net, double lambda);

/// Central-difference estimate of d loss / d parameters()[param_index].
/// The parameter is restored afterwards.
Tensor finite_diff_grad(Network& net, const std::function<double(Network&)>& loss, std::size_t param_index,
                        double epsilon);

}  // namespace dregnet::nn
