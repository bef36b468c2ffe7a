#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dregnet/errors.hpp"

namespace dregnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major float64 tensor. Value semantics; no views, no strides.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }
    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double at(std::initializer_list<std::size_t> index) const;

    /// Same data, new shape with identical element count.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;
    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Throws NonFiniteError naming `op` if any element of `t` is NaN/Inf.
void require_finite(const Tensor& t, const char* op);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// a + s * b, the common axpy form used by update rules.
Tensor axpy(const Tensor& a, double s, const Tensor& b);

double sum(const Tensor& a);
double frobenius_sq(const Tensor& a);
double frobenius(const Tensor& a);
double max_abs(const Tensor& a);

Tensor transpose(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);

/// Output spatial extent of a convolution; throws ShapeError when not a
/// positive integer.
std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride,
                               std::size_t padding);

/// Cross-correlation (no kernel flip). input N×C×H×W, kernel F×C×kh×kw.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

/// Gradient of conv2d with respect to its input, given grad of the output.
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                             std::size_t stride, std::size_t padding);

/// Gradient of conv2d with respect to its kernel, given grad of the output.
Tensor conv2d_backward_kernel(const Tensor& grad_out, const Tensor& input, const Shape& kernel_shape,
                              std::size_t stride, std::size_t padding);

}  // namespace dregnet
