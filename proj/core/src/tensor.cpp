#include "dregnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace dregnet {

std::size_t shape_numel(const Shape& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    }
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
    require_same_shape(a, b, op);
    Tensor out(a.shape());
    auto da = a.data();
    auto db = b.data();
    auto dout = out.data();
    for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = f(da[i], db[i]);
    require_finite(out, op);
    return out;
}

template <typename F>
Tensor map(const Tensor& a, const char* op, F f) {
    Tensor out(a.shape());
    auto da = a.data();
    auto dout = out.data();
    for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = f(da[i]);
    require_finite(out, op);
    return out;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_to_string(shape_));
    }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    if (m == 0) throw ShapeError("from_rows: no rows");
    const std::size_t n = rows.begin()->size();
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
        if (row.size() != n) throw ShapeError("from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({m, n}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) out[i * n + i] = 1.0;
    return out;
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) throw ShapeError("at: index rank does not match tensor rank");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= shape_[axis]) throw ShapeError("at: index out of range");
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return data_[flat];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NonFiniteError(std::string(op) + ": non-finite value produced");
}

Tensor add(const Tensor& a, const Tensor& b) {
    return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
    return map(a, "scale", [s](double x) { return x * s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return map(a, "add_scalar", [s](double x) { return x + s; });
}

Tensor axpy(const Tensor& a, double s, const Tensor& b) {
    return zip(a, b, "axpy", [s](double x, double y) { return x + s * y; });
}

double sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return acc;
}

double frobenius_sq(const Tensor& a) {
    require_finite(a, "frobenius_sq");
    double acc = 0.0;
    for (double v : a.data()) acc += v * v;
    return acc;
}

double frobenius(const Tensor& a) { return std::sqrt(frobenius_sq(a)); }

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_to_string(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    auto da = a.data();
    auto db = b.data();
    auto dout = out.data();
    // i-k-j order keeps the inner loop contiguous in both b and out.
    for (std::size_t i = 0; i < m; ++i) {
        double* row = dout.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = da[i * k + p];
            const double* brow = db.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
        }
    }
    require_finite(out, "matmul");
    return out;
}

std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding) {
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    const std::size_t padded = in + 2 * padding;
    if (padded < k) throw ShapeError("conv2d: kernel larger than padded input");
    if ((padded - k) % stride != 0) {
        throw ShapeError("conv2d: (extent + 2*padding - kernel) not divisible by stride");
    }
    return (padded - k) / stride + 1;
}

namespace {

struct ConvGeometry {
    std::size_t n, c, h, w, f, kh, kw, oh, ow;
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t padding) {
    if (input.size() != 4 || kernel.size() != 4) {
        throw ShapeError("conv2d: expected 4-D input and kernel, got " + shape_to_string(input) + " and " +
                         shape_to_string(kernel));
    }
    if (input[1] != kernel[1]) {
        throw ShapeError("conv2d: channel mismatch " + shape_to_string(input) + " vs kernel " +
                         shape_to_string(kernel));
    }
    ConvGeometry g{input[0], input[1], input[2], input[3], kernel[0], kernel[2], kernel[3], 0, 0};
    g.oh = conv_output_extent(g.h, g.kh, stride, padding);
    g.ow = conv_output_extent(g.w, g.kw, stride, padding);
    return g;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    const auto g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
    Tensor out({g.n, g.f, g.oh, g.ow});
    auto x = input.data();
    auto k = kernel.data();
    auto y = out.data();
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t f = 0; f < g.f; ++f) {
            double* yplane = y.data() + ((n * g.f + f) * g.oh) * g.ow;
            for (std::size_t c = 0; c < g.c; ++c) {
                const double* xplane = x.data() + ((n * g.c + c) * g.h) * g.w;
                const double* kplane = k.data() + ((f * g.c + c) * g.kh) * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const double kv = kplane[ky * g.kw + kx];
                        for (std::size_t oy = 0; oy < g.oh; ++oy) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                                yplane[oy * g.ow + ox] += kv * xplane[iy * static_cast<std::ptrdiff_t>(g.w) + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    require_finite(out, "conv2d");
    return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                             std::size_t stride, std::size_t padding) {
    const auto g = conv_geometry(input_shape, kernel.shape(), stride, padding);
    if (grad_out.shape() != Shape{g.n, g.f, g.oh, g.ow}) {
        throw ShapeError("conv2d_backward_input: grad shape " + shape_to_string(grad_out.shape()));
    }
    Tensor dx(input_shape);
    auto dy = grad_out.data();
    auto k = kernel.data();
    auto dxd = dx.data();
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t f = 0; f < g.f; ++f) {
            const double* dyplane = dy.data() + ((n * g.f + f) * g.oh) * g.ow;
            for (std::size_t c = 0; c < g.c; ++c) {
                double* dxplane = dxd.data() + ((n * g.c + c) * g.h) * g.w;
                const double* kplane = k.data() + ((f * g.c + c) * g.kh) * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const double kv = kplane[ky * g.kw + kx];
                        for (std::size_t oy = 0; oy < g.oh; ++oy) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                                dxplane[iy * static_cast<std::ptrdiff_t>(g.w) + ix] += kv * dyplane[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    require_finite(dx, "conv2d_backward_input");
    return dx;
}

Tensor conv2d_backward_kernel(const Tensor& grad_out, const Tensor& input, const Shape& kernel_shape,
                              std::size_t stride, std::size_t padding) {
    const auto g = conv_geometry(input.shape(), kernel_shape, stride, padding);
    if (grad_out.shape() != Shape{g.n, g.f, g.oh, g.ow}) {
        throw ShapeError("conv2d_backward_kernel: grad shape " + shape_to_string(grad_out.shape()));
    }
    Tensor dk(kernel_shape);
    auto dy = grad_out.data();
    auto x = input.data();
    auto dkd = dk.data();
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t f = 0; f < g.f; ++f) {
            const double* dyplane = dy.data() + ((n * g.f + f) * g.oh) * g.ow;
            for (std::size_t c = 0; c < g.c; ++c) {
                const double* xplane = x.data() + ((n * g.c + c) * g.h) * g.w;
                double* dkplane = dkd.data() + ((f * g.c + c) * g.kh) * g.kw;
                for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        double acc = 0.0;
                        for (std::size_t oy = 0; oy < g.oh; ++oy) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                                acc += xplane[iy * static_cast<std::ptrdiff_t>(g.w) + ix] * dyplane[oy * g.ow + ox];
                            }
                        }
                        dkplane[ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    require_finite(dk, "conv2d_backward_kernel");
    return dk;
}

}  // namespace dregnet
