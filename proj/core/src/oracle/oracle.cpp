#include "dregnet/oracle/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace dregnet::oracle {

Tensor conv2d_bruteforce(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    if (is.size() != 4 || ks.size() != 4 || is[1] != ks[1]) throw ShapeError("conv2d_bruteforce: bad shapes");
    if (stride == 0) throw ShapeError("conv2d_bruteforce: stride must be positive");
    const std::size_t N = is[0], C = is[1], H = is[2], W = is[3];
    const std::size_t F = ks[0], KH = ks[2], KW = ks[3];
    const std::size_t PH = H + 2 * padding, PW = W + 2 * padding;
    if (PH < KH || PW < KW || (PH - KH) % stride != 0 || (PW - KW) % stride != 0) {
        throw ShapeError("conv2d_bruteforce: output size is not a positive integer");
    }
    const std::size_t OH = (PH - KH) / stride + 1, OW = (PW - KW) / stride + 1;

    std::vector<double> padded(N * C * PH * PW, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    padded[((n * C + c) * PH + y + padding) * PW + x + padding] =
                        input.values()[((n * C + c) * H + y) * W + x];

    std::vector<double> out(N * F * OH * OW, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ox = 0; ox < OW; ++ox) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ky = 0; ky < KH; ++ky)
                            for (std::size_t kx = 0; kx < KW; ++kx)
                                acc += padded[((n * C + c) * PH + oy * stride + ky) * PW + ox * stride + kx] *
                                       kernel.values()[((f * C + c) * KH + ky) * KW + kx];
                    out[((n * F + f) * OH + oy) * OW + ox] = acc;
                }
    return Tensor({N, F, OH, OW}, std::move(out));
}

double scalar_linear_sq_grad(double w, double x, double target) { return 2.0 * (w * x - target) * x; }

std::pair<double, double> scalar_chain_sq_grad(double w1, double w2, double x, double target) {
    const double pre = w1 * x;
    const double h = pre > 0.0 ? pre : 0.0;
    const double err = 2.0 * (w2 * h - target);
    const double dw2 = err * h;
    const double dw1 = pre > 0.0 ? err * w2 * x : 0.0;
    return {dw1, dw2};
}

Tensor softmax_xent_grad(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<double> g(n * c);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double m = logits.values()[i * c];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits.values()[i * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (g[i * c + j] = std::exp(logits.values()[i * c + j] - m));
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] /= z;
        g[i * c + static_cast<std::size_t>(labels[i])] -= 1.0;
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] *= inv_n;
    }
    return Tensor(logits.shape(), std::move(g));
}

std::vector<std::vector<Tensor>> reference_vanilla_trainer(nn::Network net, const data::Dataset& dataset,
                                                           const ReferenceConfig& config) {
    if (net.dual_index()) throw UsageError("reference_vanilla_trainer: network must be single-path");
    auto params = net.parameters();
    if (!config.lr_scale.empty() && config.lr_scale.size() != params.size()) {
        throw std::invalid_argument("reference_vanilla_trainer: lr_scale size mismatch");
    }
    std::vector<std::vector<double>> velocity;
    for (const auto* p : params) velocity.emplace_back(p->value.size(), 0.0);

    std::vector<std::vector<Tensor>> trajectory;
    auto snapshot = [&] {
        std::vector<Tensor> s;
        for (const auto* p : params) s.push_back(p->value);
        trajectory.push_back(std::move(s));
    };
    snapshot();

    std::size_t step = 0;
    for (std::size_t epoch = 0;; ++epoch) {
        if (config.steps == 0 && epoch >= config.epochs) break;
        for (const auto& batch : data::epoch_batches(dataset, config.batch_size, config.seed, epoch)) {
            if (config.steps != 0 && step >= config.steps) return trajectory;
            const Tensor logits = net.forward(batch.inputs).r;
            net.backward({softmax_xent_grad(logits, batch.labels), std::nullopt});
            for (std::size_t i = 0; i < params.size(); ++i) {
                const double lr = config.eta * (config.lr_scale.empty() ? 1.0 : config.lr_scale[i]);
                auto w = params[i]->value.data();
                auto g = params[i]->grad.data();
                auto& v = velocity[i];
                for (std::size_t k = 0; k < w.size(); ++k) {
                    v[k] = config.beta * v[k] + g[k];
                    w[k] -= lr * v[k];
                }
            }
            snapshot();
            ++step;
        }
    }
    return trajectory;
}

}  // namespace dregnet::oracle
