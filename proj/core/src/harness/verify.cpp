#include "dregnet/harness/verify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "dregnet/data/data.hpp"
#include "dregnet/harness/runner.hpp"
#include "dregnet/nn/layers.hpp"
#include "dregnet/optim/optim.hpp"
#include "dregnet/oracle/oracle.hpp"

namespace dregnet::harness {

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = n(rng);
    return Tensor(shape, std::move(v));
}

std::vector<int> random_labels(std::size_t n, int classes, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(0, classes - 1);
    std::vector<int> out(n);
    for (auto& l : out) l = d(rng);
    return out;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

void jitter(nn::Network& net, std::mt19937_64& rng, double scale) {
    for (auto* p : net.parameters()) p->value = add(p->value, random_tensor(p->value.shape(), rng, scale));
}

std::string sci(double v) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << v;
    return os.str();
}

/// Small conv net: conv(C->F) relu conv(F->F) relu flatten dense(classes).
nn::Network toy_convnet(std::size_t channels, std::size_t side, std::size_t width, int classes) {
    nn::Network net({channels, side, side});
    net.emplace<nn::Conv2d>(channels, width, 3, 1, 1);
    net.emplace<nn::Relu>();
    net.emplace<nn::Conv2d>(width, width, 3, 1, 1);
    net.emplace<nn::Relu>();
    net.emplace<nn::Flatten>();
    net.emplace<nn::Dense>(width * side * side, static_cast<std::size_t>(classes));
    return net;
}

struct GradCase {
    std::string kind;
    nn::Network net;
    Tensor x;
    std::vector<int> labels;
    double lambda = 0.0;
};

GradCase make_grad_case(std::size_t index, std::mt19937_64& rng) {
    const int classes = static_cast<int>(pick(rng, 2, 4));
    const std::size_t batch = pick(rng, 1, 3);
    const auto cls = static_cast<std::size_t>(classes);
    switch (index % 7) {
        case 0: {
            const std::size_t d = pick(rng, 1, 5), h = pick(rng, 1, 5);
            nn::Network net({d});
            net.emplace<nn::Dense>(d, h);
            net.emplace<nn::Dense>(h, cls);
            return {"dense", std::move(net), random_tensor({batch, d}, rng), random_labels(batch, classes, rng)};
        }
        case 1: {
            const std::size_t d = pick(rng, 2, 5), h = pick(rng, 2, 6);
            nn::Network net({d});
            net.emplace<nn::Dense>(d, h);
            net.emplace<nn::Relu>();
            net.emplace<nn::Dense>(h, cls);
            return {"relu", std::move(net), random_tensor({batch, d}, rng), random_labels(batch, classes, rng)};
        }
        case 2: {
            const std::size_t c = pick(rng, 1, 2), f = pick(rng, 1, 3), k = pick(rng, 1, 3);
            const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
            std::size_t side = pick(rng, 3, 6);
            while ((side + 2 * pad < k) || (side + 2 * pad - k) % stride != 0) ++side;
            nn::Network net({c, side, side});
            net.emplace<nn::Conv2d>(c, f, k, stride, pad);
            net.emplace<nn::Flatten>();
            net.emplace<nn::Dense>(shape_numel(net.output_shape()), cls);
            return {"conv2d+flatten", std::move(net), random_tensor({batch, c, side, side}, rng),
                    random_labels(batch, classes, rng)};
        }
        case 3: {
            const std::size_t c = pick(rng, 1, 2), f = pick(rng, 1, 3), side = pick(rng, 4, 6);
            const std::size_t window = pick(rng, 2, 3);
            nn::Network net({c, side, side});
            net.emplace<nn::Conv2d>(c, f, 3, 1, 1);
            net.emplace<nn::AvgPool>(window);
            net.emplace<nn::Flatten>();
            net.emplace<nn::Dense>(shape_numel(net.output_shape()), cls);
            return {"avgpool", std::move(net), random_tensor({batch, c, side, side}, rng),
                    random_labels(batch, classes, rng)};
        }
        case 4: {
            const std::size_t c = pick(rng, 1, 2), f = pick(rng, 1, 3), side = pick(rng, 3, 5);
            nn::Network net({c, side, side});
            net.emplace<nn::Conv2d>(c, f, 3, 1, 1);
            net.add(nn::ResidualBlock::basic(f));
            net.emplace<nn::Flatten>();
            net.emplace<nn::Dense>(shape_numel(net.output_shape()), cls);
            return {"residual", std::move(net), random_tensor({batch, c, side, side}, rng),
                    random_labels(batch, classes, rng)};
        }
        case 5: {
            const std::size_t d = pick(rng, 2, 5), h = pick(rng, 2, 5);
            nn::Network net({d});
            net.emplace<nn::Dense>(d, h);
            net.emplace<nn::Relu>();
            net.emplace<nn::Dense>(h, h);
            net.emplace<nn::Relu>();
            net.emplace<nn::Dense>(h, cls);
            GradCase g{"dreg(dense)", std::move(net), random_tensor({batch, d}, rng),
                       random_labels(batch, classes, rng)};
            g.lambda = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
            return g;
        }
        default: {
            const std::size_t c = pick(rng, 1, 2), f = pick(rng, 1, 3), side = pick(rng, 3, 5);
            nn::Network net = toy_convnet(c, side, f, classes);
            GradCase g{"dreg(conv2d)", std::move(net), random_tensor({batch, c, side, side}, rng),
                       random_labels(batch, classes, rng)};
            g.lambda = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
            return g;
        }
    }
}

}  // namespace

SuiteResult verify_gradients(const VerifyOptions& opts) {
    SuiteResult res{"gradient-check", true, 0, 0.0, "1e-5 rel or 1e-7 abs", {}};
    std::mt19937_64 rng(opts.seed);
    double worst_ratio = 0.0;
    std::string worst_kind;
    for (std::size_t i = 0; i < opts.gradient_configs; ++i) {
        GradCase gc = make_grad_case(i, rng);
        gc.net.initialize(rng());
        jitter(gc.net, rng, 0.1);
        if (gc.kind.rfind("dreg", 0) == 0) {
            dreg::attach(gc.net, gc.net.eligible_positions().front(), 0.5, rng());
        }
        auto loss_fn = [&](nn::Network& n) {
            return nn::evaluate_loss(n, n.forward(gc.x), gc.labels, gc.lambda).breakdown.total;
        };
        const auto eval = nn::evaluate_loss(gc.net, gc.net.forward(gc.x), gc.labels, gc.lambda);
        gc.net.backward(eval.grad);
        const auto analytic = nn::composite_gradients(gc.net, gc.lambda);
        for (std::size_t p = 0; p < analytic.size(); ++p) {
            const Tensor numeric = nn::finite_diff_grad(gc.net, loss_fn, p, 1e-6);
            for (std::size_t k = 0; k < numeric.size(); ++k) {
                const double a = analytic[p][k], n = numeric[k];
                const double err = std::abs(a - n);
                const double allowed = std::max(1e-7, 1e-5 * std::max(std::abs(a), std::abs(n)));
                res.max_residual = std::max(res.max_residual, err);
                if (err / allowed > worst_ratio) {
                    worst_ratio = err / allowed;
                    worst_kind = gc.kind;
                }
            }
        }
        ++res.cases;
    }
    res.passed = worst_ratio <= 1.0;
    res.detail = "worst error/allowed " + sci(worst_ratio) + (worst_kind.empty() ? "" : " (" + worst_kind + ")");
    return res;
}

SuiteResult verify_lambda_zero(const VerifyOptions& opts) {
    SuiteResult res{"lambda-zero-equivalence", true, 0, 0.0, "W_R == W_L exactly; shared 1e-12", {}};
    const auto ds = data::gen_blobs(3, 24, 6.0, 4, opts.seed);
    nn::Network base({4});
    base.emplace<nn::Dense>(4, 8);
    base.emplace<nn::Relu>();
    base.emplace<nn::Dense>(8, 8);
    base.emplace<nn::Relu>();
    base.emplace<nn::Dense>(8, 3);
    base.initialize(opts.seed);

    const std::size_t split = base.eligible_positions().front();
    nn::Network dual = base;
    {
        const auto& layer = dynamic_cast<const nn::Dense&>(base.layer(split));
        dual.replace(split, std::make_unique<dreg::DRegLayer>(layer, layer.weight().value, layer.weight().value));
    }

    optim::TrainConfig cfg;
    cfg.eta = 0.05;
    cfg.beta = 0.9;
    cfg.lambda = 0.0;
    cfg.batch_size = 8;
    cfg.seed = opts.seed;
    Trainer trainer(std::move(dual), cfg, opts.dreg_grad_fn);

    // Reference: every shared parameter sees 2g in the dual net, the split
    // weight sees g, so the vanilla run uses 2*eta with the split weight at
    // half rate.
    oracle::ReferenceConfig ref;
    ref.eta = 2.0 * cfg.eta;
    ref.beta = cfg.beta;
    ref.batch_size = cfg.batch_size;
    ref.steps = opts.lambda_zero_steps;
    ref.seed = cfg.seed;
    std::size_t split_weight = 0;
    for (std::size_t i = 0; i < split; ++i) split_weight += base.layer(i).parameters().size();
    ref.lr_scale.assign(base.parameters().size(), 1.0);
    ref.lr_scale[split_weight] = 0.5;
    const auto reference = oracle::reference_vanilla_trainer(base, ds, ref);

    bool identical = true;
    std::size_t step = 0;
    for (std::size_t epoch = 0; step < opts.lambda_zero_steps; ++epoch) {
        for (const auto& batch : data::epoch_batches(ds, cfg.batch_size, cfg.seed, epoch)) {
            if (step >= opts.lambda_zero_steps) break;
            trainer.step(batch);
            ++step;
            const auto* layer = dynamic_cast<const dreg::DRegLayer*>(trainer.network().dual_layer());
            if (!(layer->w_r().value == layer->w_l().value)) identical = false;
            std::size_t j = 0;
            for (const auto* p : trainer.network().parameters()) {
                if (p->role == nn::ParamRole::DualL) continue;
                res.max_residual = std::max(res.max_residual, max_abs(sub(p->value, reference[step][j])));
                ++j;
            }
        }
    }
    res.cases = step;
    res.passed = identical && res.max_residual <= 1e-12;
    res.detail = identical ? "weight sets identical on every step" : "weight sets diverged";
    return res;
}

SuiteResult verify_decomposition(const VerifyOptions& opts) {
    SuiteResult res{"decomposition-identity", true, 0, 0.0, "1e-10", {}};
    auto ds = data::gen_blobs(3, 16, 6.0, 16, opts.seed).reshaped({1, 4, 4});
    nn::Network net = toy_convnet(1, 4, 3, 3);
    net.initialize(opts.seed);
    dreg::attach_at(net, "Block-R1", 0.05, opts.seed + 1);

    optim::TrainConfig cfg;
    cfg.eta = 0.05;
    cfg.beta = 0.9;
    cfg.lambda = 0.1;
    cfg.batch_size = 8;
    cfg.seed = opts.seed;
    Trainer trainer(std::move(net), cfg, opts.dreg_grad_fn);
    std::size_t step = 0;
    for (std::size_t epoch = 0; step < opts.decomposition_steps; ++epoch) {
        for (const auto& batch : data::epoch_batches(ds, cfg.batch_size, cfg.seed, epoch)) {
            if (step >= opts.decomposition_steps) break;
            const auto out = trainer.step(batch);
            const auto* layer = dynamic_cast<const dreg::DRegLayer*>(trainer.network().dual_layer());
            const double r = dreg::decomposition_residual(*out.update.dual, layer->w_r().value, layer->w_l().value);
            res.max_residual = std::max(res.max_residual, r);
            ++step;
        }
    }
    res.cases = step;
    res.passed = res.max_residual <= 1e-10;
    return res;
}

SuiteResult verify_growth_law(const VerifyOptions& opts) {
    SuiteResult res{"growth-law", true, 0, 0.0, "1e-9 rel", "max relative deviation"};
    const std::pair<double, double> settings[] = {{0.1, 0.1}, {0.01, 0.1}, {1.0, 0.01}};
    std::mt19937_64 rng(opts.seed);
    for (const auto& [lambda, eta] : settings) {
        nn::Network net({6});
        net.emplace<nn::Dense>(6, 5);
        net.emplace<nn::Relu>();
        net.emplace<nn::Dense>(5, 5);
        net.emplace<nn::Dense>(5, 2);
        net.initialize(rng());
        dreg::attach_at(net, "Block-R1", 0.1, rng());
        optim::TrainConfig cfg;
        cfg.eta = eta;
        cfg.beta = 0.9;
        cfg.lambda = lambda;
        auto state = optim::MomentumState::zeros_for(net, cfg.beta);
        std::vector<Tensor> zero;
        for (const auto* p : net.parameters()) zero.push_back(Tensor::zeros_like(p->value));

        const auto* layer = dynamic_cast<const dreg::DRegLayer*>(net.dual_layer());
        const double d0 = frobenius(sub(layer->w_r().value, layer->w_l().value));
        for (std::size_t t = 1; t <= opts.growth_steps; ++t) {
            optim::apply_update(net, zero, cfg, state, opts.dreg_grad_fn);
            const double dt = frobenius(sub(layer->w_r().value, layer->w_l().value));
            const double expected = std::pow(1.0 + 4.0 * lambda * eta, static_cast<double>(t)) * d0;
            res.max_residual = std::max(res.max_residual, std::abs(dt - expected) / expected);
            ++res.cases;
        }
    }
    res.passed = res.max_residual <= 1e-9;
    return res;
}

SuiteResult verify_cross_path(const VerifyOptions& opts) {
    SuiteResult res{"cross-path-nullity", true, 0, 0.0, "exactly 0", {}};
    auto ds = data::gen_blobs(3, 16, 6.0, 16, opts.seed).reshaped({1, 4, 4});
    nn::Network net = toy_convnet(1, 4, 3, 3);
    net.initialize(opts.seed);
    dreg::attach_at(net, "Block-R1", 0.05, opts.seed + 1);
    optim::TrainConfig cfg;
    cfg.eta = 0.05;
    cfg.beta = 0.9;
    cfg.lambda = 0.1;
    cfg.batch_size = 8;
    cfg.seed = opts.seed;
    Trainer trainer(std::move(net), cfg, opts.dreg_grad_fn);

    bool perturbation_clean = true;
    std::size_t step = 0;
    for (std::size_t epoch = 0; step < opts.cross_path_steps; ++epoch) {
        for (const auto& batch : data::epoch_batches(ds, cfg.batch_size, cfg.seed, epoch)) {
            if (step >= opts.cross_path_steps) break;
            auto& n = trainer.network();
            const auto cross = dreg::measure_cross_path_gradients(n, batch.inputs, batch.labels);
            res.max_residual = std::max({res.max_residual, max_abs(cross.l_wrt_r), max_abs(cross.r_wrt_l)});

            // Moving one weight set must leave the other path's loss unchanged
            // to the last bit.
            auto* layer = dynamic_cast<dreg::DRegLayer*>(n.dual_layer());
            for (const auto path : {nn::Path::R, nn::Path::L}) {
                const auto other = path == nn::Path::R ? nn::Path::L : nn::Path::R;
                const double before = nn::cross_entropy(n.forward_path(batch.inputs, other), batch.labels);
                const Tensor saved = layer->weights(path).value;
                layer->weights(path).value = add_scalar(saved, 1e-3);
                const double after = nn::cross_entropy(n.forward_path(batch.inputs, other), batch.labels);
                layer->weights(path).value = saved;
                if (before != after) perturbation_clean = false;
            }
            trainer.step(batch);
            ++step;
        }
    }
    res.cases = step;
    res.passed = res.max_residual == 0.0 && perturbation_clean;
    res.detail = perturbation_clean ? "other-path loss unchanged under perturbation"
                                    : "other-path loss moved under perturbation";
    return res;
}

SuiteResult verify_conv_oracle(const VerifyOptions& opts) {
    SuiteResult res{"conv-oracle", true, 0, 0.0, "1e-12", {}};
    std::mt19937_64 rng(opts.seed);
    while (res.cases < opts.conv_cases) {
        const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3), f = pick(rng, 1, 3);
        const std::size_t h = pick(rng, 1, 8), w = pick(rng, 1, 8);
        const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
        const std::size_t kh = pick(rng, 1, 3), kw = pick(rng, 1, 3);
        if (h + 2 * pad < kh || w + 2 * pad < kw) continue;
        if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0) continue;
        const Tensor x = random_tensor({n, c, h, w}, rng);
        const Tensor k = random_tensor({f, c, kh, kw}, rng);
        const Tensor fast = conv2d(x, k, stride, pad);
        const Tensor slow = oracle::conv2d_bruteforce(x, k, stride, pad);
        res.max_residual = std::max(res.max_residual, max_abs(sub(fast, slow)));
        ++res.cases;
    }
    res.passed = res.max_residual <= 1e-12;
    return res;
}

SuiteResult verify_shards(const VerifyOptions& opts) {
    SuiteResult res{"shard-equivalence", true, 0, 0.0, "1e-12", {}};
    std::mt19937_64 rng(opts.seed);
    for (std::size_t b = 0; b < opts.shard_batches; ++b) {
        nn::Network net = b % 2 == 0 ? toy_convnet(1, 4, 2, 3) : nn::Network({16});
        if (b % 2 == 1) {
            net.emplace<nn::Flatten>();
            net.emplace<nn::Dense>(16, 6);
            net.emplace<nn::Relu>();
            net.emplace<nn::Dense>(6, 6);
            net.emplace<nn::Dense>(6, 3);
        }
        net.initialize(rng());
        if (b % 4 < 2) dreg::attach_at(net, "Block-R1", 0.1, rng());
        const Shape in = net.input_shape();
        Shape batch_shape{16};
        batch_shape.insert(batch_shape.end(), in.begin(), in.end());
        const data::Batch batch{random_tensor(batch_shape, rng), random_labels(16, 3, rng)};
        const auto one = data::shard_gradients(net, batch, 1, 0.1);
        for (std::size_t k : {2, 4, 8}) {
            for (bool parallel : {false, true}) {
                const auto many = data::shard_gradients(net, batch, k, 0.1, parallel);
                for (std::size_t i = 0; i < one.grads.size(); ++i) {
                    res.max_residual = std::max(res.max_residual, max_abs(sub(one.grads[i], many.grads[i])));
                }
                ++res.cases;
            }
        }
    }
    res.passed = res.max_residual <= 1e-12;
    return res;
}

std::vector<SuiteResult> run_verify(const VerifyOptions& opts) {
    return {verify_gradients(opts),   verify_lambda_zero(opts), verify_decomposition(opts),
            verify_growth_law(opts),  verify_cross_path(opts),  verify_conv_oracle(opts),
            verify_shards(opts)};
}

bool print_report(std::ostream& out, const std::vector<SuiteResult>& results) {
    bool all = true;
    for (const auto& r : results) {
        all = all && r.passed;
        out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(26) << r.name << " cases=" << std::setw(5)
            << r.cases << " max_residual=" << sci(r.max_residual) << " tol=" << r.tolerance;
        if (!r.detail.empty()) out << "  " << r.detail;
        out << "\n";
    }
    out << (all ? "verify: all suites passed" : "verify: FAILED") << "\n";
    return all;
}

}  // namespace dregnet::harness
