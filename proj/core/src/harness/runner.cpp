#include "dregnet/harness/runner.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "dregnet/errors.hpp"
#include "dregnet/harness/model.hpp"

namespace dregnet::harness {

// ------------------------------------------------------------------ metrics

void RunMetrics::validate() const {
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (i > 0 && records[i].epoch <= records[i - 1].epoch) {
            throw std::logic_error("RunMetrics: epochs must be strictly increasing");
        }
        if (records[i].dreg_raw && *records[i].dreg_raw < 0.0) {
            throw std::logic_error("RunMetrics: negative dreg_raw");
        }
    }
}

double RunMetrics::best_val_acc() const {
    double best = 0.0;
    for (const auto& r : records) best = std::max({best, r.val_acc_r, r.val_acc_l.value_or(0.0)});
    return best;
}

std::optional<std::size_t> RunMetrics::epochs_to_threshold(double fraction) const {
    if (records.empty()) return std::nullopt;
    const double target = fraction * best_val_acc();
    for (const auto& r : records) {
        if (std::max(r.val_acc_r, r.val_acc_l.value_or(0.0)) >= target) return r.epoch;
    }
    return std::nullopt;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string format_number(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw std::runtime_error("format_number failed");
    return std::string(buf, end);
}

void write_metrics_csv(const RunMetrics& metrics, std::ostream& out) {
    metrics.validate();
    for (std::size_t i = 0; i < kMetricsColumns.size(); ++i) out << (i ? "," : "") << csv_field(kMetricsColumns[i]);
    out << "\r\n";
    auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
    for (const auto& r : metrics.records) {
        out << r.epoch << ',' << format_number(r.train_loss_total) << ',' << format_number(r.l_r) << ','
            << opt(r.l_l) << ',' << opt(r.dreg_raw) << ',' << format_number(r.val_acc_r) << ',' << opt(r.val_acc_l)
            << ',' << opt(r.wall_time_ms) << "\r\n";
    }
}

void write_metrics_csv(const RunMetrics& metrics, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write " + path.string());
    write_metrics_csv(metrics, out);
}

// ------------------------------------------------------------------ setup

SplitData prepare_data(const RunSpec& spec) {
    const auto& d = spec.data;
    data::Dataset ds;
    if (d.source == "blobs") {
        ds = data::gen_blobs(d.classes, d.n_per_class, d.separation, d.dim, d.seed, d.noise);
    } else if (d.source == "spirals") {
        if (d.classes != 2) throw UsageError("data.source = spirals has exactly 2 classes");
        ds = data::gen_two_spirals(d.n_per_class, d.noise, d.seed);
    } else if (d.source == "idx") {
        if (!std::filesystem::exists(d.path)) throw UsageError("dataset not found: " + d.path);
        if (!std::filesystem::exists(d.labels_path)) throw UsageError("labels not found: " + d.labels_path);
        ds = data::load_idx(d.path, d.labels_path);
    } else {
        throw UsageError("unknown data.source '" + d.source + "'");
    }
    if (spec.model.arch == "convnet" && ds.sample_shape().size() == 1) {
        const std::size_t n = ds.sample_shape()[0];
        const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
        if (side * side != n) {
            throw UsageError("convnet needs image samples; flat dimension " + std::to_string(n) +
                             " is not a perfect square");
        }
        ds = ds.reshaped({1, side, side});
    }
    auto [train, val] = data::split(ds, d.val_fraction, d.seed);
    return {std::move(train), std::move(val)};
}

optim::TrainConfig train_config(const RunSpec& spec) {
    optim::TrainConfig c;
    c.eta = spec.optim.eta;
    c.beta = spec.optim.beta;
    c.lambda = spec.dreg.enabled ? spec.dreg.lambda : 0.0;
    c.batch_size = spec.data.batch_size;
    c.devices = spec.data.devices;
    c.epochs = spec.run.epochs;
    c.seed = spec.run.seed;
    c.dreg_through_momentum = spec.dreg.through_momentum;
    c.dreg_max_norm = spec.dreg.max_norm;
    c.validate();
    return c;
}

nn::Network build_run_network(const RunSpec& spec, const Shape& sample_shape, int classes) {
    nn::Network net = build_model(spec.model, sample_shape, classes, spec.run.seed);
    if (spec.dreg.enabled) {
        dreg::attach_at(net, spec.dreg.position, spec.dreg.epsilon_init, data::epoch_seed(spec.run.seed, ~0ULL));
    }
    return net;
}

// ------------------------------------------------------------------ trainer

Trainer::Trainer(nn::Network net, optim::TrainConfig config, dreg::DRegGradFn grad_fn, bool parallel_shards)
    : net_(std::move(net)),
      config_(config),
      state_(optim::MomentumState::zeros_for(net_, config.beta)),
      grad_fn_(std::move(grad_fn)),
      parallel_(parallel_shards) {
    config_.validate();
}

StepOutcome Trainer::step(const data::Batch& batch) {
    auto shard = data::shard_gradients(net_, batch, config_.devices, config_.lambda, parallel_);
    StepOutcome out;
    out.loss = shard.loss;
    out.accuracy_r = shard.accuracy_r;
    out.accuracy_l = shard.accuracy_l;
    out.update = optim::apply_update(net_, shard.grads, config_, state_, grad_fn_);
    return out;
}

Accuracy evaluate_accuracy(nn::Network& net, const data::Dataset& ds) {
    if (ds.size() == 0) throw UsageError("evaluate_accuracy: empty dataset");
    constexpr std::size_t kChunk = 256;
    const std::size_t per = shape_numel(ds.sample_shape());
    double hits_r = 0.0, hits_l = 0.0;
    const bool dual = net.dual_index().has_value();
    for (std::size_t start = 0; start < ds.size(); start += kChunk) {
        const std::size_t n = std::min(kChunk, ds.size() - start);
        Shape shape = ds.inputs.shape();
        shape[0] = n;
        const auto src = ds.inputs.values();
        Tensor x(shape, std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(start * per),
                                            src.begin() + static_cast<std::ptrdiff_t>((start + n) * per)));
        const std::span<const int> labels(ds.labels.data() + start, n);
        const auto out = net.forward(x);
        hits_r += nn::accuracy(out.r, labels) * static_cast<double>(n);
        if (dual) hits_l += nn::accuracy(*out.l, labels) * static_cast<double>(n);
    }
    const double m = static_cast<double>(ds.size());
    Accuracy acc{hits_r / m, std::nullopt};
    if (dual) acc.l = hits_l / m;
    return acc;
}

// ------------------------------------------------------------------ runs

RunResult run_training(const RunSpec& spec, const TrainHooks& hooks) {
    using clock = std::chrono::steady_clock;
    auto [train, val] = prepare_data(spec);
    // Without a held-out part, validation metrics and path selection fall
    // back to the training data.
    const data::Dataset& held_out = val.size() > 0 ? val : train;
    const auto config = train_config(spec);

    const std::size_t base_params =
        build_model(spec.model, train.sample_shape(), train.num_classes, spec.run.seed).parameter_count();
    Trainer trainer(build_run_network(spec, train.sample_shape(), train.num_classes), config, hooks.grad_fn,
                    spec.data.parallel_shards);
    const bool dual = trainer.network().dual_index().has_value();

    RunResult result{RunMetrics{}, trainer.network(), std::nullopt, base_params, {}, {}, std::nullopt};
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto epoch_start = clock::now();
        const auto batches = data::epoch_batches(train, config.batch_size, config.seed, epoch);
        double total = 0.0, l_r = 0.0, l_l = 0.0;
        try {
            for (const auto& batch : batches) {
                const auto t0 = clock::now();
                const auto outcome = trainer.step(batch);
                result.step_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
                total += outcome.loss.total;
                l_r += outcome.loss.l_r;
                l_l += outcome.loss.l_l.value_or(0.0);
                if (hooks.on_step) hooks.on_step(trainer, outcome);
            }
            const double elapsed = std::chrono::duration<double, std::milli>(clock::now() - epoch_start).count();
            const double nb = static_cast<double>(batches.size());

            EpochRecord rec;
            rec.epoch = epoch + 1;
            rec.train_loss_total = total / nb;
            rec.l_r = l_r / nb;
            if (dual) {
                rec.l_l = l_l / nb;
                rec.dreg_raw = trainer.network().dual_layer()->distance_sq();
            }
            const auto va = evaluate_accuracy(trainer.network(), held_out);
            rec.val_acc_r = va.r;
            rec.val_acc_l = va.l;
            if (spec.run.record_wall_time) rec.wall_time_ms = elapsed;
            result.metrics.records.push_back(rec);

            const auto ta = evaluate_accuracy(trainer.network(), train);
            result.train_accuracy.push_back(ta);
            if (hooks.on_epoch && hooks.on_epoch(rec, ta)) break;
        } catch (const NonFiniteError&) {
            // Weights or logits overflowed; keep the epochs recorded so far.
            result.diverged_at = epoch + 1;
            break;
        }
    }
    result.trained = trainer.network();
    if (dual) {
        try {
            result.selection = dreg::select_inference_path(result.trained, held_out.inputs, held_out.labels);
        } catch (const NonFiniteError&) {
            if (!result.diverged_at) throw;
        }
    }
    return result;
}

void write_run_outputs(const RunSpec& spec, const RunResult& result, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_metrics_csv(result.metrics, dir / "metrics.csv");
    {
        std::ofstream side(dir / "config.resolved", std::ios::binary);
        if (!side) throw UsageError("cannot write " + (dir / "config.resolved").string());
        side << to_config_text(spec);
    }
    save_model(result.deployable(), dir / "model.bin");

    std::ofstream timing(dir / "timing.csv", std::ios::binary);
    if (!timing) throw UsageError("cannot write " + (dir / "timing.csv").string());
    timing << "step,step_ms\r\n";
    for (std::size_t i = 0; i < result.step_ms.size(); ++i) {
        timing << (i + 1) << ',' << format_number(result.step_ms[i]) << "\r\n";
    }
}

}  // namespace dregnet::harness
