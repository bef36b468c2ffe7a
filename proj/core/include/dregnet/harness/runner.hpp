#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dregnet/data/data.hpp"
#include "dregnet/dreg/dreg.hpp"
#include "dregnet/harness/config.hpp"
#include "dregnet/optim/optim.hpp"

namespace dregnet::harness {

/// One row of the metrics CSV. Columns that do not apply to a run (the L
/// path and the distance term of a vanilla run, wall time when not recorded)
/// are left empty.
struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss_total = 0.0;
    double l_r = 0.0;
    std::optional<double> l_l;
    std::optional<double> dreg_raw;
    double val_acc_r = 0.0;
    std::optional<double> val_acc_l;
    std::optional<double> wall_time_ms;
};

struct RunMetrics {
    std::vector<EpochRecord> records;

    /// Throws std::logic_error if epochs are not strictly increasing or a
    /// distance value is negative.
    void validate() const;
    /// Best of max(val_acc_r, val_acc_l) over all epochs.
    double best_val_acc() const;
    /// First epoch whose validation accuracy reaches `fraction` of the best.
    std::optional<std::size_t> epochs_to_threshold(double fraction = 0.95) const;
};

inline const std::vector<std::string> kMetricsColumns = {"epoch",     "train_loss_total", "l_r",
                                                         "l_l",       "dreg_raw",         "val_acc_r",
                                                         "val_acc_l", "wall_time_ms"};

/// RFC 4180 field quoting: quoted only when the field holds a comma, quote,
/// CR or LF; embedded quotes are doubled.
std::string csv_field(const std::string& s);
/// Shortest round-trip decimal form of a double.
std::string format_number(double v);

void write_metrics_csv(const RunMetrics& metrics, std::ostream& out);
void write_metrics_csv(const RunMetrics& metrics, const std::filesystem::path& path);

struct SplitData {
    data::Dataset train;
    data::Dataset val;
};

/// Generates or loads the dataset described by `spec.data`, reshaping flat
/// samples of perfect-square length d to 1×√d×√d for the convnet
/// architecture, then splits off the validation part.
SplitData prepare_data(const RunSpec& spec);

optim::TrainConfig train_config(const RunSpec& spec);

/// Base network, with the DReg layer attached when spec.dreg.enabled.
nn::Network build_run_network(const RunSpec& spec, const Shape& sample_shape, int classes);

struct StepOutcome {
    nn::LossBreakdown loss;
    double accuracy_r = 0.0;
    double accuracy_l = 0.0;
    optim::UpdateRecord update;
};

/// Owns a network and its momentum state and applies one minibatch step at a
/// time: shard gradients, then the optimizer update.
class Trainer {
public:
    Trainer(nn::Network net, optim::TrainConfig config, dreg::DRegGradFn grad_fn = dreg::dreg_grad,
            bool parallel_shards = false);

    StepOutcome step(const data::Batch& batch);

    nn::Network& network() noexcept { return net_; }
    const nn::Network& network() const noexcept { return net_; }
    const optim::TrainConfig& config() const noexcept { return config_; }
    optim::MomentumState& momentum() noexcept { return state_; }

private:
    nn::Network net_;
    optim::TrainConfig config_;
    optim::MomentumState state_;
    dreg::DRegGradFn grad_fn_;
    bool parallel_;
};

struct Accuracy {
    double r = 0.0;
    std::optional<double> l;
    double best() const { return l ? std::max(r, *l) : r; }
};

/// Accuracy of each path over a whole dataset, evaluated in chunks.
Accuracy evaluate_accuracy(nn::Network& net, const data::Dataset& ds);

struct TrainHooks {
    dreg::DRegGradFn grad_fn = dreg::dreg_grad;
    std::function<void(const Trainer&, const StepOutcome&)> on_step;
    /// Called after each epoch's metrics are computed; returning true stops
    /// the run early.
    std::function<bool(const EpochRecord&, const Accuracy& train_acc)> on_epoch;
};

struct RunResult {
    RunMetrics metrics;
    /// Trained network as it stands at the end (dual when DReg is enabled).
    nn::Network trained;
    /// Single-path network chosen on the validation data (DReg runs).
    std::optional<dreg::PathSelection> selection;
    std::size_t base_parameter_count = 0;
    /// Per-epoch accuracy on the training split.
    std::vector<Accuracy> train_accuracy;
    /// Wall time of every optimizer step in milliseconds.
    std::vector<double> step_ms;
    /// Epoch (1-based) in which a non-finite value stopped the run.
    std::optional<std::size_t> diverged_at;

    /// Network to save and evaluate: the selected path for DReg runs.
    const nn::Network& deployable() const { return selection ? selection->network : trained; }
};

RunResult run_training(const RunSpec& spec, const TrainHooks& hooks = {});

/// Writes metrics.csv, config.resolved, model.bin and timing.csv into `dir`.
void write_run_outputs(const RunSpec& spec, const RunResult& result, const std::filesystem::path& dir);

}  // namespace dregnet::harness
