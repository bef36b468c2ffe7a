#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dregnet/harness/config.hpp"
#include "dregnet/harness/runner.hpp"
#include "dregnet/harness/verify.hpp"

namespace dregnet::harness {

struct SweepPoint {
    std::string label;  ///< e.g. "lambda=0.1"
    std::string dir;    ///< output subdirectory name
    RunSpec spec;
};

/// Expands one axis ("lambda", "position", "momentum" or "batch-size") of
/// `base` into run specs. A lambda of 0 is run without the DReg layer.
/// Throws UsageError for an unknown axis or an empty value list.
std::vector<SweepPoint> sweep_points(const RunSpec& base, const std::string& axis);

struct SweepRow {
    std::string label;
    std::string dir;
    double best_val_acc = 0.0;
    std::optional<std::size_t> epochs_to_threshold;
    double final_train_acc = 0.0;
};

/// Best validation accuracy first, then fewer epochs to threshold; points
/// that never reach it come last among equals. Stable otherwise.
void rank_sweep(std::vector<SweepRow>& rows);

void write_summary_csv(const std::vector<SweepRow>& ranked, std::ostream& out);

/// Each returns the process exit code and reports to `out`.
int cmd_train(const std::filesystem::path& config, std::ostream& out);
int cmd_sweep(const std::filesystem::path& config, const std::string& axis, std::ostream& out);
int cmd_verify(std::ostream& out, const VerifyOptions& opts = {});
/// Loads a model file and reports its accuracy on the dataset described by
/// the data.* keys of `dataset_config` (the held-out split, or all of it when
/// `whole` is set).
int cmd_eval(const std::filesystem::path& model, const std::filesystem::path& dataset_config, bool whole,
             std::ostream& out);

}  // namespace dregnet::harness
