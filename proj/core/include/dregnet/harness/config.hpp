#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dregnet::harness {

/// Flat `section.key = value` text. '#' starts a comment; blank lines are
/// ignored. Unknown keys are rejected by resolve().
class Config {
public:
    static Config parse(const std::string& text);
    static Config load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    std::optional<std::string> get(const std::string& key) const;
    const std::map<std::string, std::string>& values() const noexcept { return values_; }

private:
    std::map<std::string, std::string> values_;
};

struct ModelSpec {
    std::string arch = "mlp";  ///< mlp | convnet
    std::size_t width = 16;
    std::size_t depth = 2;
    bool residual = false;
};

struct DRegSpec {
    bool enabled = true;
    double lambda = 0.1;
    std::string position = "Block-R1";
    double epsilon_init = 1e-2;
    double max_norm = 0.0;
    bool through_momentum = false;
};

struct OptimSpec {
    double eta = 0.05;
    double beta = 0.9;
};

struct DataSpec {
    std::string source = "blobs";  ///< blobs | spirals | idx
    std::string path;              ///< idx images file
    std::string labels_path;       ///< idx labels file
    std::uint64_t seed = 1;
    std::size_t batch_size = 32;
    std::size_t devices = 1;
    bool parallel_shards = false;
    int classes = 4;
    std::size_t n_per_class = 64;
    std::size_t dim = 16;
    double separation = 10.0;
    double noise = 1.0;
    double val_fraction = 0.2;
};

struct RunOptions {
    std::size_t epochs = 20;
    std::string out_dir = "runs/default";
    std::uint64_t seed = 1;
    bool record_wall_time = false;
};

struct SweepSpec {
    std::vector<double> lambda{0.001, 0.01, 0.1, 1.0, 0.0};
    std::vector<std::string> position;  ///< empty: every eligible layer
    std::vector<double> momentum{0.0, 0.5, 0.9};
    std::vector<std::size_t> batch_size;  ///< empty: M, M/2, M/4, M/8 for M training samples
    bool with_baseline = false;
};

/// Every setting of a run with defaults applied.
struct RunSpec {
    ModelSpec model;
    DRegSpec dreg;
    OptimSpec optim;
    DataSpec data;
    RunOptions run;
    SweepSpec sweep;
};

/// Applies defaults and validates. Throws UsageError naming the offending key.
RunSpec resolve(const Config& config);

/// Full resolved configuration in Config text form; resolve(parse(x)) is the
/// same RunSpec.
std::string to_config_text(const RunSpec& spec);

/// Keys accepted by resolve().
const std::vector<std::string>& known_keys();

}  // namespace dregnet::harness
