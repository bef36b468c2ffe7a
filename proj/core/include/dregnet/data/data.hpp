#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "dregnet/nn/network.hpp"

namespace dregnet::data {

/// M labelled samples; inputs are M×(sample shape).
struct Dataset {
    Tensor inputs;
    std::vector<int> labels;
    int num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }
    /// Throws UsageError if labels, inputs and num_classes disagree.
    void validate() const;
    /// Samples at `indices`, in that order.
    Dataset subset(std::span<const std::size_t> indices) const;
    /// Same data with each sample reshaped to `sample_shape`.
    Dataset reshaped(const Shape& sample_shape) const;
};

struct Batch {
    Tensor inputs;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

/// Point on spiral `cls` (0 or 1) at parameter t in (0, 1].
std::pair<double, double> spiral_point(int cls, double t);

/// Two interleaved 2-D spirals, n_per_class points each, plus isotropic
/// Gaussian noise. Deterministic per seed.
Dataset gen_two_spirals(std::size_t n_per_class, double noise_std, std::uint64_t seed);

/// Centre of blob `cls`; centres are at least `separation` apart.
std::vector<double> blob_center(int cls, std::size_t dim, double separation);

/// Isotropic Gaussian clusters (std `noise_std`) around blob_center().
Dataset gen_blobs(int classes, std::size_t n_per_class, double separation, std::size_t dim, std::uint64_t seed,
                  double noise_std = 1.0);

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label pair. Pixels are scaled to [0, 1]; inputs are
/// N×1×rows×cols.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
/// Writes 8-bit IDX files (pixels clamped from [0, 1] to 0..255).
void write_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels);

/// Deterministic split into (train, validation); the validation part holds
/// round(fraction * M) samples, at least one when fraction > 0.
std::pair<Dataset, Dataset> split(const Dataset& ds, double val_fraction, std::uint64_t seed);

/// Seed for the shuffle of `epoch` derived from the run seed.
std::uint64_t epoch_seed(std::uint64_t run_seed, std::uint64_t epoch);
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t run_seed, std::uint64_t epoch);

/// Batches of exactly `batch_size` samples in shuffled order; the tail that
/// does not fill a batch is dropped. batch_size larger than M means one
/// full-data batch.
std::vector<Batch> epoch_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t run_seed,
                                 std::uint64_t epoch);

struct ShardResult {
    /// Mean data-loss gradient, aligned with net.parameters().
    std::vector<Tensor> grads;
    /// Loss averaged over shards.
    nn::LossBreakdown loss;
    double accuracy_r = 0.0;
    double accuracy_l = 0.0;
};

/// Splits the batch into `devices` equal shards, computes each shard's mean
/// gradient independently and averages them. With `parallel`, shards run on
/// network clones in separate threads; the reduction order is fixed either
/// way.
ShardResult shard_gradients(nn::Network& net, const Batch& batch, std::size_t devices, double lambda,
                            bool parallel = false);

}  // namespace dregnet::data
