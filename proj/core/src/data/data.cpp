#include "dregnet/data/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace dregnet::data {

// ---------------------------------------------------------------- Dataset

void Dataset::validate() const {
    if (labels.empty()) throw UsageError("dataset is empty");
    if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
        throw UsageError("dataset inputs " + shape_to_string(inputs.shape()) + " do not match " +
                         std::to_string(labels.size()) + " labels");
    }
    for (int y : labels) {
        if (y < 0 || y >= num_classes) {
            throw UsageError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    const Shape sample = sample_shape();
    const std::size_t stride = shape_numel(sample);
    Shape shape{indices.size()};
    shape.insert(shape.end(), sample.begin(), sample.end());
    Dataset out{Tensor(shape), {}, num_classes};
    out.labels.reserve(indices.size());
    auto src = inputs.data();
    auto dst = out.inputs.data();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        if (i >= size()) throw std::out_of_range("subset index out of range");
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * stride), stride,
                    dst.begin() + static_cast<std::ptrdiff_t>(k * stride));
        out.labels.push_back(labels[i]);
    }
    return out;
}

Dataset Dataset::reshaped(const Shape& sample_shape) const {
    Shape shape{size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    return {inputs.reshaped(shape), labels, num_classes};
}

// ---------------------------------------------------------------- generators

std::pair<double, double> spiral_point(int cls, double t) {
    const double theta = 3.0 * std::numbers::pi * t + (cls == 0 ? 0.0 : std::numbers::pi);
    return {t * std::cos(theta), t * std::sin(theta)};
}

Dataset gen_two_spirals(std::size_t n_per_class, double noise_std, std::uint64_t seed) {
    if (n_per_class == 0) throw std::invalid_argument("gen_two_spirals: n_per_class must be >= 1");
    if (noise_std < 0.0) throw std::invalid_argument("gen_two_spirals: noise_std must be >= 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset ds{Tensor({2 * n_per_class, 2}), {}, 2};
    ds.labels.reserve(2 * n_per_class);
    std::size_t row = 0;
    for (int cls = 0; cls < 2; ++cls) {
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            const double t = (static_cast<double>(i) + 1.0) / static_cast<double>(n_per_class);
            auto [x, y] = spiral_point(cls, t);
            if (noise_std > 0.0) {
                x += noise_std * noise(rng);
                y += noise_std * noise(rng);
            }
            ds.inputs[row * 2] = x;
            ds.inputs[row * 2 + 1] = y;
            ds.labels.push_back(cls);
        }
    }
    return ds;
}

std::vector<double> blob_center(int cls, std::size_t dim, double separation) {
    // Class k sits on axis k mod dim, alternating sign per wrap, with a radius
    // that grows per wrap so no two centres coincide.
    const auto k = static_cast<std::size_t>(cls);
    const std::size_t wrap = k / dim;
    const double sign = wrap % 2 == 0 ? 1.0 : -1.0;
    const double radius = separation * (1.0 + static_cast<double>(wrap / 2));
    std::vector<double> c(dim, 0.0);
    c[k % dim] = sign * radius;
    return c;
}

Dataset gen_blobs(int classes, std::size_t n_per_class, double separation, std::size_t dim, std::uint64_t seed,
                  double noise_std) {
    if (classes < 2) throw std::invalid_argument("gen_blobs: classes must be >= 2");
    if (n_per_class == 0 || dim == 0) throw std::invalid_argument("gen_blobs: n_per_class and dim must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_std);
    const std::size_t total = static_cast<std::size_t>(classes) * n_per_class;
    Dataset ds{Tensor({total, dim}), {}, classes};
    ds.labels.reserve(total);
    std::size_t row = 0;
    for (int cls = 0; cls < classes; ++cls) {
        const auto center = blob_center(cls, dim, separation);
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            for (std::size_t d = 0; d < dim; ++d) ds.inputs[row * dim + d] = center[d] + noise(rng);
            ds.labels.push_back(cls);
        }
    }
    return ds;
}

// ---------------------------------------------------------------- IDX

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw UsageError(path.string() + ": truncated IDX header");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
}

std::ifstream open_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path.string());
    return in;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    auto img = open_binary(images);
    auto lab = open_binary(labels);
    const std::uint32_t img_magic = read_be32(img, images);
    if (img_magic != kIdxImageMagic) throw UsageError(images.string() + ": bad IDX image magic");
    const std::uint32_t lab_magic = read_be32(lab, labels);
    if (lab_magic != kIdxLabelMagic) throw UsageError(labels.string() + ": bad IDX label magic");

    const std::uint32_t n = read_be32(img, images);
    const std::uint32_t rows = read_be32(img, images);
    const std::uint32_t cols = read_be32(img, images);
    const std::uint32_t n_labels = read_be32(lab, labels);
    if (n != n_labels) {
        throw UsageError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                         " labels");
    }
    if (n == 0 || rows == 0 || cols == 0) throw UsageError(images.string() + ": empty IDX image file");

    const std::size_t pixels = std::size_t{rows} * cols;
    std::vector<unsigned char> buf(pixels * n);
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
        throw UsageError(images.string() + ": truncated IDX image payload");
    }
    std::vector<unsigned char> lbuf(n);
    if (!lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size()))) {
        throw UsageError(labels.string() + ": truncated IDX label payload");
    }

    Dataset ds{Tensor({n, 1, rows, cols}), {}, 0};
    for (std::size_t i = 0; i < buf.size(); ++i) ds.inputs[i] = static_cast<double>(buf[i]) / 255.0;
    ds.labels.assign(lbuf.begin(), lbuf.end());
    ds.num_classes = std::max(2, *std::max_element(ds.labels.begin(), ds.labels.end()) + 1);
    return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels) {
    ds.validate();
    const Shape s = ds.sample_shape();
    const std::size_t rows = s.size() >= 2 ? s[s.size() - 2] : 1;
    const std::size_t cols = s.back();
    if (rows * cols != shape_numel(s)) throw UsageError("write_idx: samples must be single-channel images");
    std::ofstream img(images, std::ios::binary);
    std::ofstream lab(labels, std::ios::binary);
    if (!img || !lab) throw UsageError("write_idx: cannot open output files");
    write_be32(img, kIdxImageMagic);
    write_be32(img, static_cast<std::uint32_t>(ds.size()));
    write_be32(img, static_cast<std::uint32_t>(rows));
    write_be32(img, static_cast<std::uint32_t>(cols));
    for (double v : ds.inputs.data()) {
        img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
    write_be32(lab, kIdxLabelMagic);
    write_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int y : ds.labels) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
}

// ---------------------------------------------------------------- batching

std::pair<Dataset, Dataset> split(const Dataset& ds, double val_fraction, std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw std::invalid_argument("val_fraction must lie in [0, 1)");
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(ds.size())));
    if (val_fraction > 0.0) n_val = std::clamp<std::size_t>(n_val, 1, ds.size() - 1);
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {ds.subset(train), n_val ? ds.subset(val) : Dataset{}};
}

std::uint64_t epoch_seed(std::uint64_t run_seed, std::uint64_t epoch) {
    // splitmix64 over a combination of both inputs.
    std::uint64_t z = run_seed * 0x9E3779B97F4A7C15ULL + epoch + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t run_seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(epoch_seed(run_seed, epoch));
    // Explicit Fisher-Yates: std::shuffle's draw pattern is library-specific.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

std::vector<Batch> epoch_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t run_seed,
                                 std::uint64_t epoch) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    const std::size_t bs = std::min(batch_size, ds.size());
    const auto order = epoch_permutation(ds.size(), run_seed, epoch);
    std::vector<Batch> out;
    for (std::size_t start = 0; start + bs <= order.size(); start += bs) {
        std::span<const std::size_t> idx(order.data() + start, bs);
        Dataset part = ds.subset(idx);
        out.push_back({std::move(part.inputs), std::move(part.labels)});
    }
    return out;
}

// ---------------------------------------------------------------- sharding

namespace {

struct ShardOutput {
    std::vector<Tensor> grads;
    nn::LossBreakdown loss;
    double acc_r = 0.0;
    double acc_l = 0.0;
};

ShardOutput run_shard(nn::Network& net, const Tensor& inputs, std::span<const int> labels, double lambda) {
    const nn::ForwardResult out = net.forward(inputs);
    nn::LossEvaluation ev = nn::evaluate_loss(net, out, labels, lambda);
    net.backward(ev.grad);
    ShardOutput s;
    for (const auto* p : net.parameters()) s.grads.push_back(p->grad);
    s.loss = ev.breakdown;
    s.acc_r = nn::accuracy(out.r, labels);
    s.acc_l = out.dual() ? nn::accuracy(*out.l, labels) : s.acc_r;
    return s;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
    Shape shape = t.shape();
    const std::size_t stride = t.size() / shape[0];
    shape[0] = count;
    std::vector<double> data(t.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                             t.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace

ShardResult shard_gradients(nn::Network& net, const Batch& batch, std::size_t devices, double lambda,
                            bool parallel) {
    if (devices == 0) throw std::invalid_argument("shard_gradients: devices must be positive");
    if (batch.size() == 0 || batch.size() % devices != 0) {
        throw std::invalid_argument("shard_gradients: batch of " + std::to_string(batch.size()) +
                                    " is not divisible into " + std::to_string(devices) + " shards");
    }
    const std::size_t per = batch.size() / devices;
    std::vector<ShardOutput> shards(devices);
    auto labels_of = [&](std::size_t k) {
        return std::span<const int>(batch.labels.data() + k * per, per);
    };
    if (devices == 1) {
        shards[0] = run_shard(net, batch.inputs, batch.labels, lambda);
    } else if (parallel) {
        std::vector<std::future<ShardOutput>> jobs;
        for (std::size_t k = 0; k < devices; ++k) {
            jobs.push_back(std::async(std::launch::async, [&, k] {
                nn::Network replica = net;
                return run_shard(replica, slice_rows(batch.inputs, k * per, per), labels_of(k), lambda);
            }));
        }
        for (std::size_t k = 0; k < devices; ++k) shards[k] = jobs[k].get();
    } else {
        for (std::size_t k = 0; k < devices; ++k) {
            shards[k] = run_shard(net, slice_rows(batch.inputs, k * per, per), labels_of(k), lambda);
        }
    }

    ShardResult res;
    const double inv = 1.0 / static_cast<double>(devices);
    res.grads = std::move(shards[0].grads);
    auto& loss = res.loss;
    loss = shards[0].loss;
    res.accuracy_r = shards[0].acc_r;
    res.accuracy_l = shards[0].acc_l;
    for (std::size_t k = 1; k < devices; ++k) {
        for (std::size_t i = 0; i < res.grads.size(); ++i) res.grads[i] = add(res.grads[i], shards[k].grads[i]);
        loss.l_r += shards[k].loss.l_r;
        if (loss.l_l) *loss.l_l += *shards[k].loss.l_l;
        loss.total += shards[k].loss.total;
        res.accuracy_r += shards[k].acc_r;
        res.accuracy_l += shards[k].acc_l;
    }
    if (devices > 1) {
        for (auto& g : res.grads) g = scale(g, inv);
        loss.l_r *= inv;
        if (loss.l_l) *loss.l_l *= inv;
        loss.total *= inv;
        res.accuracy_r *= inv;
        res.accuracy_l *= inv;
    }
    return res;
}

}  // namespace dregnet::data
