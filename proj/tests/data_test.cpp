#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dregnet/data/data.hpp"
#include "dregnet/errors.hpp"
#include "dregnet/nn/layers.hpp"

using namespace dregnet;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("dregnet_data_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

nn::Network tiny_net(std::uint64_t seed) {
    nn::Network net({2});
    net.emplace<nn::Dense>(2, 5);
    net.emplace<nn::Relu>();
    net.emplace<nn::Dense>(5, 2);
    net.initialize(seed);
    return net;
}

}  // namespace

TEST(Spirals, NoiselessPointsLieOnCurves) {
    const auto ds = data::gen_two_spirals(50, 0.0, 3);
    ASSERT_EQ(ds.size(), 100u);
    EXPECT_EQ(ds.inputs.shape(), (Shape{100, 2}));
    // Every sample must coincide with some point of its class's curve; the
    // generator samples t from a grid, so search that point directly.
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double x = ds.inputs[2 * i], y = ds.inputs[2 * i + 1];
        double best = 1e9;
        for (int k = 1; k <= 20000; ++k) {
            const auto [px, py] = data::spiral_point(ds.labels[i], k / 20000.0);
            best = std::min(best, std::hypot(px - x, py - y));
        }
        EXPECT_LT(best, 1e-3);
    }
}

TEST(Spirals, DeterministicAndBalanced) {
    const auto a = data::gen_two_spirals(40, 0.05, 9);
    const auto b = data::gen_two_spirals(40, 0.05, 9);
    EXPECT_EQ(a.inputs, b.inputs);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(a.inputs, data::gen_two_spirals(40, 0.05, 10).inputs);
    EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 0), 40);
    EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 1), 40);
    EXPECT_THROW(data::gen_two_spirals(0, 0.1, 1), std::invalid_argument);
}

TEST(Blobs, NearestCentroidSeparatesWideBlobs) {
    const auto ds = data::gen_blobs(5, 60, 100.0, 8, 4);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int best = -1;
        double best_d = 1e300;
        for (int c = 0; c < 5; ++c) {
            const auto centre = data::blob_center(c, 8, 100.0);
            double d = 0.0;
            for (std::size_t j = 0; j < 8; ++j) d += std::pow(ds.inputs[i * 8 + j] - centre[j], 2);
            if (d < best_d) best_d = d, best = c;
        }
        correct += best == ds.labels[i];
    }
    EXPECT_EQ(correct, ds.size());
}

TEST(Blobs, TwoClassesInOneDimension) {
    const auto ds = data::gen_blobs(2, 100, 50.0, 1, 2);
    const double c0 = data::blob_center(0, 1, 50.0)[0], c1 = data::blob_center(1, 1, 50.0)[0];
    EXPECT_GE(std::abs(c1 - c0), 50.0);
    const double mid = 0.5 * (c0 + c1);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ((ds.inputs[i] > mid) == (c1 > mid), ds.labels[i] == 1);
    }
}

TEST(Blobs, CentresRespectSeparation) {
    for (std::size_t dim : {1u, 2u, 16u}) {
        for (int a = 0; a < 6; ++a)
            for (int b = a + 1; b < 6; ++b) {
                const auto ca = data::blob_center(a, dim, 7.0), cb = data::blob_center(b, dim, 7.0);
                double d = 0.0;
                for (std::size_t j = 0; j < dim; ++j) d += std::pow(ca[j] - cb[j], 2);
                EXPECT_GE(std::sqrt(d), 7.0 - 1e-12);
            }
    }
}

TEST(Blobs, DeterministicPerSeed) {
    EXPECT_EQ(data::gen_blobs(3, 10, 5.0, 4, 1).inputs, data::gen_blobs(3, 10, 5.0, 4, 1).inputs);
    EXPECT_THROW(data::gen_blobs(1, 10, 5.0, 4, 1), std::invalid_argument);
}

TEST(Idx, RoundTripAndScaling) {
    const auto dir = temp_dir("roundtrip");
    data::Dataset ds;
    ds.inputs = Tensor({3, 1, 2, 2}, {0.0, 1.0, 0.5, 0.25, 1.0, 1.0, 0.0, 0.0, 0.2, 0.4, 0.6, 0.8});
    ds.labels = {2, 0, 1};
    ds.num_classes = 3;
    data::write_idx(ds, dir / "img", dir / "lab");
    const auto back = data::load_idx(dir / "img", dir / "lab");
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.inputs.shape(), ds.inputs.shape());
    EXPECT_LE(max_abs(sub(back.inputs, ds.inputs)), 0.5 / 255.0 + 1e-12);
    EXPECT_EQ(back.inputs[0], 0.0);
    EXPECT_EQ(back.inputs[1], 1.0);
}

TEST(Idx, RejectsBadFiles) {
    const auto dir = temp_dir("bad");
    data::Dataset ds;
    ds.inputs = Tensor({2, 1, 2, 2}, 0.5);
    ds.labels = {0, 1};
    ds.num_classes = 2;
    data::write_idx(ds, dir / "img", dir / "lab");

    // Swapped files: wrong magic.
    EXPECT_THROW(data::load_idx(dir / "lab", dir / "img"), UsageError);
    EXPECT_THROW(data::load_idx(dir / "missing", dir / "lab"), UsageError);

    // Truncated payload.
    std::filesystem::copy_file(dir / "img", dir / "img_short");
    std::filesystem::resize_file(dir / "img_short", std::filesystem::file_size(dir / "img") - 3);
    EXPECT_THROW(data::load_idx(dir / "img_short", dir / "lab"), UsageError);

    // Count mismatch.
    data::Dataset one;
    one.inputs = Tensor({1, 1, 2, 2}, 0.5);
    one.labels = {1};
    one.num_classes = 2;
    data::write_idx(one, dir / "img1", dir / "lab1");
    EXPECT_THROW(data::load_idx(dir / "img", dir / "lab1"), UsageError);
}

TEST(Split, SizesAndDeterminism) {
    const auto ds = data::gen_blobs(2, 50, 5.0, 3, 1);
    const auto [train, val] = data::split(ds, 0.2, 4);
    EXPECT_EQ(train.size(), 80u);
    EXPECT_EQ(val.size(), 20u);
    const auto again = data::split(ds, 0.2, 4);
    EXPECT_EQ(again.first.inputs, train.inputs);
    EXPECT_EQ(data::split(ds, 0.0, 4).second.size(), 0u);
    EXPECT_THROW(data::split(ds, 1.0, 4), std::invalid_argument);
}

TEST(Batches, DeterministicAndDisjoint) {
    const auto ds = data::gen_blobs(2, 25, 5.0, 3, 1);
    const auto a = data::epoch_batches(ds, 8, 7, 3);
    const auto b = data::epoch_batches(ds, 8, 7, 3);
    ASSERT_EQ(a.size(), 6u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].inputs, b[i].inputs);
        EXPECT_EQ(a[i].size(), 8u);
    }
    const auto perm = data::epoch_permutation(50, 7, 3);
    std::vector<std::size_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
    EXPECT_NE(perm, data::epoch_permutation(50, 7, 4));
    EXPECT_EQ(data::epoch_batches(ds, 500, 7, 3).size(), 1u);
    EXPECT_EQ(data::epoch_batches(ds, 500, 7, 3)[0].size(), 50u);
}

TEST(Shards, AverageMatchesSingleDevice) {
    const auto ds = data::gen_blobs(2, 8, 3.0, 2, 5);
    data::Batch batch{ds.inputs, ds.labels};
    nn::Network net = tiny_net(2);
    const auto one = data::shard_gradients(net, batch, 1, 0.0);
    for (std::size_t k : {2u, 4u, 8u}) {
        for (bool parallel : {false, true}) {
            const auto many = data::shard_gradients(net, batch, k, 0.0, parallel);
            ASSERT_EQ(many.grads.size(), one.grads.size());
            for (std::size_t i = 0; i < one.grads.size(); ++i) {
                EXPECT_LE(max_abs(sub(many.grads[i], one.grads[i])), 1e-12) << "k=" << k;
            }
            EXPECT_NEAR(many.loss.l_r, one.loss.l_r, 1e-12);
        }
    }
    const auto seq = data::shard_gradients(net, batch, 4, 0.0, false);
    const auto par = data::shard_gradients(net, batch, 4, 0.0, true);
    for (std::size_t i = 0; i < seq.grads.size(); ++i) EXPECT_EQ(seq.grads[i], par.grads[i]);
}

TEST(Shards, Errors) {
    const auto ds = data::gen_blobs(2, 5, 3.0, 2, 5);
    data::Batch batch{ds.inputs, ds.labels};
    nn::Network net = tiny_net(2);
    EXPECT_THROW(data::shard_gradients(net, batch, 3, 0.0), std::invalid_argument);
    EXPECT_THROW(data::shard_gradients(net, batch, 0, 0.0), std::invalid_argument);
}

TEST(Dataset, ValidateAndReshape) {
    data::Dataset ds;
    ds.inputs = Tensor({2, 4}, 1.0);
    ds.labels = {0, 3};
    ds.num_classes = 2;
    EXPECT_THROW(ds.validate(), UsageError);
    ds.labels = {0, 1};
    EXPECT_NO_THROW(ds.validate());
    EXPECT_EQ(ds.reshaped({1, 2, 2}).inputs.shape(), (Shape{2, 1, 2, 2}));
}
