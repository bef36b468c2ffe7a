#include <benchmark/benchmark.h>

#include <random>

#include "dregnet/harness/runner.hpp"
#include "dregnet/harness/model.hpp"

using namespace dregnet;
using namespace dregnet::harness;

namespace {

Tensor random_tensor(const Shape& s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = n(rng);
    return Tensor(s, std::move(v));
}

RunSpec smoke_spec(bool dreg) {
    return resolve(Config::parse(std::string("model.arch = convnet\nmodel.width = 8\nmodel.depth = 2\n") +
                                 "dreg.enabled = " + (dreg ? "true" : "false") +
                                 "\ndata.classes = 4\ndata.n_per_class = 64\ndata.dim = 16\n"));
}

// One optimizer step of the smoke network; arg 0 is vanilla, 1 is DReg at
// Block-R1.
void BM_TrainStep(benchmark::State& state) {
    const RunSpec spec = smoke_spec(state.range(0) != 0);
    const SplitData data = prepare_data(spec);
    Trainer trainer(build_run_network(spec, data.train.sample_shape(), data.train.num_classes), train_config(spec));
    const auto batches = data::epoch_batches(data.train, spec.data.batch_size, 1, 0);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(trainer.step(batches[i++ % batches.size()]));
    }
    state.SetLabel(state.range(0) ? "dreg" : "vanilla");
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

// conv2d forward over N×C×S×S with 3x3 kernels and C output channels.
void BM_Conv2d(benchmark::State& state) {
    const auto side = static_cast<std::size_t>(state.range(0));
    const auto ch = static_cast<std::size_t>(state.range(1));
    const Tensor x = random_tensor({8, ch, side, side}, 1);
    const Tensor k = random_tensor({ch, ch, 3, 3}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, 1, 1));
    state.SetItemsProcessed(state.iterations() * 8 * static_cast<std::int64_t>(side * side * ch * ch * 9));
}
BENCHMARK(BM_Conv2d)->Args({8, 4})->Args({16, 8})->Args({32, 8})->Unit(benchmark::kMicrosecond);

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = random_tensor({n, n}, 3), b = random_tensor({n, n}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
