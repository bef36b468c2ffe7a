#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dregnet/errors.hpp"
#include "dregnet/harness/commands.hpp"
#include "dregnet/harness/model.hpp"
#include "dregnet/nn/layers.hpp"

using namespace dregnet;
using namespace dregnet::harness;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("dregnet_harness_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunSpec small_spec(const std::string& extra = "") {
    return resolve(Config::parse("model.arch = convnet\nmodel.width = 4\nmodel.depth = 2\n"
                                 "data.classes = 3\ndata.n_per_class = 20\ndata.dim = 16\n"
                                 "data.batch_size = 16\nrun.epochs = 3\n" +
                                 extra));
}

}  // namespace

TEST(Config, ParseCommentsAndDefaults) {
    const auto cfg = Config::parse("# comment\n\nmodel.width = 7   # trailing\noptim.eta=0.2\n");
    EXPECT_EQ(cfg.get("model.width"), "7");
    EXPECT_EQ(cfg.get("optim.eta"), "0.2");
    EXPECT_FALSE(cfg.get("optim.beta").has_value());
    const auto spec = resolve(cfg);
    EXPECT_EQ(spec.model.width, 7u);
    EXPECT_EQ(spec.optim.eta, 0.2);
    EXPECT_EQ(spec.optim.beta, 0.9);
    EXPECT_EQ(spec.dreg.position, "Block-R1");
}

TEST(Config, RejectsBadInput) {
    EXPECT_THROW(resolve(Config::parse("model.colour = red\n")), UsageError);
    EXPECT_THROW(resolve(Config::parse("optim.eta = fast\n")), UsageError);
    EXPECT_THROW(resolve(Config::parse("optim.beta = 1.5\n")), UsageError);
    EXPECT_THROW(resolve(Config::parse("sweep.lambda = \n")), UsageError);
    EXPECT_THROW(Config::parse("no equals sign\n"), UsageError);
    EXPECT_THROW(Config::load("/nonexistent/dregnet.conf"), UsageError);
}

TEST(Config, SpiralsDefaults) {
    const auto spec = resolve(Config::parse("data.source = spirals\n"));
    EXPECT_EQ(spec.data.classes, 2);
    EXPECT_EQ(spec.data.noise, 0.05);
}

TEST(Config, SidecarRoundTrip) {
    const auto spec = resolve(Config::parse("dreg.lambda = 0.3\nsweep.position = Block-R1, Block-R2\n"
                                            "sweep.batch_size = 8, 4\nrun.out_dir = a b/c\n"));
    const std::string text = to_config_text(spec);
    EXPECT_EQ(to_config_text(resolve(Config::parse(text))), text);
    const auto again = resolve(Config::parse(text));
    EXPECT_EQ(again.dreg.lambda, 0.3);
    EXPECT_EQ(again.sweep.position, (std::vector<std::string>{"Block-R1", "Block-R2"}));
    EXPECT_EQ(again.run.out_dir, "a b/c");
}

TEST(Csv, FieldQuoting) {
    EXPECT_EQ(csv_field("plain"), "plain");
    EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
    EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    EXPECT_EQ(csv_field("two\nlines"), "\"two\nlines\"");
    EXPECT_EQ(format_number(0.1), "0.1");
    EXPECT_EQ(format_number(2.0), "2");
}

TEST(Csv, MetricsSchema) {
    RunMetrics m;
    m.records.push_back({1, 0.5, 0.25, std::nullopt, std::nullopt, 0.75, std::nullopt, std::nullopt});
    m.records.push_back({2, 0.4, 0.2, 0.3, 1e-4, 0.8, 0.7, 12.5});
    std::ostringstream os;
    write_metrics_csv(m, os);
    EXPECT_EQ(os.str(),
              "epoch,train_loss_total,l_r,l_l,dreg_raw,val_acc_r,val_acc_l,wall_time_ms\r\n"
              "1,0.5,0.25,,,0.75,,\r\n"
              "2,0.4,0.2,0.3,1e-04,0.8,0.7,12.5\r\n");
}

TEST(Metrics, ValidateAndThreshold) {
    RunMetrics m;
    m.records.push_back({1, 0, 0, {}, {}, 0.5, {}, {}});
    m.records.push_back({2, 0, 0, {}, {}, 0.96, {}, {}});
    m.records.push_back({3, 0, 0, {}, {}, 0.9, 1.0, {}});
    EXPECT_NO_THROW(m.validate());
    EXPECT_EQ(m.best_val_acc(), 1.0);
    EXPECT_EQ(m.epochs_to_threshold(), 2u);
    m.records[2].dreg_raw = -1.0;
    EXPECT_THROW(m.validate(), std::logic_error);
    m.records[2].dreg_raw = 1.0;
    m.records[2].epoch = 2;
    EXPECT_THROW(m.validate(), std::logic_error);
}

TEST(Model, SaveLoadRoundTrip) {
    for (bool residual : {false, true}) {
        ModelSpec ms;
        ms.arch = "convnet";
        ms.width = 3;
        ms.depth = 3;
        ms.residual = residual;
        nn::Network net = build_model(ms, {1, 4, 4}, 3, 5);
        for (bool dual : {false, true}) {
            nn::Network n = net;
            if (dual) dreg::attach_at(n, "Block-R1", 1e-2, 2);
            std::stringstream ss;
            write_model(n, ss);
            nn::Network back = read_model(ss);
            ASSERT_EQ(back.parameter_count(), n.parameter_count());
            const auto a = n.parameters(), b = back.parameters();
            for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
            const Tensor x({2, 1, 4, 4}, 0.3);
            EXPECT_EQ(back.forward(x).r, n.forward(x).r);
            if (dual) EXPECT_EQ(*back.forward(x).l, *n.forward(x).l);
        }
    }
}

TEST(Model, RejectsCorruptFiles) {
    std::stringstream bad("NOTAMODEL");
    EXPECT_THROW(read_model(bad), UsageError);
    nn::Network net = build_model(ModelSpec{}, {4}, 2, 1);
    std::stringstream ss;
    write_model(net, ss);
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 5);
    std::stringstream truncated(bytes);
    EXPECT_THROW(read_model(truncated), UsageError);
}

TEST(Run, BlobsReachHighTrainAccuracy) {
    const auto spec = resolve(Config::parse("model.arch = mlp\nmodel.width = 16\nmodel.depth = 2\n"
                                            "dreg.enabled = false\ndata.classes = 3\ndata.dim = 4\n"
                                            "data.n_per_class = 40\ndata.separation = 8\nrun.epochs = 50\n"));
    const auto result = run_training(spec);
    ASSERT_FALSE(result.train_accuracy.empty());
    EXPECT_GE(result.train_accuracy.back().best(), 0.99);
    EXPECT_FALSE(result.selection.has_value());
    EXPECT_NO_THROW(result.metrics.validate());
}

TEST(Run, DualRunSelectsBasePath) {
    const auto result = run_training(small_spec());
    ASSERT_TRUE(result.selection.has_value());
    EXPECT_EQ(result.deployable().parameter_count(), result.base_parameter_count);
    for (const auto& r : result.metrics.records) {
        ASSERT_TRUE(r.dreg_raw.has_value());
        EXPECT_GT(*r.dreg_raw, 0.0);
        EXPECT_TRUE(r.l_l.has_value());
        EXPECT_FALSE(r.wall_time_ms.has_value());
    }
}

TEST(Run, OutputsAreByteIdentical) {
    const auto dir = temp_dir("identical");
    const auto spec = small_spec();
    write_run_outputs(spec, run_training(spec), dir / "a");
    write_run_outputs(spec, run_training(spec), dir / "b");
    for (const char* f : {"metrics.csv", "config.resolved", "model.bin"}) {
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "a" / "timing.csv"));
    const auto loaded = load_model(dir / "a" / "model.bin");
    EXPECT_FALSE(loaded.dual_index().has_value());
}

TEST(Run, EarlyStopHook) {
    TrainHooks hooks;
    std::size_t steps = 0;
    hooks.on_step = [&](const Trainer&, const StepOutcome&) { ++steps; };
    hooks.on_epoch = [](const EpochRecord& rec, const Accuracy&) { return rec.epoch == 2; };
    const auto result = run_training(small_spec(), hooks);
    EXPECT_EQ(result.metrics.records.size(), 2u);
    EXPECT_EQ(result.step_ms.size(), steps);
    EXPECT_GT(steps, 0u);
}

TEST(Sweep, LambdaAxisDefaults) {
    const auto points = sweep_points(small_spec(), "lambda");
    ASSERT_EQ(points.size(), 5u);
    EXPECT_EQ(points[4].label, "lambda=0 (no DReg)");
    EXPECT_FALSE(points[4].spec.dreg.enabled);
    EXPECT_TRUE(points[0].spec.dreg.enabled);
    EXPECT_EQ(points[0].spec.dreg.lambda, 0.001);
}

TEST(Sweep, BatchSizeAnchoredAtTrainingSetSize) {
    auto spec = small_spec("data.devices = 2\n");
    const std::size_t m = prepare_data(spec).train.size();
    const auto points = sweep_points(spec, "batch-size");
    ASSERT_FALSE(points.empty());
    EXPECT_EQ(points[0].spec.data.batch_size, m / 2 * 2);
    for (const auto& p : points) EXPECT_EQ(p.spec.data.batch_size % 2, 0u);
}

TEST(Sweep, PositionAndMomentumBaselines) {
    const auto spec = small_spec("sweep.with_baseline = true\n");
    const auto pos = sweep_points(spec, "position");
    ASSERT_GE(pos.size(), 2u);
    EXPECT_FALSE(pos[0].spec.dreg.enabled);
    EXPECT_EQ(pos[1].spec.dreg.position, "Block-R1");
    const auto mom = sweep_points(spec, "momentum");
    EXPECT_EQ(mom.size(), 6u);
    EXPECT_THROW(sweep_points(spec, "colour"), UsageError);
}

TEST(Sweep, Ranking) {
    std::vector<SweepRow> rows{{"a", "a", 0.9, 3, 0.9}, {"b", "b", 0.95, std::nullopt, 0.9},
                               {"c", "c", 0.95, 4, 0.9}, {"d", "d", 0.9, 3, 0.8}};
    rank_sweep(rows);
    EXPECT_EQ(rows[0].label, "c");
    EXPECT_EQ(rows[1].label, "b");
    EXPECT_EQ(rows[2].label, "a");
    EXPECT_EQ(rows[3].label, "d");
    std::ostringstream os;
    write_summary_csv(rows, os);
    EXPECT_EQ(os.str().substr(0, os.str().find('\r')), "rank,point,best_val_acc,epochs_to_threshold,final_train_acc,dir");
}

TEST(Verify, BrokenDistanceGradientIsCaught) {
    VerifyOptions opts;
    opts.dreg_grad_fn = [](const Tensor& a, const Tensor& b) {
        const Tensor d = scale(sub(a, b), 3.0);
        return std::make_pair(d, scale(d, -1.0));
    };
    EXPECT_FALSE(verify_decomposition(opts).passed);
    EXPECT_FALSE(verify_growth_law(opts).passed);
    EXPECT_TRUE(verify_decomposition(VerifyOptions{}).passed);
}

TEST(Commands, VerifyAndEvalExitCodes) {
    std::ostringstream out;
    EXPECT_EQ(cmd_verify(out), 0);
    EXPECT_NE(out.str().find("PASS"), std::string::npos);

    const auto dir = temp_dir("eval");
    std::ofstream(dir / "run.conf") << "model.arch = mlp\ndreg.enabled = false\ndata.dim = 4\nrun.epochs = 5\n"
                                    << "run.out_dir = " << (dir / "out").string() << "\n";
    std::ostringstream train_out;
    EXPECT_EQ(cmd_train(dir / "run.conf", train_out), 0);
    ASSERT_TRUE(std::filesystem::exists(dir / "out" / "model.bin"));
    std::ostringstream eval_out;
    EXPECT_EQ(cmd_eval(dir / "out" / "model.bin", dir / "run.conf", false, eval_out), 0);
    EXPECT_NE(eval_out.str().find("accuracy"), std::string::npos);
}
