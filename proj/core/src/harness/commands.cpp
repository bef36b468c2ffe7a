#include "dregnet/harness/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "dregnet/errors.hpp"
#include "dregnet/harness/model.hpp"

namespace dregnet::harness {

namespace {

std::string final_train(const RunResult& r) {
    if (r.train_accuracy.empty()) return "n/a";
    return format_number(r.train_accuracy.back().best());
}

}  // namespace

std::vector<SweepPoint> sweep_points(const RunSpec& base, const std::string& axis) {
    std::vector<SweepPoint> points;
    auto vanilla_twin = [&](const SweepPoint& p) {
        SweepPoint v = p;
        v.label += " vanilla";
        v.dir += "_vanilla";
        v.spec.dreg.enabled = false;
        return v;
    };
    if (axis == "lambda") {
        if (base.sweep.lambda.empty()) throw UsageError("sweep.lambda is empty");
        for (double l : base.sweep.lambda) {
            SweepPoint p{"lambda=" + format_number(l), "lambda_" + format_number(l), base};
            p.spec.dreg.lambda = l;
            p.spec.dreg.enabled = l != 0.0;
            if (l == 0.0) p.label += " (no DReg)";
            points.push_back(std::move(p));
        }
    } else if (axis == "momentum") {
        if (base.sweep.momentum.empty()) throw UsageError("sweep.momentum is empty");
        for (double b : base.sweep.momentum) {
            SweepPoint p{"momentum=" + format_number(b), "momentum_" + format_number(b), base};
            p.spec.optim.beta = b;
            if (base.sweep.with_baseline && p.spec.dreg.enabled) points.push_back(vanilla_twin(p));
            points.push_back(std::move(p));
        }
    } else if (axis == "position") {
        std::vector<std::string> labels = base.sweep.position;
        if (labels.empty()) {
            const auto data = prepare_data(base);
            const auto net = build_model(base.model, data.train.sample_shape(), data.train.num_classes, base.run.seed);
            for (std::size_t i = 0; i < net.eligible_positions().size(); ++i) labels.push_back(dreg::position_label(i));
        }
        if (labels.empty()) throw UsageError("position axis: the model has no eligible layer");
        if (base.sweep.with_baseline) {
            SweepPoint v{"baseline (no DReg)", "baseline", base};
            v.spec.dreg.enabled = false;
            points.push_back(std::move(v));
        }
        for (const auto& pos : labels) {
            dreg::parse_position(pos);
            SweepPoint p{"position=" + pos, "position_" + pos, base};
            p.spec.dreg.enabled = true;
            p.spec.dreg.position = pos;
            points.push_back(std::move(p));
        }
    } else if (axis == "batch-size" || axis == "batch_size") {
        std::vector<std::size_t> sizes = base.sweep.batch_size;
        if (sizes.empty()) {
            // The whole training split as one batch, then halvings; rounded
            // down to a multiple of the device count.
            const std::size_t m = prepare_data(base).train.size();
            const std::size_t k = base.data.devices;
            for (std::size_t d : {1, 2, 4, 8}) {
                const std::size_t b = m / d / k * k;
                if (b > 0 && std::find(sizes.begin(), sizes.end(), b) == sizes.end()) sizes.push_back(b);
            }
        }
        if (sizes.empty()) throw UsageError("sweep.batch_size is empty");
        for (std::size_t b : sizes) {
            if (b == 0 || b % base.data.devices != 0) {
                throw UsageError("batch size " + std::to_string(b) + " is not a positive multiple of data.devices");
            }
            SweepPoint p{"batch_size=" + std::to_string(b), "batch_size_" + std::to_string(b), base};
            p.spec.data.batch_size = b;
            if (base.sweep.with_baseline && p.spec.dreg.enabled) points.push_back(vanilla_twin(p));
            points.push_back(std::move(p));
        }
    } else {
        throw UsageError("unknown sweep axis '" + axis + "' (expected lambda, position, momentum or batch-size)");
    }
    for (auto& p : points) p.spec.run.out_dir = (std::filesystem::path(base.run.out_dir) / p.dir).string();
    return points;
}

void rank_sweep(std::vector<SweepRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        if (a.best_val_acc != b.best_val_acc) return a.best_val_acc > b.best_val_acc;
        const auto ea = a.epochs_to_threshold.value_or(SIZE_MAX);
        const auto eb = b.epochs_to_threshold.value_or(SIZE_MAX);
        return ea < eb;
    });
}

void write_summary_csv(const std::vector<SweepRow>& ranked, std::ostream& out) {
    out << "rank,point,best_val_acc,epochs_to_threshold,final_train_acc,dir\r\n";
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto& r = ranked[i];
        out << (i + 1) << ',' << csv_field(r.label) << ',' << format_number(r.best_val_acc) << ','
            << (r.epochs_to_threshold ? std::to_string(*r.epochs_to_threshold) : std::string()) << ','
            << format_number(r.final_train_acc) << ',' << csv_field(r.dir) << "\r\n";
    }
}

int cmd_train(const std::filesystem::path& config, std::ostream& out) {
    const RunSpec spec = resolve(Config::load(config));
    const auto result = run_training(spec);
    write_run_outputs(spec, result, spec.run.out_dir);
    if (result.diverged_at) out << "diverged in epoch " << *result.diverged_at << "; stopped\n";
    if (!result.metrics.records.empty()) {
        const auto& last = result.metrics.records.back();
        out << "trained " << result.metrics.records.size()
            << " epochs; final val_acc_r=" << format_number(last.val_acc_r);
        if (last.val_acc_l) out << " val_acc_l=" << format_number(*last.val_acc_l);
        out << " train_acc=" << final_train(result) << "\n";
    }
    if (result.selection) {
        out << "selected path " << (result.selection->chosen == nn::Path::R ? "R" : "L") << " ("
            << result.selection->network.parameter_count() << " parameters)\n";
    }
    out << "outputs in " << spec.run.out_dir << "\n";
    return 0;
}

int cmd_sweep(const std::filesystem::path& config, const std::string& axis, std::ostream& out) {
    const RunSpec base = resolve(Config::load(config));
    const auto points = sweep_points(base, axis);
    std::vector<SweepRow> rows;
    for (const auto& p : points) {
        out << "running " << p.label << " ..." << std::flush;
        const auto result = run_training(p.spec);
        write_run_outputs(p.spec, result, p.spec.run.out_dir);
        SweepRow row{p.label, p.dir, result.metrics.best_val_acc(), result.metrics.epochs_to_threshold(), 0.0};
        if (!result.train_accuracy.empty()) row.final_train_acc = result.train_accuracy.back().best();
        out << " best_val_acc=" << format_number(row.best_val_acc);
        if (result.diverged_at) out << " (diverged in epoch " << *result.diverged_at << ")";
        out << "\n";
        rows.push_back(std::move(row));
    }
    rank_sweep(rows);
    std::filesystem::create_directories(base.run.out_dir);
    {
        std::ofstream summary(std::filesystem::path(base.run.out_dir) / "summary.csv", std::ios::binary);
        if (!summary) throw UsageError("cannot write summary.csv in " + base.run.out_dir);
        write_summary_csv(rows, summary);
    }
    out << "\n" << std::left << std::setw(5) << "rank" << std::setw(28) << "point" << std::setw(14) << "best_val"
        << "epochs_to_95%\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out << std::setw(5) << (i + 1) << std::setw(28) << rows[i].label << std::setw(14)
            << format_number(rows[i].best_val_acc)
            << (rows[i].epochs_to_threshold ? std::to_string(*rows[i].epochs_to_threshold) : "-") << "\n";
    }
    return 0;
}

int cmd_verify(std::ostream& out, const VerifyOptions& opts) {
    return print_report(out, run_verify(opts)) ? 0 : 1;
}

int cmd_eval(const std::filesystem::path& model, const std::filesystem::path& dataset_config, bool whole,
             std::ostream& out) {
    nn::Network net = load_model(model);
    const RunSpec spec = resolve(Config::load(dataset_config));
    auto split = prepare_data(spec);
    data::Dataset ds = whole || split.val.size() == 0 ? split.train : split.val;
    if (whole && split.val.size() > 0) {
        // Reassemble the full dataset in split order.
        std::vector<double> xs(ds.inputs.values().begin(), ds.inputs.values().end());
        xs.insert(xs.end(), split.val.inputs.values().begin(), split.val.inputs.values().end());
        Shape shape = ds.inputs.shape();
        shape[0] += split.val.size();
        ds.labels.insert(ds.labels.end(), split.val.labels.begin(), split.val.labels.end());
        ds.inputs = Tensor(shape, std::move(xs));
    }
    if (ds.sample_shape() != net.input_shape()) {
        if (shape_numel(ds.sample_shape()) != shape_numel(net.input_shape())) {
            throw ShapeError("dataset samples " + shape_to_string(ds.sample_shape()) + " do not fit model input " +
                             shape_to_string(net.input_shape()));
        }
        ds = ds.reshaped(net.input_shape());
    }
    if (shape_numel(net.output_shape()) < static_cast<std::size_t>(ds.num_classes)) {
        throw ShapeError("model has fewer outputs than the dataset has classes");
    }
    const auto acc = evaluate_accuracy(net, ds);
    const auto logits = net.forward(ds.inputs);
    out << "samples=" << ds.size() << " accuracy=" << format_number(acc.r)
        << " loss=" << format_number(nn::cross_entropy(logits.r, ds.labels));
    if (acc.l) out << " accuracy_l=" << format_number(*acc.l);
    out << "\n";
    return 0;
}

}  // namespace dregnet::harness
