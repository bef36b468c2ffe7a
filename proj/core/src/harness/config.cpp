#include "dregnet/harness/config.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dregnet/errors.hpp"

namespace dregnet::harness {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size()) throw UsageError(key + ": expected a number, got '" + v + "'");
    return d;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long n = 0;
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        n = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw UsageError(key + ": expected a non-negative integer, got '" + v + "'");
    return n;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError(key + ": expected true/false, got '" + v + "'");
}

std::string fmt_double(double d) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << d;
    return os.str();
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += f(xs[i]);
    }
    return out;
}

}  // namespace

const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "model.arch",       "model.width",         "model.depth",         "model.residual",
        "dreg.enabled",     "dreg.lambda",         "dreg.position",       "dreg.epsilon_init",
        "dreg.max_norm",    "dreg.through_momentum",
        "optim.eta",        "optim.beta",
        "data.source",      "data.path",           "data.labels_path",    "data.seed",
        "data.batch_size",  "data.devices",        "data.parallel_shards", "data.classes",
        "data.n_per_class", "data.dim",            "data.separation",     "data.noise",
        "data.val_fraction",
        "run.epochs",       "run.out_dir",         "run.seed",            "run.record_wall_time",
        "sweep.lambda",     "sweep.position",      "sweep.momentum",      "sweep.batch_size",
        "sweep.with_baseline",
    };
    return keys;
}

Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config line " + std::to_string(lineno) + ": expected 'section.key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty() || key.find('.') == std::string::npos) {
            throw UsageError("config line " + std::to_string(lineno) + ": key '" + key + "' is not section.key");
        }
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::optional<std::string> Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

RunSpec resolve(const Config& config) {
    const auto& keys = known_keys();
    for (const auto& [k, v] : config.values()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw UsageError("unknown config key '" + k + "'");
    }
    RunSpec s;
    auto with = [&](const char* key, auto apply) {
        if (auto v = config.get(key)) apply(std::string(key), *v);
    };

    with("model.arch", [&](auto, auto v) { s.model.arch = v; });
    with("model.width", [&](auto k, auto v) { s.model.width = to_uint(k, v); });
    with("model.depth", [&](auto k, auto v) { s.model.depth = to_uint(k, v); });
    with("model.residual", [&](auto k, auto v) { s.model.residual = to_bool(k, v); });

    with("dreg.enabled", [&](auto k, auto v) { s.dreg.enabled = to_bool(k, v); });
    with("dreg.lambda", [&](auto k, auto v) { s.dreg.lambda = to_double(k, v); });
    with("dreg.position", [&](auto, auto v) { s.dreg.position = v; });
    with("dreg.epsilon_init", [&](auto k, auto v) { s.dreg.epsilon_init = to_double(k, v); });
    with("dreg.max_norm", [&](auto k, auto v) { s.dreg.max_norm = to_double(k, v); });
    with("dreg.through_momentum", [&](auto k, auto v) { s.dreg.through_momentum = to_bool(k, v); });

    with("optim.eta", [&](auto k, auto v) { s.optim.eta = to_double(k, v); });
    with("optim.beta", [&](auto k, auto v) { s.optim.beta = to_double(k, v); });

    with("data.source", [&](auto, auto v) { s.data.source = v; });
    if (s.data.source == "spirals") {
        s.data.noise = 0.05;
        s.data.classes = 2;
    }
    with("data.path", [&](auto, auto v) { s.data.path = v; });
    with("data.labels_path", [&](auto, auto v) { s.data.labels_path = v; });
    with("data.seed", [&](auto k, auto v) { s.data.seed = to_uint(k, v); });
    with("data.batch_size", [&](auto k, auto v) { s.data.batch_size = to_uint(k, v); });
    with("data.devices", [&](auto k, auto v) { s.data.devices = to_uint(k, v); });
    with("data.parallel_shards", [&](auto k, auto v) { s.data.parallel_shards = to_bool(k, v); });
    with("data.classes", [&](auto k, auto v) { s.data.classes = static_cast<int>(to_uint(k, v)); });
    with("data.n_per_class", [&](auto k, auto v) { s.data.n_per_class = to_uint(k, v); });
    with("data.dim", [&](auto k, auto v) { s.data.dim = to_uint(k, v); });
    with("data.separation", [&](auto k, auto v) { s.data.separation = to_double(k, v); });
    with("data.noise", [&](auto k, auto v) { s.data.noise = to_double(k, v); });
    with("data.val_fraction", [&](auto k, auto v) { s.data.val_fraction = to_double(k, v); });

    with("run.epochs", [&](auto k, auto v) { s.run.epochs = to_uint(k, v); });
    with("run.out_dir", [&](auto, auto v) { s.run.out_dir = v; });
    with("run.seed", [&](auto k, auto v) { s.run.seed = to_uint(k, v); });
    with("run.record_wall_time", [&](auto k, auto v) { s.run.record_wall_time = to_bool(k, v); });

    auto doubles = [](const std::string& k, const std::string& v) {
        std::vector<double> out;
        for (const auto& item : split_list(v)) out.push_back(to_double(k, item));
        if (out.empty()) throw UsageError(k + ": empty axis list");
        return out;
    };
    with("sweep.lambda", [&](auto k, auto v) { s.sweep.lambda = doubles(k, v); });
    with("sweep.momentum", [&](auto k, auto v) { s.sweep.momentum = doubles(k, v); });
    with("sweep.position", [&](auto k, auto v) {
        s.sweep.position = split_list(v);
        if (s.sweep.position.empty()) throw UsageError(k + ": empty axis list");
    });
    with("sweep.batch_size", [&](auto k, auto v) {
        s.sweep.batch_size.clear();
        for (const auto& item : split_list(v)) s.sweep.batch_size.push_back(to_uint(k, item));
        if (s.sweep.batch_size.empty()) throw UsageError(k + ": empty axis list");
    });
    with("sweep.with_baseline", [&](auto k, auto v) { s.sweep.with_baseline = to_bool(k, v); });

    if (s.model.arch != "mlp" && s.model.arch != "convnet") {
        throw UsageError("model.arch: expected mlp or convnet, got '" + s.model.arch + "'");
    }
    if (s.model.width == 0 || s.model.depth == 0) throw UsageError("model.width and model.depth must be >= 1");
    if (s.dreg.lambda < 0.0) throw UsageError("dreg.lambda must be >= 0");
    if (s.dreg.enabled && !(s.dreg.epsilon_init > 0.0)) throw UsageError("dreg.epsilon_init must be > 0");
    if (s.dreg.max_norm < 0.0) throw UsageError("dreg.max_norm must be >= 0");
    if (!(s.optim.eta > 0.0)) throw UsageError("optim.eta must be > 0");
    if (!(s.optim.beta >= 0.0 && s.optim.beta < 1.0)) throw UsageError("optim.beta must lie in [0, 1)");
    if (s.data.source != "blobs" && s.data.source != "spirals" && s.data.source != "idx") {
        throw UsageError("data.source: expected blobs, spirals or idx, got '" + s.data.source + "'");
    }
    if (s.data.source == "idx" && (s.data.path.empty() || s.data.labels_path.empty())) {
        throw UsageError("data.source = idx needs data.path and data.labels_path");
    }
    if (s.data.batch_size == 0 || s.data.devices == 0) throw UsageError("data.batch_size and data.devices must be >= 1");
    if (s.data.batch_size % s.data.devices != 0) {
        throw UsageError("data.batch_size must be divisible by data.devices");
    }
    if (s.data.val_fraction < 0.0 || s.data.val_fraction >= 1.0) throw UsageError("data.val_fraction must lie in [0, 1)");
    if (s.data.classes < 2) throw UsageError("data.classes must be >= 2");
    if (s.data.noise < 0.0) throw UsageError("data.noise must be >= 0");
    return s;
}

std::string to_config_text(const RunSpec& s) {
    std::ostringstream os;
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "model.arch = " << s.model.arch << "\n"
       << "model.width = " << s.model.width << "\n"
       << "model.depth = " << s.model.depth << "\n"
       << "model.residual = " << b(s.model.residual) << "\n"
       << "dreg.enabled = " << b(s.dreg.enabled) << "\n"
       << "dreg.lambda = " << fmt_double(s.dreg.lambda) << "\n"
       << "dreg.position = " << s.dreg.position << "\n"
       << "dreg.epsilon_init = " << fmt_double(s.dreg.epsilon_init) << "\n"
       << "dreg.max_norm = " << fmt_double(s.dreg.max_norm) << "\n"
       << "dreg.through_momentum = " << b(s.dreg.through_momentum) << "\n"
       << "optim.eta = " << fmt_double(s.optim.eta) << "\n"
       << "optim.beta = " << fmt_double(s.optim.beta) << "\n"
       << "data.source = " << s.data.source << "\n";
    if (!s.data.path.empty()) os << "data.path = " << s.data.path << "\n";
    if (!s.data.labels_path.empty()) os << "data.labels_path = " << s.data.labels_path << "\n";
    os << "data.seed = " << s.data.seed << "\n"
       << "data.batch_size = " << s.data.batch_size << "\n"
       << "data.devices = " << s.data.devices << "\n"
       << "data.parallel_shards = " << b(s.data.parallel_shards) << "\n"
       << "data.classes = " << s.data.classes << "\n"
       << "data.n_per_class = " << s.data.n_per_class << "\n"
       << "data.dim = " << s.data.dim << "\n"
       << "data.separation = " << fmt_double(s.data.separation) << "\n"
       << "data.noise = " << fmt_double(s.data.noise) << "\n"
       << "data.val_fraction = " << fmt_double(s.data.val_fraction) << "\n"
       << "run.epochs = " << s.run.epochs << "\n"
       << "run.out_dir = " << s.run.out_dir << "\n"
       << "run.seed = " << s.run.seed << "\n"
       << "run.record_wall_time = " << b(s.run.record_wall_time) << "\n"
       << "sweep.lambda = " << join(s.sweep.lambda, fmt_double) << "\n";
    if (!s.sweep.position.empty()) os << "sweep.position = " << join(s.sweep.position, [](auto x) { return x; }) << "\n";
    os << "sweep.momentum = " << join(s.sweep.momentum, fmt_double) << "\n";
    if (!s.sweep.batch_size.empty()) {
        os << "sweep.batch_size = " << join(s.sweep.batch_size, [](auto x) { return std::to_string(x); }) << "\n";
    }
    os << "sweep.with_baseline = " << b(s.sweep.with_baseline) << "\n";
    return os.str();
}

}  // namespace dregnet::harness
