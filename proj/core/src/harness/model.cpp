#include "dregnet/harness/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dregnet/dreg/dreg.hpp"
#include "dregnet/errors.hpp"
#include "dregnet/nn/layers.hpp"

namespace dregnet::harness {

using nn::LayerKind;

nn::Network build_model(const ModelSpec& spec, const Shape& sample_shape, int classes, std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("build_model: need at least two classes");
    nn::Network net(sample_shape);
    const auto nclasses = static_cast<std::size_t>(classes);
    if (spec.arch == "mlp") {
        if (sample_shape.size() != 1) net.emplace<nn::Flatten>();
        std::size_t in = shape_numel(sample_shape);
        for (std::size_t i = 0; i < spec.depth; ++i) {
            net.emplace<nn::Dense>(in, spec.width);
            net.emplace<nn::Relu>();
            in = spec.width;
        }
        net.emplace<nn::Dense>(in, nclasses);
    } else if (spec.arch == "convnet") {
        if (sample_shape.size() != 3) {
            throw ShapeError("convnet expects C×H×W samples, got " + shape_to_string(sample_shape));
        }
        net.emplace<nn::Conv2d>(sample_shape[0], spec.width, 3, 1, 1);
        net.emplace<nn::Relu>();
        for (std::size_t i = 1; i < spec.depth; ++i) {
            if (spec.residual) {
                net.add(nn::ResidualBlock::basic(spec.width));
            } else {
                net.emplace<nn::Conv2d>(spec.width, spec.width, 3, 1, 1);
            }
            net.emplace<nn::Relu>();
        }
        if (sample_shape[1] >= 4 && sample_shape[2] >= 4) net.emplace<nn::AvgPool>(2);
        net.emplace<nn::Flatten>();
        net.emplace<nn::Dense>(shape_numel(net.output_shape()), nclasses);
    } else {
        throw UsageError("unknown architecture '" + spec.arch + "'");
    }
    net.initialize(seed);
    return net;
}

// ------------------------------------------------------------------ writing

namespace {

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v), 8); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void shape(const Shape& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        for (auto d : s) u64(d);
    }

private:
    void le(std::uint64_t v, int bytes) {
        char buf[8];
        for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(buf, bytes);
    }
    std::ostream& out_;
};

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    std::int64_t i64() { return static_cast<std::int64_t>(le(8)); }
    double f64() { return std::bit_cast<double>(le(8)); }
    std::string str() {
        const auto n = u32();
        if (n > 4096) throw UsageError("model file: implausible name length");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    Shape shape() {
        const auto rank = u32();
        if (rank > 8) throw UsageError("model file: implausible tensor rank");
        Shape s(rank);
        for (auto& d : s) d = u64();
        return s;
    }
    void bytes(char* dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw UsageError("model file: truncated");
    }

private:
    std::uint64_t le(int n) {
        unsigned char buf[8];
        bytes(reinterpret_cast<char*>(buf), static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return v;
    }
    std::istream& in_;
};

void write_layer_header(Writer& w, const nn::Layer& layer) {
    w.u32(static_cast<std::uint32_t>(layer.kind()));
    const auto hp = layer.hyperparameters();
    w.u32(static_cast<std::uint32_t>(hp.size()));
    for (auto h : hp) w.i64(h);
    const auto kids = layer.children();
    w.u32(static_cast<std::uint32_t>(kids.size()));
    for (const auto* k : kids) write_layer_header(w, *k);
    // Children's tensors are listed under the child; the parent lists its own.
    const auto params = layer.kind() == LayerKind::Residual ? std::vector<const nn::Parameter*>{} : layer.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        w.str(p->name);
        w.shape(p->value.shape());
    }
}

struct TensorHeader {
    std::string name;
    Shape shape;
};

struct LayerHeader {
    LayerKind kind{};
    std::vector<std::int64_t> hyper;
    std::vector<LayerHeader> children;
    std::vector<TensorHeader> tensors;
};

LayerHeader read_layer_header(Reader& r, int depth) {
    if (depth > 16) throw UsageError("model file: layers nested too deeply");
    LayerHeader h;
    const auto kind = r.u32();
    if (kind < 1 || kind > 7) throw UsageError("model file: unknown layer kind " + std::to_string(kind));
    h.kind = static_cast<LayerKind>(kind);
    const auto nh = r.u32();
    if (nh > 64) throw UsageError("model file: implausible hyperparameter count");
    for (std::uint32_t i = 0; i < nh; ++i) h.hyper.push_back(r.i64());
    const auto nc = r.u32();
    if (nc > 1024) throw UsageError("model file: implausible child count");
    for (std::uint32_t i = 0; i < nc; ++i) h.children.push_back(read_layer_header(r, depth + 1));
    const auto nt = r.u32();
    if (nt > 16) throw UsageError("model file: implausible tensor count");
    for (std::uint32_t i = 0; i < nt; ++i) {
        TensorHeader t;
        t.name = r.str();
        t.shape = r.shape();
        h.tensors.push_back(std::move(t));
    }
    return h;
}

std::size_t hp(const LayerHeader& h, std::size_t i) {
    if (i >= h.hyper.size() || h.hyper[i] < 0) {
        throw UsageError("model file: bad hyperparameters for " + nn::to_string(h.kind));
    }
    return static_cast<std::size_t>(h.hyper[i]);
}

std::unique_ptr<nn::Layer> make_plain(LayerKind kind, const LayerHeader& h, std::size_t offset) {
    switch (kind) {
        case LayerKind::Dense:
            return std::make_unique<nn::Dense>(hp(h, offset), hp(h, offset + 1));
        case LayerKind::Conv2d:
            return std::make_unique<nn::Conv2d>(hp(h, offset), hp(h, offset + 1), hp(h, offset + 2),
                                                hp(h, offset + 3), hp(h, offset + 4));
        default:
            throw UsageError("model file: cannot wrap " + nn::to_string(kind));
    }
}

std::unique_ptr<nn::Layer> build_layer(const LayerHeader& h) {
    switch (h.kind) {
        case LayerKind::Dense:
        case LayerKind::Conv2d:
            return make_plain(h.kind, h, 0);
        case LayerKind::Relu:
            return std::make_unique<nn::Relu>();
        case LayerKind::AvgPool:
            return std::make_unique<nn::AvgPool>(hp(h, 0));
        case LayerKind::Flatten:
            return std::make_unique<nn::Flatten>();
        case LayerKind::Residual: {
            std::vector<std::unique_ptr<nn::Layer>> body;
            for (const auto& c : h.children) body.push_back(build_layer(c));
            return std::make_unique<nn::ResidualBlock>(std::move(body));
        }
        case LayerKind::DReg: {
            const auto inner = static_cast<LayerKind>(hp(h, 0));
            auto base = make_plain(inner, h, 1);
            const Tensor& w = base->parameters().front()->value;
            return std::make_unique<dreg::DRegLayer>(*base, w, w);
        }
    }
    throw UsageError("model file: unknown layer kind");
}

void check_tensors(const LayerHeader& h, const nn::Layer& layer) {
    if (h.kind == LayerKind::Residual) {
        const auto kids = layer.children();
        for (std::size_t i = 0; i < kids.size(); ++i) check_tensors(h.children[i], *kids[i]);
        return;
    }
    const auto params = layer.parameters();
    if (params.size() != h.tensors.size()) throw UsageError("model file: tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->name != h.tensors[i].name || params[i]->value.shape() != h.tensors[i].shape) {
            throw UsageError("model file: tensor '" + h.tensors[i].name + "' " +
                             shape_to_string(h.tensors[i].shape) + " does not match layer " +
                             nn::to_string(h.kind));
        }
    }
}

}  // namespace

void write_model(const nn::Network& net, std::ostream& out) {
    Writer w(out);
    out.write(kModelMagic, sizeof kModelMagic);
    w.u32(kModelVersion);
    w.shape(net.input_shape());
    w.u32(static_cast<std::uint32_t>(net.size()));
    for (std::size_t i = 0; i < net.size(); ++i) write_layer_header(w, net.layer(i));
    for (const auto* p : net.parameters()) {
        for (double v : p->value.values()) w.f64(v);
    }
    if (!out) throw std::runtime_error("write_model: stream error");
}

nn::Network read_model(std::istream& in) {
    Reader r(in);
    char magic[sizeof kModelMagic];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kModelMagic, sizeof magic) != 0) throw UsageError("model file: bad magic");
    const auto version = r.u32();
    if (version != kModelVersion) throw UsageError("model file: unsupported version " + std::to_string(version));
    nn::Network net(r.shape());
    const auto n = r.u32();
    if (n > 4096) throw UsageError("model file: implausible layer count");
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto h = read_layer_header(r, 0);
        auto layer = build_layer(h);
        check_tensors(h, *layer);
        net.add(std::move(layer));
    }
    for (auto* p : net.parameters()) {
        for (double& v : p->value.data()) v = r.f64();
    }
    return net;
}

void save_model(const nn::Network& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write model " + path.string());
    write_model(net, out);
}

nn::Network load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read model " + path.string());
    return read_model(in);
}

}  // namespace dregnet::harness
