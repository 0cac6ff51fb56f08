#include "fftrain/checkpoint.hpp"

#include "fftrain/error.hpp"

#include <fmt/core.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fftrain {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct NamedTensor {
    std::string name;
    const Matrix* tensor;
};

std::vector<NamedTensor> tensor_table(const Network& net)
{
    std::vector<NamedTensor> table;
    for (std::size_t k = 0; k < net.hidden.size(); ++k) {
        const auto& l = net.hidden[k];
        const std::string prefix = fmt::format("hidden.{}.", k);
        table.push_back({prefix + "weights", &l.weights});
        table.push_back({prefix + "bias", &l.bias});
        table.push_back({prefix + "bn_gamma", &l.bn_gamma});
        table.push_back({prefix + "bn_beta", &l.bn_beta});
        table.push_back({prefix + "bn_running_mean", &l.bn_running_mean});
        table.push_back({prefix + "bn_running_var", &l.bn_running_var});
    }
    table.push_back({"head.weights", &net.head.weights});
    table.push_back({"head.bias", &net.head.bias});
    return table;
}

std::vector<Matrix*> mutable_tensor_table(Network& net)
{
    std::vector<Matrix*> table;
    for (auto& l : net.hidden) {
        for (Matrix* m : {&l.weights, &l.bias, &l.bn_gamma, &l.bn_beta, &l.bn_running_mean, &l.bn_running_var}) {
            table.push_back(m);
        }
    }
    table.push_back(&net.head.weights);
    table.push_back(&net.head.bias);
    return table;
}

void write_u32(std::ostream& out, std::uint32_t v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& out, std::uint64_t v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_blob(std::ostream& out, const Matrix& m)
{
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

class Reader {
public:
    explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    void read(void* dst, std::size_t n, std::string_view what)
    {
        if (bytes_.size() - pos_ < n) {
            throw CheckpointError(fmt::format("checkpoint truncated while reading {}", what));
        }
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

// Zero tensors with the shapes implied by `arch`; filled from the blob afterwards.
Network shaped_network(const Architecture& arch)
{
    Network net;
    net.input_dim = arch.input_dim;
    net.class_count = arch.class_count;
    net.interlayer_norm = arch.interlayer_norm;
    std::size_t fan_in = arch.input_dim;
    for (const std::size_t width : arch.hidden) {
        DenseLayer layer;
        layer.weights = Matrix(width, fan_in);
        for (Matrix* v : {&layer.bias, &layer.bn_gamma, &layer.bn_beta, &layer.bn_running_mean, &layer.bn_running_var}) {
            *v = Matrix(1, width);
        }
        net.hidden.push_back(std::move(layer));
        fan_in = width;
    }
    net.head.weights = Matrix(arch.class_count, fan_in);
    net.head.bias = Matrix(1, arch.class_count);
    return net;
}

Matrix read_matrix(Reader& reader, std::size_t rows, std::size_t cols, std::string_view what)
{
    Matrix m(rows, cols);
    reader.read(m.data(), m.size() * sizeof(double), what);
    return m;
}

} // namespace

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path)
{
    const Network& net = checkpoint.net;
    net.validate();

    json header;
    header["format"] = "fftrain-checkpoint";
    header["dtype"] = "f64-le";
    header["input_dim"] = net.input_dim;
    header["class_count"] = net.class_count;
    header["interlayer_norm"] = net.interlayer_norm;
    header["class_names"] = checkpoint.class_names;
    header["epoch"] = checkpoint.epoch;
    json hidden = json::array();
    for (const auto& layer : net.hidden) {
        hidden.push_back(layer.out_dim());
    }
    header["hidden"] = hidden;
    json tensors = json::array();
    for (const auto& t : tensor_table(net)) {
        tensors.push_back({{"name", t.name}, {"shape", {t.tensor->rows(), t.tensor->cols()}}});
    }
    header["tensors"] = tensors;
    json optimizers = json::array();
    for (const auto& opt : checkpoint.optimizers) {
        json shapes = json::array();
        for (const auto& m : opt.m) {
            shapes.push_back({m.rows(), m.cols()});
        }
        optimizers.push_back({{"kind", "adam"},
                              {"t", opt.t},
                              {"lr", opt.lr},
                              {"beta1", opt.beta1},
                              {"beta2", opt.beta2},
                              {"eps", opt.eps},
                              {"shapes", shapes}});
    }
    header["optimizers"] = optimizers;
    header["meta"] = checkpoint.meta;
    const std::string header_text = header.dump();

    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw CheckpointError(fmt::format("cannot write checkpoint '{}'", path.string()));
        }
        out.write(kCheckpointMagic, sizeof kCheckpointMagic);
        write_u32(out, kCheckpointVersion);
        write_u64(out, header_text.size());
        out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
        for (const auto& t : tensor_table(net)) {
            write_blob(out, *t.tensor);
        }
        for (const auto& opt : checkpoint.optimizers) {
            for (const auto& m : opt.m) {
                write_blob(out, m);
            }
            for (const auto& v : opt.v) {
                write_blob(out, v);
            }
        }
        if (!out.flush()) {
            throw CheckpointError(fmt::format("failed writing checkpoint '{}'", path.string()));
        }
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError(fmt::format("cannot open checkpoint '{}'", path.string()));
    }
    Reader reader(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

    char magic[sizeof kCheckpointMagic];
    reader.read(magic, sizeof magic, "magic");
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw CheckpointError(fmt::format("'{}' is not a checkpoint (bad magic)", path.string()));
    }
    std::uint32_t version = 0;
    reader.read(&version, sizeof version, "version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(fmt::format("checkpoint version {} is not supported (expected {})", version, kCheckpointVersion));
    }
    std::uint64_t header_size = 0;
    reader.read(&header_size, sizeof header_size, "header length");
    if (header_size > reader.remaining()) {
        throw CheckpointError("checkpoint truncated inside the header");
    }
    std::string header_text(header_size, '\0');
    reader.read(header_text.data(), header_text.size(), "header");

    Checkpoint ck;
    std::size_t blob_doubles = 0;
    try {
        const json header = json::parse(header_text);
        if (header.at("dtype").get<std::string>() != "f64-le") {
            throw CheckpointError("unsupported checkpoint dtype");
        }
        Architecture arch;
        arch.input_dim = header.at("input_dim").get<std::size_t>();
        arch.class_count = header.at("class_count").get<std::size_t>();
        arch.interlayer_norm = header.at("interlayer_norm").get<bool>();
        arch.hidden = header.at("hidden").get<std::vector<std::size_t>>();
        ck.net = shaped_network(arch);
        ck.class_names = header.at("class_names").get<std::vector<std::string>>();
        ck.epoch = header.at("epoch").get<int>();
        ck.meta = header.value("meta", json::object());

        const auto expected = tensor_table(ck.net);
        const auto& tensors = header.at("tensors");
        if (tensors.size() != expected.size()) {
            throw CheckpointError(fmt::format("checkpoint lists {} tensors, architecture needs {}",
                                              tensors.size(), expected.size()));
        }
        for (std::size_t i = 0; i < expected.size(); ++i) {
            const auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
            if (tensors[i].at("name").get<std::string>() != expected[i].name || shape.size() != 2
                || shape[0] != expected[i].tensor->rows() || shape[1] != expected[i].tensor->cols()) {
                throw CheckpointError(fmt::format("tensor {} does not match the declared architecture", expected[i].name));
            }
            blob_doubles += expected[i].tensor->size();
        }
        for (const auto& opt : header.at("optimizers")) {
            AdamState state;
            state.t = opt.at("t").get<std::uint64_t>();
            state.lr = opt.at("lr").get<double>();
            state.beta1 = opt.at("beta1").get<double>();
            state.beta2 = opt.at("beta2").get<double>();
            state.eps = opt.at("eps").get<double>();
            for (const auto& shape : opt.at("shapes")) {
                const auto dims = shape.get<std::vector<std::size_t>>();
                if (dims.size() != 2) {
                    throw CheckpointError("optimizer moment shape must have two dimensions");
                }
                state.m.emplace_back(dims[0], dims[1]);
                state.v.emplace_back(dims[0], dims[1]);
                blob_doubles += 2 * dims[0] * dims[1];
            }
            ck.optimizers.push_back(std::move(state));
        }
    } catch (const json::exception& e) {
        throw CheckpointError(fmt::format("malformed checkpoint header: {}", e.what()));
    }

    if (reader.remaining() != blob_doubles * sizeof(double)) {
        throw CheckpointError(fmt::format("checkpoint body has {} bytes, header describes {}",
                                          reader.remaining(), blob_doubles * sizeof(double)));
    }
    for (Matrix* t : mutable_tensor_table(ck.net)) {
        *t = read_matrix(reader, t->rows(), t->cols(), "tensor");
    }
    for (auto& opt : ck.optimizers) {
        for (auto& m : opt.m) {
            m = read_matrix(reader, m.rows(), m.cols(), "optimizer moment");
        }
        for (auto& v : opt.v) {
            v = read_matrix(reader, v.rows(), v.cols(), "optimizer moment");
        }
    }
    try {
        ck.net.validate();
    } catch (const ShapeError& e) {
        throw CheckpointError(fmt::format("checkpoint rejected: {}", e.what()));
    }
    return ck;
}

} // namespace fftrain
