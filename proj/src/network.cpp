#include "fftrain/network.hpp"

#include "fftrain/error.hpp"

#include <fmt/core.h>

#include <cmath>

namespace fftrain {

namespace {

constexpr double kDirectionEps = 1e-12;

void add_row_vector(Matrix& m, const Matrix& row)
{
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto dst = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            dst[c] += row[c];
        }
    }
}

Matrix he_normal(std::size_t out, std::size_t in, SeededRng& rng)
{
    Matrix w(out, in);
    const double stddev = std::sqrt(2.0 / static_cast<double>(in));
    for (double& v : w.values()) {
        v = stddev * rng.normal();
    }
    return w;
}

} // namespace

Architecture Network::architecture() const
{
    Architecture arch;
    arch.input_dim = input_dim;
    arch.class_count = class_count;
    arch.interlayer_norm = interlayer_norm;
    arch.hidden.clear();
    for (const auto& layer : hidden) {
        arch.hidden.push_back(layer.out_dim());
    }
    return arch;
}

void Network::validate() const
{
    if (class_count < 2) {
        throw ShapeError(fmt::format("network needs at least 2 classes, got {}", class_count));
    }
    if (hidden.empty()) {
        throw ShapeError("network needs at least one hidden layer");
    }
    std::size_t fan_in = input_dim;
    for (std::size_t k = 0; k < hidden.size(); ++k) {
        const auto& layer = hidden[k];
        const std::size_t out = layer.out_dim();
        if (layer.in_dim() != fan_in || out == 0) {
            throw ShapeError(fmt::format("hidden layer {} is {}, expected {} inputs", k,
                                         layer.weights.shape_string(), fan_in));
        }
        for (const Matrix* v : {&layer.bias, &layer.bn_gamma, &layer.bn_beta, &layer.bn_running_mean,
                                &layer.bn_running_var}) {
            if (v->rows() != 1 || v->cols() != out) {
                throw ShapeError(fmt::format("hidden layer {} has a vector of shape {}, expected 1x{}", k,
                                             v->shape_string(), out));
            }
        }
        for (const double v : layer.bn_running_var.values()) {
            if (!(v >= 0.0)) {
                throw ShapeError(fmt::format("hidden layer {} has a negative running variance", k));
            }
        }
        fan_in = out;
    }
    if (head.weights.rows() != class_count || head.weights.cols() != fan_in || head.bias.rows() != 1
        || head.bias.cols() != class_count) {
        throw ShapeError(fmt::format("head is {}, expected {}x{}", head.weights.shape_string(), class_count, fan_in));
    }
}

Network init_network(const Architecture& arch, std::uint64_t seed)
{
    if (arch.class_count < 2) {
        throw ConfigError(fmt::format("network needs at least 2 classes, got {}", arch.class_count));
    }
    if (arch.hidden.empty() || arch.input_dim == 0) {
        throw ConfigError("network needs an input and at least one hidden layer");
    }
    Network net;
    net.input_dim = arch.input_dim;
    net.class_count = arch.class_count;
    net.interlayer_norm = arch.interlayer_norm;

    SeededRng rng = SeededRng::stream(seed, "init");
    std::size_t fan_in = arch.input_dim;
    for (const std::size_t width : arch.hidden) {
        if (width == 0) {
            throw ConfigError("hidden layer width must be positive");
        }
        DenseLayer layer;
        layer.weights = he_normal(width, fan_in, rng);
        layer.bias = Matrix(1, width);
        layer.bn_gamma = Matrix(1, width, 1.0);
        layer.bn_beta = Matrix(1, width);
        layer.bn_running_mean = Matrix(1, width);
        layer.bn_running_var = Matrix(1, width, 1.0);
        net.hidden.push_back(std::move(layer));
        fan_in = width;
    }
    net.head.weights = he_normal(arch.class_count, fan_in, rng);
    net.head.bias = Matrix(1, arch.class_count);
    net.validate();
    return net;
}

Network init_network(std::size_t class_count, std::uint64_t seed)
{
    Architecture arch;
    arch.class_count = class_count;
    return init_network(arch, seed);
}

DenseCache dense_forward(const DenseLayer& layer, const Matrix& input, Mode mode)
{
    if (input.cols() != layer.in_dim()) {
        throw ShapeError(fmt::format("dense layer expects width {}, got batch {}", layer.in_dim(), input.shape_string()));
    }
    const std::size_t batch = input.rows();
    const std::size_t out = layer.out_dim();
    if (mode == Mode::train && batch < 2) {
        throw ShapeError(fmt::format("train-mode batch norm needs at least 2 rows, got {}", batch));
    }

    DenseCache cache;
    cache.input = input;
    cache.pre_bn = matmul_nt(input, layer.weights);
    add_row_vector(cache.pre_bn, layer.bias);

    if (mode == Mode::train) {
        cache.mean = column_sums(cache.pre_bn);
        for (double& m : cache.mean.values()) {
            m /= static_cast<double>(batch);
        }
        cache.var = Matrix(1, out);
        for (std::size_t r = 0; r < batch; ++r) {
            const auto z = cache.pre_bn.row(r);
            for (std::size_t c = 0; c < out; ++c) {
                const double d = z[c] - cache.mean[c];
                cache.var[c] += d * d;
            }
        }
        for (double& v : cache.var.values()) {
            v /= static_cast<double>(batch);
        }
    } else {
        cache.mean = layer.bn_running_mean;
        cache.var = layer.bn_running_var;
    }
    cache.inv_std = Matrix(1, out);
    for (std::size_t c = 0; c < out; ++c) {
        cache.inv_std[c] = 1.0 / std::sqrt(cache.var[c] + DenseLayer::kBnEps);
    }

    cache.normalized = Matrix(batch, out);
    cache.bn_out = Matrix(batch, out);
    cache.output = Matrix(batch, out);
    for (std::size_t r = 0; r < batch; ++r) {
        const auto z = cache.pre_bn.row(r);
        auto xhat = cache.normalized.row(r);
        auto y = cache.bn_out.row(r);
        auto a = cache.output.row(r);
        for (std::size_t c = 0; c < out; ++c) {
            xhat[c] = (z[c] - cache.mean[c]) * cache.inv_std[c];
            y[c] = layer.bn_gamma[c] * xhat[c] + layer.bn_beta[c];
            a[c] = y[c] > 0.0 ? y[c] : 0.0;
        }
    }
    return cache;
}

void update_running_stats(DenseLayer& layer, const DenseCache& cache)
{
    constexpr double keep = DenseLayer::kBnMomentum;
    for (std::size_t c = 0; c < layer.out_dim(); ++c) {
        layer.bn_running_mean[c] = keep * layer.bn_running_mean[c] + (1.0 - keep) * cache.mean[c];
        layer.bn_running_var[c] = keep * layer.bn_running_var[c] + (1.0 - keep) * cache.var[c];
    }
}

namespace {

ForwardCache forward_impl(const Network& net, Network* stats_owner, const Matrix& batch, Mode mode)
{
    if (batch.cols() != net.input_dim) {
        throw ShapeError(fmt::format("network expects input width {}, got batch {}", net.input_dim, batch.shape_string()));
    }
    ForwardCache cache;
    cache.mode = mode;
    cache.hidden.reserve(net.hidden.size());
    for (std::size_t k = 0; k < net.hidden.size(); ++k) {
        if (k == 0) {
            cache.hidden.push_back(dense_forward(net.hidden[k], batch, mode));
        } else if (net.interlayer_norm) {
            cache.hidden.push_back(dense_forward(net.hidden[k], normalize_direction(cache.hidden[k - 1].output), mode));
        } else {
            cache.hidden.push_back(dense_forward(net.hidden[k], cache.hidden[k - 1].output, mode));
        }
        if (stats_owner != nullptr) {
            update_running_stats(stats_owner->hidden[k], cache.hidden[k]);
        }
    }
    cache.logits = matmul_nt(cache.head_input(), net.head.weights);
    add_row_vector(cache.logits, net.head.bias);
    cache.probabilities = softmax_rows(cache.logits);
    return cache;
}

} // namespace

ForwardCache forward(Network& net, const Matrix& batch, Mode mode)
{
    return forward_impl(net, mode == Mode::train ? &net : nullptr, batch, mode);
}

ForwardCache forward_eval(const Network& net, const Matrix& batch)
{
    return forward_impl(net, nullptr, batch, Mode::eval);
}

Matrix normalize_direction(const Matrix& y)
{
    Matrix out(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
        const auto in = y.row(r);
        double sq = 0.0;
        for (const double v : in) {
            sq += v * v;
        }
        const double scale = std::sqrt(sq) + kDirectionEps;
        auto dst = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = in[c] / scale;
        }
    }
    return out;
}

Matrix normalize_direction_backward(const Matrix& input, const Matrix& grad_output)
{
    require_same_shape(input, grad_output, "normalize_direction_backward");
    Matrix grad(input.rows(), input.cols());
    for (std::size_t r = 0; r < input.rows(); ++r) {
        const auto x = input.row(r);
        const auto g = grad_output.row(r);
        double sq = 0.0;
        double dot = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) {
            sq += x[c] * x[c];
            dot += x[c] * g[c];
        }
        const double norm = std::sqrt(sq);
        const double scale = norm + kDirectionEps;
        // d/dx [x / (|x| + eps)] = I / s - x x^T / (s^2 |x|)
        const double radial = norm > 0.0 ? dot / (scale * scale * norm) : 0.0;
        auto dst = grad.row(r);
        for (std::size_t c = 0; c < x.size(); ++c) {
            dst[c] = g[c] / scale - x[c] * radial;
        }
    }
    return grad;
}

LayerGradients dense_backward(const DenseLayer& layer, const DenseCache& cache,
                              const Matrix& grad_output, Matrix* grad_input)
{
    require_same_shape(cache.output, grad_output, "dense_backward");
    const std::size_t batch = cache.output.rows();
    const std::size_t out = layer.out_dim();
    const double inv_batch = 1.0 / static_cast<double>(batch);

    // Through ReLU.
    Matrix d_bn(batch, out);
    for (std::size_t i = 0; i < d_bn.size(); ++i) {
        d_bn[i] = cache.bn_out[i] > 0.0 ? grad_output[i] : 0.0;
    }

    LayerGradients grads;
    grads.gamma = Matrix(1, out);
    grads.beta = column_sums(d_bn);
    Matrix sum_dxhat(1, out);
    Matrix sum_dxhat_xhat(1, out);
    Matrix d_xhat(batch, out);
    for (std::size_t r = 0; r < batch; ++r) {
        const auto g = d_bn.row(r);
        const auto xhat = cache.normalized.row(r);
        auto dx = d_xhat.row(r);
        for (std::size_t c = 0; c < out; ++c) {
            grads.gamma[c] += g[c] * xhat[c];
            dx[c] = g[c] * layer.bn_gamma[c];
            sum_dxhat[c] += dx[c];
            sum_dxhat_xhat[c] += dx[c] * xhat[c];
        }
    }

    // Through batch normalization with batch statistics.
    Matrix d_pre(batch, out);
    for (std::size_t r = 0; r < batch; ++r) {
        const auto dx = d_xhat.row(r);
        const auto xhat = cache.normalized.row(r);
        auto dz = d_pre.row(r);
        for (std::size_t c = 0; c < out; ++c) {
            dz[c] = cache.inv_std[c] * inv_batch
                  * (static_cast<double>(batch) * dx[c] - sum_dxhat[c] - xhat[c] * sum_dxhat_xhat[c]);
        }
    }

    grads.weights = matmul_tn(d_pre, cache.input);
    grads.bias = column_sums(d_pre);
    if (grad_input != nullptr) {
        *grad_input = matmul(d_pre, layer.weights);
    }
    return grads;
}

std::vector<Matrix*> layer_parameters(DenseLayer& layer)
{
    return {&layer.weights, &layer.bias, &layer.bn_gamma, &layer.bn_beta};
}

std::vector<const Matrix*> gradient_list(const LayerGradients& grads)
{
    return {&grads.weights, &grads.bias, &grads.gamma, &grads.beta};
}

Matrix column_sums(const Matrix& m)
{
    Matrix sums(1, m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            sums[c] += row[c];
        }
    }
    return sums;
}

std::vector<std::size_t> argmax_rows(const Matrix& m)
{
    std::vector<std::size_t> out(m.rows(), 0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t c = 1; c < row.size(); ++c) {
            if (row[c] > row[out[r]]) {
                out[r] = c;
            }
        }
    }
    return out;
}

} // namespace fftrain
