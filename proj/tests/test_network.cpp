#include "support.hpp"

#include "fftrain/checkpoint.hpp"
#include "fftrain/error.hpp"
#include "fftrain/network.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

using namespace fftrain;
using testing::random_matrix;
namespace fs = std::filesystem;

namespace {

// Independent eval-mode forward: dense, running-statistics BN, ReLU per
// hidden layer, then the softmax head, one row and one unit at a time.
Matrix reference_probabilities(const Network& net, const Matrix& x)
{
    Matrix probs(x.rows(), net.class_count);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        std::vector<double> a(x.row(r).begin(), x.row(r).end());
        for (std::size_t k = 0; k < net.hidden.size(); ++k) {
            const DenseLayer& layer = net.hidden[k];
            if (k > 0 && net.interlayer_norm) {
                double norm = 0.0;
                for (double v : a) {
                    norm += v * v;
                }
                norm = std::sqrt(norm) + 1e-12;
                for (double& v : a) {
                    v /= norm;
                }
            }
            std::vector<double> next(layer.out_dim());
            for (std::size_t o = 0; o < layer.out_dim(); ++o) {
                double z = layer.bias[o];
                for (std::size_t i = 0; i < layer.in_dim(); ++i) {
                    z += layer.weights(o, i) * a[i];
                }
                const double bn = (z - layer.bn_running_mean[o]) / std::sqrt(layer.bn_running_var[o] + DenseLayer::kBnEps)
                                * layer.bn_gamma[o] + layer.bn_beta[o];
                next[o] = std::max(0.0, bn);
            }
            a = std::move(next);
        }
        std::vector<double> logits(net.class_count);
        double top = -INFINITY;
        for (std::size_t c = 0; c < net.class_count; ++c) {
            double z = net.head.bias[c];
            for (std::size_t i = 0; i < a.size(); ++i) {
                z += net.head.weights(c, i) * a[i];
            }
            logits[c] = z;
            top = std::max(top, z);
        }
        double total = 0.0;
        for (double& z : logits) {
            z = std::exp(z - top);
            total += z;
        }
        for (std::size_t c = 0; c < net.class_count; ++c) {
            probs(r, c) = logits[c] / total;
        }
    }
    return probs;
}

void perturb_running_stats(Network& net, SeededRng& rng)
{
    for (auto& layer : net.hidden) {
        for (std::size_t o = 0; o < layer.out_dim(); ++o) {
            layer.bn_running_mean[o] = 0.3 * rng.normal();
            layer.bn_running_var[o] = 0.2 + rng.uniform();
            layer.bn_gamma[o] = 0.5 + rng.uniform();
            layer.bn_beta[o] = 0.1 * rng.normal();
            layer.bias[o] = 0.1 * rng.normal();
        }
    }
}

double sample_std(std::span<const double> values)
{
    double mean = 0.0;
    for (double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) {
        var += (v - mean) * (v - mean);
    }
    return std::sqrt(var / static_cast<double>(values.size()));
}

std::vector<char> read_bytes(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes)
{
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("default network shape and He initialization")
{
    const Network net = init_network(3, 42);
    CHECK_NOTHROW(net.validate());
    REQUIRE(net.hidden.size() == 3);
    CHECK(net.input_dim == 12288);
    CHECK(net.hidden[0].weights.rows() == 784);
    CHECK(net.hidden[0].weights.cols() == 12288);
    CHECK(net.hidden[1].weights.rows() == 500);
    CHECK(net.hidden[2].weights.rows() == 500);
    CHECK(net.head.weights.rows() == 3);
    CHECK(net.head.weights.cols() == 500);

    const double expected = std::sqrt(2.0 / 12288.0);
    CHECK(std::abs(sample_std(net.hidden[0].weights.values()) / expected - 1.0) < 0.05);
    CHECK(std::abs(sample_std(net.hidden[1].weights.values()) / std::sqrt(2.0 / 784.0) - 1.0) < 0.05);
    CHECK(std::abs(sample_std(net.head.weights.values()) / std::sqrt(2.0 / 500.0) - 1.0) < 0.05);

    for (const auto& layer : net.hidden) {
        CHECK(layer.bias == Matrix(1, layer.out_dim()));
        CHECK(layer.bn_gamma == Matrix(1, layer.out_dim(), 1.0));
        CHECK(layer.bn_beta == Matrix(1, layer.out_dim()));
        CHECK(layer.bn_running_mean == Matrix(1, layer.out_dim()));
        CHECK(layer.bn_running_var == Matrix(1, layer.out_dim(), 1.0));
    }
    CHECK(net.head.bias == Matrix(1, 3));
}

TEST_CASE("initialization is deterministic per seed")
{
    const auto arch = testing::toy_arch(30, {12, 7}, 4);
    CHECK(testing::networks_bitwise_equal(init_network(arch, 9), init_network(arch, 9)));
    CHECK(!testing::networks_bitwise_equal(init_network(arch, 9), init_network(arch, 10)));
    CHECK_THROWS_AS((void)init_network(1, 0), ConfigError);
}

TEST_CASE("eval forward matches an independent reference")
{
    SeededRng rng(3);
    for (const bool norm : {false, true}) {
        Network net = init_network(testing::toy_arch(11, {9, 6, 5}, 3, norm), 4);
        perturb_running_stats(net, rng);
        const Matrix x = random_matrix(7, 11, rng, 0, 1);
        const ForwardCache cache = forward_eval(net, x);
        CHECK(testing::max_abs_diff(cache.probabilities, reference_probabilities(net, x)) <= 1e-12);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            double sum = 0.0;
            for (double p : cache.probabilities.row(r)) {
                sum += p;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("fresh network gives near-uniform probabilities on fixture-like inputs")
{
    const Network net = init_network(3, 0);
    FixtureOptions options;
    options.samples = 30;
    const std::vector<Sample> samples = prepare_samples(make_fixture(options));
    const Matrix probs = forward_eval(net, stack_pixels(samples)).probabilities;
    for (double p : probs.values()) {
        CHECK(std::abs(p - 1.0 / 3.0) < 0.05);
    }
    // The same holds for the reference forward, so the claim is about the
    // initial parameters rather than the implementation.
    CHECK(testing::max_abs_diff(probs, reference_probabilities(net, stack_pixels(samples))) <= 1e-12);
}

TEST_CASE("eval forward is pure")
{
    SeededRng rng(5);
    Network net = init_network(testing::toy_arch(10, {8, 6}, 3), 1);
    const Network before = net;
    const Matrix x = random_matrix(5, 10, rng, 0, 1);
    const ForwardCache a = forward(net, x, Mode::eval);
    const ForwardCache b = forward(net, x, Mode::eval);
    CHECK(bitwise_equal(a.logits, b.logits));
    CHECK(bitwise_equal(a.probabilities, b.probabilities));
    for (std::size_t k = 0; k < a.hidden.size(); ++k) {
        CHECK(bitwise_equal(a.hidden[k].output, b.hidden[k].output));
        CHECK(bitwise_equal(a.hidden[k].normalized, b.hidden[k].normalized));
    }
    CHECK(testing::networks_bitwise_equal(net, before));
    CHECK(bitwise_equal(forward_eval(net, x).probabilities, a.probabilities));

    // Duplicated rows come out identical.
    const Matrix twice = vstack(x, x);
    const Matrix probs = forward_eval(net, twice).probabilities;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(probs(r, c) == probs(r + x.rows(), c));
        }
    }
}

TEST_CASE("train-mode batch norm standardizes each column")
{
    SeededRng rng(6);
    Network net = init_network(testing::toy_arch(12, {9}, 3), 2);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t batch = 2 + rng.below(30);
        const Matrix x = random_matrix(batch, 12, rng, -50, 50);
        const DenseCache cache = dense_forward(net.hidden[0], x, Mode::train);
        for (std::size_t o = 0; o < 9; ++o) {
            double mean = 0.0;
            double pre_mean = 0.0;
            for (std::size_t r = 0; r < batch; ++r) {
                mean += cache.bn_out(r, o);
                pre_mean += cache.pre_bn(r, o);
            }
            mean /= static_cast<double>(batch);
            pre_mean /= static_cast<double>(batch);
            double var = 0.0;
            double pre_var = 0.0;
            for (std::size_t r = 0; r < batch; ++r) {
                var += (cache.bn_out(r, o) - mean) * (cache.bn_out(r, o) - mean);
                pre_var += (cache.pre_bn(r, o) - pre_mean) * (cache.pre_bn(r, o) - pre_mean);
            }
            var /= static_cast<double>(batch);
            pre_var /= static_cast<double>(batch);
            CHECK(std::abs(mean) < 1e-9);
            // Exactly var / (var + eps); within 1e-6 of 1 once var >> eps.
            CHECK(std::abs(var - pre_var / (pre_var + DenseLayer::kBnEps)) < 1e-12);
            REQUIRE(pre_var > 10.0);
            CHECK(std::abs(var - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("train mode updates running statistics only")
{
    SeededRng rng(7);
    Network net = init_network(testing::toy_arch(6, {4}, 2), 3);
    const Matrix weights = net.hidden[0].weights;
    const Matrix x = random_matrix(5, 6, rng);
    const ForwardCache cache = forward(net, x, Mode::train);
    const DenseCache& d = cache.hidden[0];
    for (std::size_t o = 0; o < 4; ++o) {
        CHECK(std::abs(net.hidden[0].bn_running_mean[o] - 0.1 * d.mean[o]) <= 1e-15);
        CHECK(std::abs(net.hidden[0].bn_running_var[o] - (0.9 + 0.1 * d.var[o])) <= 1e-15);
        CHECK(net.hidden[0].bn_running_var[o] >= 0.0);
    }
    CHECK(bitwise_equal(net.hidden[0].weights, weights));
}

TEST_CASE("forward rejects bad batches")
{
    Network net = init_network(testing::toy_arch(6, {4}, 2), 3);
    CHECK_THROWS_AS((void)forward_eval(net, Matrix(2, 5)), ShapeError);
    CHECK_THROWS_AS((void)forward(net, Matrix(1, 6), Mode::train), ShapeError);
    CHECK_NOTHROW((void)forward(net, Matrix(1, 6), Mode::eval));
}

TEST_CASE("normalize_direction")
{
    const Matrix out = normalize_direction(Matrix{{3, 4}, {0, 0}});
    CHECK(std::abs(out(0, 0) - 0.6) <= 1e-12);
    CHECK(std::abs(out(0, 1) - 0.8) <= 1e-12);
    CHECK(out(1, 0) == 0.0);
    CHECK(out(1, 1) == 0.0);

    SeededRng rng(8);
    const Matrix y = random_matrix(20, 9, rng, 0, 5);
    const Matrix n = normalize_direction(y);
    for (std::size_t r = 0; r < 20; ++r) {
        double norm = 0.0;
        for (double v : n.row(r)) {
            norm += v * v;
        }
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
    }
}

TEST_CASE("normalize_direction backward matches central differences")
{
    SeededRng rng(9);
    Matrix y = random_matrix(3, 5, rng, -1, 1);
    const Matrix weights = random_matrix(3, 5, rng);
    const auto objective = [&](const Matrix& in) {
        const Matrix out = normalize_direction(in);
        double total = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            total += weights[i] * out[i];
        }
        return total;
    };
    const Matrix analytic = normalize_direction_backward(y, weights);
    const double h = 1e-6;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double keep = y[i];
        y[i] = keep + h;
        const double up = objective(y);
        y[i] = keep - h;
        const double down = objective(y);
        y[i] = keep;
        CHECK(testing::relative_error(analytic[i], (up - down) / (2 * h)) < 1e-5);
    }
}

TEST_CASE("checkpoint round trip is bitwise")
{
    testing::ScratchDir dir("ckpt");
    SeededRng rng(10);
    Checkpoint ck;
    ck.net = init_network(testing::toy_arch(14, {8, 5}, 3, true), 11);
    perturb_running_stats(ck.net, rng);
    ck.class_names = {"a", "b", "c"};
    ck.epoch = 17;
    ck.meta = {{"stage", "bp"}, {"note", "x"}};
    std::vector<Matrix*> params{&ck.net.head.weights, &ck.net.head.bias};
    AdamState adam = AdamState::for_parameters(params);
    adam.t = 5;
    for (auto& m : adam.m) {
        m = random_matrix(m.rows(), m.cols(), rng);
    }
    for (auto& v : adam.v) {
        v = random_matrix(v.rows(), v.cols(), rng, 0, 1);
    }
    ck.optimizers.push_back(adam);

    save_checkpoint(ck, dir / "a.ckpt");
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    CHECK(testing::networks_bitwise_equal(back.net, ck.net));
    CHECK(back.net.interlayer_norm);
    CHECK(back.class_names == ck.class_names);
    CHECK(back.epoch == 17);
    CHECK(back.meta == ck.meta);
    REQUIRE(back.optimizers.size() == 1);
    CHECK(back.optimizers[0].t == 5);
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
        CHECK(bitwise_equal(back.optimizers[0].m[i], adam.m[i]));
        CHECK(bitwise_equal(back.optimizers[0].v[i], adam.v[i]));
    }

    const Matrix probe = random_matrix(6, 14, rng, 0, 1);
    CHECK(bitwise_equal(forward_eval(back.net, probe).probabilities, forward_eval(ck.net, probe).probabilities));

    const auto bytes = read_bytes(dir / "a.ckpt");
    REQUIRE(bytes.size() > 20);
    CHECK(std::memcmp(bytes.data(), "FFSLCKPT", 8) == 0);

    // Saving the loaded checkpoint reproduces the file exactly.
    save_checkpoint(back, dir / "b.ckpt");
    CHECK(read_bytes(dir / "b.ckpt") == bytes);
}

TEST_CASE("damaged checkpoints are rejected")
{
    testing::ScratchDir dir("ckpt-bad");
    Checkpoint ck;
    ck.net = init_network(testing::toy_arch(6, {4}, 2), 1);
    ck.class_names = {"a", "b"};
    save_checkpoint(ck, dir / "good.ckpt");
    const auto good = read_bytes(dir / "good.ckpt");

    auto expect_rejected = [&](std::vector<char> bytes) {
        write_bytes(dir / "bad.ckpt", bytes);
        CHECK_THROWS_AS((void)load_checkpoint(dir / "bad.ckpt"), CheckpointError);
    };

    auto bad_magic = good;
    bad_magic[0] = 'X';
    expect_rejected(bad_magic);

    auto bad_version = good;
    bad_version[8] = 9;
    expect_rejected(bad_version);

    expect_rejected(std::vector<char>(good.begin(), good.end() - 8));
    expect_rejected(std::vector<char>(good.begin(), good.begin() + 30));
    expect_rejected(std::vector<char>(good.begin(), good.begin() + 4));

    auto extra = good;
    extra.insert(extra.end(), 8, '\0');
    expect_rejected(extra);

    // A header whose dimensions disagree with the blob: claim a wider layer.
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, good.data() + 12, 8);
    std::string header(good.data() + 20, header_len);
    const auto pos = header.find("\"hidden\":[4]");
    REQUIRE(pos != std::string::npos);
    header.replace(pos, 12, "\"hidden\":[5]");
    auto relabeled = good;
    std::copy(header.begin(), header.end(), relabeled.begin() + 20);
    expect_rejected(relabeled);

    CHECK_THROWS_AS((void)load_checkpoint(dir / "missing.ckpt"), CheckpointError);
    CHECK_NOTHROW((void)load_checkpoint(dir / "good.ckpt"));
}
