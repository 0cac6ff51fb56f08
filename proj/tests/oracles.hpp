#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance report.

#include "support.hpp"

#include "fftrain/ffa.hpp"
#include "fftrain/train_bp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace testing {

struct GradientCheck {
    double max_relative = 0.0;
    double max_absolute = 0.0;
    std::size_t components = 0;
};

inline constexpr double kFdStep = 1e-6;

using Real = long double;
using RealRows = std::vector<std::vector<Real>>;

inline RealRows to_real(const fftrain::Matrix& m)
{
    RealRows out(m.rows(), std::vector<Real>(m.cols()));
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out[r][c] = m(r, c);
        }
    }
    return out;
}

// Extended-precision train-mode block: dense, batch-statistics BN (biased
// variance), ReLU.
inline RealRows reference_dense_train(const fftrain::DenseLayer& layer, const RealRows& x)
{
    const std::size_t batch = x.size();
    const std::size_t out = layer.out_dim();
    RealRows z(batch, std::vector<Real>(out));
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t o = 0; o < out; ++o) {
            Real acc = layer.bias[o];
            for (std::size_t i = 0; i < layer.in_dim(); ++i) {
                acc += static_cast<Real>(layer.weights(o, i)) * x[r][i];
            }
            z[r][o] = acc;
        }
    }
    for (std::size_t o = 0; o < out; ++o) {
        Real mean = 0;
        for (std::size_t r = 0; r < batch; ++r) {
            mean += z[r][o];
        }
        mean /= static_cast<Real>(batch);
        Real var = 0;
        for (std::size_t r = 0; r < batch; ++r) {
            var += (z[r][o] - mean) * (z[r][o] - mean);
        }
        var /= static_cast<Real>(batch);
        const Real inv = 1 / std::sqrt(var + static_cast<Real>(fftrain::DenseLayer::kBnEps));
        for (std::size_t r = 0; r < batch; ++r) {
            const Real bn = layer.bn_gamma[o] * (z[r][o] - mean) * inv + layer.bn_beta[o];
            z[r][o] = bn > 0 ? bn : 0;
        }
    }
    return z;
}

inline Real reference_softplus(Real x)
{
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Mean squared error of the softmax output, train mode, extended precision.
inline Real reference_bp_loss(const fftrain::Network& net, const fftrain::Matrix& x, const fftrain::Matrix& onehot)
{
    RealRows a = to_real(x);
    for (std::size_t k = 0; k < net.hidden.size(); ++k) {
        if (k > 0 && net.interlayer_norm) {
            for (auto& row : a) {
                Real norm = 0;
                for (Real v : row) {
                    norm += v * v;
                }
                norm = std::sqrt(norm) + static_cast<Real>(1e-12);
                for (Real& v : row) {
                    v /= norm;
                }
            }
        }
        a = reference_dense_train(net.hidden[k], a);
    }
    Real total = 0;
    for (std::size_t r = 0; r < a.size(); ++r) {
        std::vector<Real> logits(net.class_count);
        Real top = -INFINITY;
        for (std::size_t c = 0; c < net.class_count; ++c) {
            Real z = net.head.bias[c];
            for (std::size_t i = 0; i < a[r].size(); ++i) {
                z += static_cast<Real>(net.head.weights(c, i)) * a[r][i];
            }
            logits[c] = z;
            top = std::max(top, z);
        }
        Real sum = 0;
        for (Real& z : logits) {
            z = std::exp(z - top);
            sum += z;
        }
        for (std::size_t c = 0; c < net.class_count; ++c) {
            const Real d = logits[c] / sum - static_cast<Real>(onehot(r, c));
            total += d * d;
        }
    }
    return total / static_cast<Real>(a.size() * net.class_count);
}

// Local forward-forward loss of one layer; positives and negatives share
// the batch statistics.
inline Real reference_ffa_loss(const fftrain::DenseLayer& layer, const fftrain::Matrix& x_pos,
                               const fftrain::Matrix& x_neg, double theta)
{
    RealRows rows = to_real(x_pos);
    const RealRows neg = to_real(x_neg);
    rows.insert(rows.end(), neg.begin(), neg.end());
    const RealRows y = reference_dense_train(layer, rows);
    const std::size_t batch = x_pos.rows();
    Real total = 0;
    for (std::size_t r = 0; r < y.size(); ++r) {
        Real g = 0;
        for (Real v : y[r]) {
            g += v * v;
        }
        total += r < batch ? reference_softplus(theta - g) : reference_softplus(g - theta);
    }
    return total / static_cast<Real>(batch);
}

// Central differences of `loss` over every entry of `params`, compared with
// `analytic`. The step is taken on the double parameter and the realized
// difference of the two perturbed values is used as the denominator.
inline void compare_with_central_differences(std::span<fftrain::Matrix* const> params,
                                             std::span<const fftrain::Matrix* const> analytic,
                                             const std::function<Real()>& loss, GradientCheck& check)
{
    for (std::size_t i = 0; i < params.size(); ++i) {
        fftrain::Matrix& p = *params[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double keep = p[j];
            const double hi = keep + kFdStep;
            const double lo = keep - kFdStep;
            p[j] = hi;
            const Real up = loss();
            p[j] = lo;
            const Real down = loss();
            p[j] = keep;
            const double numeric = static_cast<double>((up - down) / (static_cast<Real>(hi) - static_cast<Real>(lo)));
            const double a = (*analytic[i])[j];
            check.max_relative = std::max(check.max_relative, relative_error(a, numeric));
            check.max_absolute = std::max(check.max_absolute, std::abs(a - numeric));
            ++check.components;
        }
    }
}

// Toy network 8 -> [5, 4] -> 3 on a batch of 4. Parameters are jittered away
// from their initial values so every BN and bias gradient is exercised.
inline GradientCheck bp_gradient_check(std::uint64_t seed, bool interlayer_norm = false)
{
    using namespace fftrain;
    Network net = init_network(toy_arch(8, {5, 4}, 3, interlayer_norm), seed);
    SeededRng rng = SeededRng::stream(seed, "test/bp-fd");
    const Matrix x = random_matrix(4, 8, rng, 0, 1);
    std::vector<std::size_t> labels(4);
    for (auto& l : labels) {
        l = static_cast<std::size_t>(rng.below(3));
    }
    const Matrix y = one_hot(labels, 3);
    for (auto& layer : net.hidden) {
        for (Matrix* p : layer_parameters(layer)) {
            for (double& v : p->values()) {
                v += 0.3 * (rng.uniform() - 0.5);
            }
        }
    }
    for (double& v : net.head.bias.values()) {
        v = rng.uniform() - 0.5;
    }

    Network scratch = net;
    const ForwardCache cache = forward(scratch, x, Mode::train);
    const Gradients grads = backward(net, cache, y, GradientScope::all);

    GradientCheck check;
    const auto params = network_parameters(net, GradientScope::all);
    const auto analytic = gradient_list(grads, GradientScope::all);
    compare_with_central_differences(params, analytic, [&] { return reference_bp_loss(net, x, y); }, check);
    return check;
}

// Single layer 6 -> 4 on positive and negative batches of 4, local
// forward-forward loss with theta equal to the layer width.
inline GradientCheck ffa_gradient_check(std::uint64_t seed)
{
    using namespace fftrain;
    Network net = init_network(toy_arch(6, {4}, 2), seed);
    DenseLayer& layer = net.hidden[0];
    SeededRng rng = SeededRng::stream(seed, "test/ffa-fd");
    const Matrix x_pos = random_matrix(4, 6, rng, 0, 1);
    const Matrix x_neg = random_matrix(4, 6, rng, 0, 1);
    for (Matrix* p : layer_parameters(layer)) {
        for (double& v : p->values()) {
            v += 0.3 * (rng.uniform() - 0.5);
        }
    }
    const double theta = 4.0;
    const LocalObjective objective = ffa_local_objective(layer, x_pos, x_neg, theta, true);

    GradientCheck check;
    const auto params = layer_parameters(layer);
    const auto analytic = gradient_list(objective.gradients);
    compare_with_central_differences(params, analytic,
                                     [&] { return reference_ffa_loss(layer, x_pos, x_neg, theta); }, check);
    return check;
}

// Eval-mode hidden activations of one input row, layer by layer: dense,
// running-statistics BN, ReLU, with the L2 direction taken between layers
// when the network asks for it.
inline std::vector<std::vector<double>> reference_hidden_eval(const fftrain::Network& net, std::span<const double> row)
{
    std::vector<std::vector<double>> outputs;
    std::vector<double> a(row.begin(), row.end());
    for (std::size_t k = 0; k < net.hidden.size(); ++k) {
        const fftrain::DenseLayer& layer = net.hidden[k];
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
        std::vector<double> out(layer.out_dim());
        for (std::size_t o = 0; o < layer.out_dim(); ++o) {
            double z = layer.bias[o];
            for (std::size_t i = 0; i < layer.in_dim(); ++i) {
                z += layer.weights(o, i) * a[i];
            }
            const double bn = (z - layer.bn_running_mean[o])
                            / std::sqrt(layer.bn_running_var[o] + fftrain::DenseLayer::kBnEps) * layer.bn_gamma[o]
                            + layer.bn_beta[o];
            out[o] = std::max(0.0, bn);
        }
        outputs.push_back(out);
        a = std::move(out);
    }
    return outputs;
}

// Goodness vote scores of one row: overlay each candidate label and sum the
// squared activations of layers `first_layer` onwards.
inline std::vector<double> reference_vote_scores(const fftrain::Network& net, const fftrain::Matrix& x, std::size_t n,
                                                 std::size_t first_layer)
{
    std::vector<double> scores(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        fftrain::Matrix probe = x;
        for (std::size_t i = 0; i < n; ++i) {
            probe[i] = i == c ? 1.0 : 0.0;
        }
        const auto outputs = reference_hidden_eval(net, probe.row(0));
        for (std::size_t k = first_layer; k < outputs.size(); ++k) {
            for (double v : outputs[k]) {
                scores[c] += v * v;
            }
        }
    }
    return scores;
}

// O(P * N) pair counting with half credit for ties.
inline double pairwise_auc(std::span<const double> scores, std::span<const std::size_t> truth)
{
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (truth[i] != 1) {
            continue;
        }
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (truth[j] != 0) {
                continue;
            }
            pairs += 1.0;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    return wins / pairs;
}

// Direct transcription of the error-rate formula on binary counts.
inline double error_rate_formula(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn)
{
    return static_cast<double>(fp + fn) / static_cast<double>(tp + tn + fp + fn) * 100.0;
}

} // namespace testing
