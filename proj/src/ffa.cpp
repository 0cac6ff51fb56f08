#include "fftrain/ffa.hpp"

#include "fftrain/error.hpp"
#include "fftrain/log.hpp"
#include "fftrain/metrics.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace fftrain {

void FfaConfig::validate() const
{
    if (epochs < 1) {
        throw ConfigError(fmt::format("ffa epochs must be at least 1, got {}", epochs));
    }
    if (batch_size < 2) {
        throw ConfigError(fmt::format("ffa batch_size must be at least 2, got {}", batch_size));
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw ConfigError(fmt::format("ffa learning rate must be positive, got {}", lr));
    }
    for (const double t : theta) {
        if (!(t > 0.0) || !std::isfinite(t)) {
            throw ConfigError(fmt::format("ffa theta must be positive and finite, got {}", t));
        }
    }
}

double FfaConfig::theta_for(const Network& net, std::size_t k) const
{
    if (theta.empty()) {
        return static_cast<double>(net.hidden.at(k).out_dim());
    }
    if (theta.size() != net.hidden.size()) {
        throw ConfigError(fmt::format("ffa theta lists {} thresholds for {} hidden layers", theta.size(),
                                      net.hidden.size()));
    }
    return theta[k];
}

std::vector<double> layer_goodness(const Matrix& y)
{
    std::vector<double> g(y.rows(), 0.0);
    for (std::size_t r = 0; r < y.rows(); ++r) {
        for (const double v : y.row(r)) {
            g[r] += v * v;
        }
    }
    return g;
}

double positive_probability(double g, double theta)
{
    return logistic(g - theta);
}

double ffa_local_loss(std::span<const double> g_pos, std::span<const double> g_neg, double theta)
{
    if (g_pos.size() != g_neg.size()) {
        throw ShapeError(fmt::format("ffa_local_loss: {} positive vs {} negative rows", g_pos.size(), g_neg.size()));
    }
    if (g_pos.empty()) {
        throw ShapeError("ffa_local_loss of an empty batch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < g_pos.size(); ++i) {
        total += softplus(theta - g_pos[i]) + softplus(g_neg[i] - theta);
    }
    return total / static_cast<double>(g_pos.size());
}

namespace {

double mean_of(std::span<const double> v)
{
    double total = 0.0;
    for (const double x : v) {
        total += x;
    }
    return v.empty() ? 0.0 : total / static_cast<double>(v.size());
}

} // namespace

LocalObjective ffa_local_objective(const DenseLayer& layer, const Matrix& x_pos, const Matrix& x_neg, double theta,
                                   bool with_gradients)
{
    require_same_shape(x_pos, x_neg, "ffa_local_objective");
    if (x_pos.cols() != layer.in_dim()) {
        throw ShapeError(fmt::format("layer expects width {}, got batch {}", layer.in_dim(), x_pos.shape_string()));
    }
    const std::size_t batch = x_pos.rows();
    LocalObjective obj;
    obj.cache = dense_forward(layer, vstack(x_pos, x_neg), Mode::train);
    const std::vector<double> g = layer_goodness(obj.cache.output);
    obj.g_pos.assign(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(batch));
    obj.g_neg.assign(g.begin() + static_cast<std::ptrdiff_t>(batch), g.end());
    obj.loss = ffa_local_loss(obj.g_pos, obj.g_neg, theta);
    if (!with_gradients) {
        return obj;
    }

    // dL/dg = -logistic(theta - g) / B for positives, logistic(g - theta) / B for negatives;
    // dg/dy = 2y.
    const double inv_batch = 1.0 / static_cast<double>(batch);
    Matrix d_out(2 * batch, layer.out_dim());
    for (std::size_t r = 0; r < 2 * batch; ++r) {
        const double coef = r < batch ? -logistic(theta - g[r]) * inv_batch : logistic(g[r] - theta) * inv_batch;
        const auto y = obj.cache.output.row(r);
        auto d = d_out.row(r);
        for (std::size_t c = 0; c < y.size(); ++c) {
            d[c] = 2.0 * coef * y[c];
        }
    }
    obj.gradients = dense_backward(layer, obj.cache, d_out, nullptr);
    return obj;
}

LayerStep ffa_layer_step(DenseLayer& layer, const Matrix& x_pos, const Matrix& x_neg, double theta, AdamState& adam)
{
    LocalObjective obj = ffa_local_objective(layer, x_pos, x_neg, theta, true);
    update_running_stats(layer, obj.cache);
    adam_step(layer_parameters(layer), gradient_list(obj.gradients), adam);

    const std::size_t batch = x_pos.rows();
    LayerStep step;
    step.record.g_pos_mean = mean_of(obj.g_pos);
    step.record.g_neg_mean = mean_of(obj.g_neg);
    step.record.local_loss = obj.loss;
    step.pos_output = slice_rows(obj.cache.output, 0, batch);
    step.neg_output = slice_rows(obj.cache.output, batch, 2 * batch);
    return step;
}

namespace {

// Eval-mode input of hidden layer k (what layer k sees during inference).
Matrix layer_input_eval(const Network& net, const Matrix& x, std::size_t k)
{
    Matrix h = x;
    for (std::size_t j = 0; j < k; ++j) {
        h = dense_forward(net.hidden[j], h, Mode::eval).output;
        if (net.interlayer_norm) {
            h = normalize_direction(h);
        }
    }
    return h;
}

std::vector<std::size_t> layers_for_prediction(const Network& net, GoodnessLayers layers)
{
    std::vector<std::size_t> chosen;
    const std::size_t first = layers == GoodnessLayers::skip_first ? 1 : 0;
    for (std::size_t k = first; k < net.hidden.size(); ++k) {
        chosen.push_back(k);
    }
    if (chosen.empty()) {
        throw ConfigError("goodness_layers_for_prediction selects no hidden layer");
    }
    return chosen;
}

// Eval-mode goodness of every hidden layer for each row of x.
std::vector<std::vector<double>> goodness_per_layer(const Network& net, const Matrix& x)
{
    const ForwardCache cache = forward_eval(net, x);
    std::vector<std::vector<double>> g;
    g.reserve(cache.hidden.size());
    for (const auto& layer : cache.hidden) {
        g.push_back(layer_goodness(layer.output));
    }
    return g;
}

struct OverlayPair {
    Matrix positive;
    Matrix negative;
};

OverlayPair overlay_pair(std::span<const Sample> samples, std::span<const std::size_t> indices, std::size_t n,
                         SeededRng& rng)
{
    OverlayPair pair{stack_pixels(samples, indices), Matrix()};
    std::vector<std::size_t> labels;
    std::vector<std::size_t> wrong;
    labels.reserve(indices.size());
    wrong.reserve(indices.size());
    for (const std::size_t i : indices) {
        labels.push_back(samples[i].label);
        wrong.push_back(draw_wrong_label(samples[i].label, n, rng));
    }
    pair.negative = pair.positive;
    overlay_rows(pair.positive, labels, n);
    overlay_rows(pair.negative, wrong, n);
    return pair;
}

void require_finite_layer(DenseLayer& layer, std::size_t k, int epoch)
{
    for (const Matrix* p : layer_parameters(layer)) {
        if (!all_finite(*p)) {
            throw NumericError(fmt::format("ffa training diverged at epoch {}: non-finite parameters in layer {}",
                                           epoch, k + 1));
        }
    }
}

} // namespace

Matrix goodness_scores(const Network& net, const Matrix& x, std::size_t n, GoodnessLayers layers)
{
    const auto chosen = layers_for_prediction(net, layers);
    Matrix scores(x.rows(), n);
    for (std::size_t c = 0; c < n; ++c) {
        Matrix probe = x;
        const std::vector<std::size_t> labels(x.rows(), c);
        overlay_rows(probe, labels, n);
        const auto g = goodness_per_layer(net, probe);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            double total = 0.0;
            for (const std::size_t k : chosen) {
                total += g[k][r];
            }
            scores(r, c) = total;
        }
    }
    return scores;
}

Matrix goodness_scores(const Network& net, std::span<const Sample> samples, std::size_t n, GoodnessLayers layers,
                       std::size_t chunk)
{
    Matrix scores(samples.size(), n);
    for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
        const std::size_t end = std::min(samples.size(), begin + chunk);
        const Matrix part = goodness_scores(net, stack_pixels(samples.subspan(begin, end - begin)), n, layers);
        std::copy(part.values().begin(), part.values().end(),
                  scores.values().begin() + static_cast<std::ptrdiff_t>(begin * n));
    }
    return scores;
}

std::pair<std::size_t, std::vector<double>> predict_goodness(const Network& net, const Matrix& x, std::size_t n,
                                                             const FfaConfig& cfg)
{
    if (x.rows() != 1) {
        throw ShapeError(fmt::format("predict_goodness takes one sample, got {}", x.shape_string()));
    }
    const Matrix scores = goodness_scores(net, x, n, cfg.goodness_layers_for_prediction);
    const auto row = scores.row(0);
    return {argmax_rows(scores)[0], std::vector<double>(row.begin(), row.end())};
}

SplitMetrics evaluate_goodness(const Network& net, std::span<const Sample> samples, const FfaConfig& cfg)
{
    SplitMetrics metrics;
    if (samples.empty()) {
        return metrics;
    }
    const std::size_t n = net.class_count;
    Matrix scores = goodness_scores(net, samples, n, cfg.goodness_layers_for_prediction);
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        auto row = scores.row(r);
        double total = 0.0;
        for (const double v : row) {
            total += v;
        }
        for (double& v : row) {
            v = total > 0.0 ? v / total : 1.0 / static_cast<double>(n);
        }
    }
    const EvalReport report = evaluate_scores(scores, collect_labels(samples));
    metrics.error_rate = report.error_rate_percent;
    metrics.roc_auc = report.roc_auc;
    return metrics;
}

std::vector<GoodnessRecord> goodness_separation(const Network& net, std::span<const Sample> samples,
                                                const FfaConfig& cfg, std::uint64_t negative_seed)
{
    constexpr std::size_t chunk = 128;
    const std::size_t layers = net.hidden.size();
    const std::size_t n = net.class_count;
    std::vector<std::vector<double>> g_pos(layers);
    std::vector<std::vector<double>> g_neg(layers);
    SeededRng rng = SeededRng::stream(negative_seed, "ffa/eval-negatives");
    std::vector<std::size_t> indices(samples.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        indices[i] = i;
    }
    for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
        const std::size_t end = std::min(samples.size(), begin + chunk);
        const auto idx = std::span<const std::size_t>(indices).subspan(begin, end - begin);
        const OverlayPair pair = overlay_pair(samples, idx, n, rng);
        const auto gp = goodness_per_layer(net, pair.positive);
        const auto gn = goodness_per_layer(net, pair.negative);
        for (std::size_t k = 0; k < layers; ++k) {
            g_pos[k].insert(g_pos[k].end(), gp[k].begin(), gp[k].end());
            g_neg[k].insert(g_neg[k].end(), gn[k].begin(), gn[k].end());
        }
    }
    std::vector<GoodnessRecord> records(layers);
    if (samples.empty()) {
        return records;
    }
    for (std::size_t k = 0; k < layers; ++k) {
        records[k].g_pos_mean = mean_of(g_pos[k]);
        records[k].g_neg_mean = mean_of(g_neg[k]);
        records[k].local_loss = ffa_local_loss(g_pos[k], g_neg[k], cfg.theta_for(net, k));
    }
    return records;
}

RunHistory train_ffa(Network& net, const DatasetSplit& data, const FfaConfig& cfg, const TrainingResume* resume,
                     TrainingResume* final_state)
{
    cfg.validate();
    net.validate();
    if (net.class_count < 2 || data.class_count != net.class_count) {
        throw ShapeError(fmt::format("dataset has {} classes, network head has {}", data.class_count, net.class_count));
    }
    if (data.train.empty()) {
        throw DataError("training split is empty");
    }
    if (data.input_dim() != net.input_dim) {
        throw ShapeError(fmt::format("samples have width {}, network expects {}", data.input_dim(), net.input_dim));
    }
    net.interlayer_norm = cfg.inter_layer_normalization == InterLayerNorm::l2_direction;
    const std::size_t layers = net.hidden.size();
    const std::size_t n = net.class_count;
    std::vector<double> thetas(layers);
    for (std::size_t k = 0; k < layers; ++k) {
        thetas[k] = cfg.theta_for(net, k);
    }
    (void)layers_for_prediction(net, cfg.goodness_layers_for_prediction);

    std::vector<AdamState> adams;
    for (auto& layer : net.hidden) {
        adams.push_back(AdamState::for_parameters(layer_parameters(layer), cfg.lr));
    }
    int start_epoch = 0;
    double best = std::numeric_limits<double>::infinity();
    if (resume != nullptr) {
        if (resume->optimizers.size() != layers) {
            throw CheckpointError(fmt::format("resume state holds {} optimizers for {} hidden layers",
                                              resume->optimizers.size(), layers));
        }
        adams = resume->optimizers;
        start_epoch = resume->completed_epochs;
        best = resume->best_monitor;
    }
    if (cfg.monitor == Monitor::test_error && !cfg.checkpoint.path.empty()) {
        log::warn("best checkpoint selected by test error: the reported test metrics are then biased "
                  "by model selection on the test split");
    }

    const bool greedy = cfg.schedule == FfaSchedule::greedy;
    const int total_epochs = greedy ? cfg.epochs * static_cast<int>(layers) : cfg.epochs;

    RunHistory history;
    if (resume != nullptr) {
        history = resume->history;
    }
    history.stage = "ffa";
    for (int epoch = start_epoch + 1; epoch <= total_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        const auto epoch_key = static_cast<std::uint64_t>(epoch);
        SeededRng shuffle_rng = SeededRng::stream(cfg.seed, "ffa/shuffle", epoch_key);
        SeededRng negative_rng = SeededRng::stream(cfg.seed, "ffa/negatives", epoch_key);
        const auto batches = make_batches(data.train.size(), cfg.batch_size, &shuffle_rng);
        if (batches.empty()) {
            throw DataError("training split needs at least two samples");
        }

        // Layers stepped this epoch.
        std::size_t first = 0;
        std::size_t last = layers;
        if (greedy) {
            first = static_cast<std::size_t>((epoch - 1) / cfg.epochs);
            last = first + 1;
        }

        std::vector<GoodnessRecord> sums(layers);
        double loss_sum = 0.0;
        for (const auto& idx : batches) {
            OverlayPair pair = overlay_pair(data.train, idx, n, negative_rng);
            Matrix in_pos;
            Matrix in_neg;
            if (first == 0) {
                in_pos = std::move(pair.positive);
                in_neg = std::move(pair.negative);
            } else {
                in_pos = layer_input_eval(net, pair.positive, first);
                in_neg = layer_input_eval(net, pair.negative, first);
            }
            double batch_loss = 0.0;
            for (std::size_t k = first; k < last; ++k) {
                LayerStep step = ffa_layer_step(net.hidden[k], in_pos, in_neg, thetas[k], adams[k]);
                sums[k].g_pos_mean += step.record.g_pos_mean;
                sums[k].g_neg_mean += step.record.g_neg_mean;
                sums[k].local_loss += step.record.local_loss;
                batch_loss += step.record.local_loss;
                if (k + 1 < last) {
                    in_pos = net.interlayer_norm ? normalize_direction(step.pos_output) : std::move(step.pos_output);
                    in_neg = net.interlayer_norm ? normalize_direction(step.neg_output) : std::move(step.neg_output);
                }
            }
            batch_loss /= static_cast<double>(last - first);
            if (!std::isfinite(batch_loss)) {
                throw NumericError(fmt::format("ffa training diverged at epoch {}: local loss is {}", epoch, batch_loss));
            }
            loss_sum += batch_loss;
        }
        for (std::size_t k = first; k < last; ++k) {
            require_finite_layer(net.hidden[k], k, epoch);
        }

        const double batch_count = static_cast<double>(batches.size());
        EpochRecord record;
        record.epoch = epoch;
        for (std::size_t k = first; k < last; ++k) {
            record.layers.push_back(LayerTrace{k + 1, sums[k].g_pos_mean / batch_count,
                                               sums[k].g_neg_mean / batch_count, sums[k].local_loss / batch_count});
        }
        record.train = evaluate_goodness(net, data.train, cfg);
        record.train.loss = loss_sum / batch_count;
        record.test = evaluate_goodness(net, data.test, cfg);
        if (!data.test.empty()) {
            const auto separation = goodness_separation(net, data.test, cfg, cfg.seed);
            double total = 0.0;
            for (std::size_t k = first; k < last; ++k) {
                total += separation[k].local_loss;
            }
            record.test.loss = total / static_cast<double>(last - first);
        }
        record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        log::info("ffa epoch {}: train loss {:.6f} err {:.2f}% | test err {:.2f}% auc {:.4f}", epoch,
                  record.train.loss, record.train.error_rate, record.test.error_rate, record.test.roc_auc);

        const double value = monitor_value(cfg.monitor, record);
        history.epochs.push_back(std::move(record));
        if (std::isfinite(value) && value < best) {
            best = value;
            if (!cfg.checkpoint.path.empty()) {
                save_training_checkpoint(cfg.checkpoint, net, data.class_names, adams, history, cfg.monitor,
                                         best);
            }
        }
    }
    if (final_state != nullptr) {
        final_state->history = history;
        final_state->optimizers = adams;
        final_state->completed_epochs = std::max(start_epoch, total_epochs);
        final_state->best_monitor = best;
    }
    return history;
}

} // namespace fftrain
