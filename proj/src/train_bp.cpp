#include "fftrain/train_bp.hpp"

#include "fftrain/error.hpp"
#include "fftrain/log.hpp"
#include "fftrain/metrics.hpp"

#include <fmt/core.h>

#include <chrono>
#include <algorithm>
#include <cmath>

namespace fftrain {

void TrainConfig::validate() const
{
    if (epochs < 1) {
        throw ConfigError(fmt::format("epochs must be at least 1, got {}", epochs));
    }
    if (batch_size < 2) {
        throw ConfigError(fmt::format("batch_size must be at least 2, got {}", batch_size));
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw ConfigError(fmt::format("learning rate must be positive, got {}", lr));
    }
}

double mse_loss(const Matrix& probs, const Matrix& onehot)
{
    require_same_shape(probs, onehot, "mse_loss");
    if (probs.empty()) {
        throw ShapeError("mse_loss of an empty batch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double d = probs[i] - onehot[i];
        total += d * d;
    }
    return total / static_cast<double>(probs.size());
}

Gradients backward(const Network& net, const ForwardCache& cache, const Matrix& onehot, GradientScope scope)
{
    require_same_shape(cache.probabilities, onehot, "backward");
    if (scope == GradientScope::all && cache.mode != Mode::train) {
        throw ShapeError("backward through hidden layers needs a train-mode forward cache");
    }
    const Matrix& p = cache.probabilities;
    const std::size_t batch = p.rows();
    const std::size_t n = p.cols();
    const double scale = 2.0 / static_cast<double>(batch * n);

    // Softmax Jacobian: dz_i = p_i (g_i - sum_j p_j g_j).
    Matrix d_logits(batch, n);
    for (std::size_t r = 0; r < batch; ++r) {
        const auto pr = p.row(r);
        const auto yr = onehot.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            dot += pr[c] * scale * (pr[c] - yr[c]);
        }
        auto dz = d_logits.row(r);
        for (std::size_t c = 0; c < n; ++c) {
            dz[c] = pr[c] * (scale * (pr[c] - yr[c]) - dot);
        }
    }

    Gradients grads;
    grads.head_weights = matmul_tn(d_logits, cache.head_input());
    grads.head_bias = column_sums(d_logits);
    if (scope == GradientScope::head_only) {
        return grads;
    }

    const std::size_t layers = net.hidden.size();
    grads.hidden.resize(layers);
    Matrix d_out = matmul(d_logits, net.head.weights);
    for (std::size_t k = layers; k-- > 0;) {
        Matrix d_in;
        grads.hidden[k] = dense_backward(net.hidden[k], cache.hidden[k], d_out, k > 0 ? &d_in : nullptr);
        if (k > 0) {
            d_out = net.interlayer_norm ? normalize_direction_backward(cache.hidden[k - 1].output, d_in)
                                        : std::move(d_in);
        }
    }
    return grads;
}

std::vector<Matrix*> network_parameters(Network& net, GradientScope scope)
{
    std::vector<Matrix*> params;
    if (scope == GradientScope::all) {
        for (auto& layer : net.hidden) {
            for (Matrix* m : layer_parameters(layer)) {
                params.push_back(m);
            }
        }
    }
    params.push_back(&net.head.weights);
    params.push_back(&net.head.bias);
    return params;
}

std::vector<const Matrix*> gradient_list(const Gradients& grads, GradientScope scope)
{
    std::vector<const Matrix*> list;
    if (scope == GradientScope::all) {
        if (grads.hidden.empty()) {
            throw ShapeError("gradients carry no hidden-layer terms");
        }
        for (const auto& layer : grads.hidden) {
            for (const Matrix* m : gradient_list(layer)) {
                list.push_back(m);
            }
        }
    }
    list.push_back(&grads.head_weights);
    list.push_back(&grads.head_bias);
    return list;
}

SplitMetrics evaluate_softmax(const Network& net, std::span<const Sample> samples, InputPolicy policy)
{
    SplitMetrics metrics;
    if (samples.empty()) {
        return metrics;
    }
    const Matrix probs = softmax_probabilities(net, samples, policy);
    const auto labels = collect_labels(samples);
    metrics.loss = mse_loss(probs, one_hot(labels, net.class_count));
    const EvalReport report = evaluate_scores(probs, labels);
    metrics.error_rate = report.error_rate_percent;
    metrics.roc_auc = report.roc_auc;
    return metrics;
}

namespace {

void check_compatible(const Network& net, const DatasetSplit& data)
{
    net.validate();
    if (data.train.empty()) {
        throw DataError("training split is empty");
    }
    if (data.input_dim() != net.input_dim) {
        throw ShapeError(fmt::format("samples have width {}, network expects {}", data.input_dim(), net.input_dim));
    }
    if (data.class_count != net.class_count) {
        throw ShapeError(fmt::format("dataset has {} classes, network head has {}", data.class_count, net.class_count));
    }
}

} // namespace

RunHistory train_bp(Network& net, const DatasetSplit& data, const TrainConfig& cfg, const BpOptions& options,
                    const TrainingResume* resume, TrainingResume* final_state)
{
    cfg.validate();
    check_compatible(net, data);
    const std::size_t n = net.class_count;
    const GradientScope scope = options.scope;

    auto params = network_parameters(net, scope);
    AdamState adam = AdamState::for_parameters(params, cfg.lr);
    int start_epoch = 0;
    double best = std::numeric_limits<double>::infinity();
    if (resume != nullptr) {
        if (resume->optimizers.size() != 1 || resume->optimizers[0].m.size() != params.size()) {
            throw CheckpointError("resume state does not match the optimizer layout of this stage");
        }
        adam = resume->optimizers[0];
        start_epoch = resume->completed_epochs;
        best = resume->best_monitor;
    }
    if (cfg.monitor == Monitor::test_error && !cfg.checkpoint.path.empty()) {
        log::warn("best checkpoint selected by test error: the reported test metrics are then biased "
                  "by model selection on the test split");
    }

    RunHistory history;
    if (resume != nullptr) {
        history = resume->history;
    }
    history.stage = options.stage;
    for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        SeededRng shuffle_rng = SeededRng::stream(cfg.seed, "bp/shuffle", static_cast<std::uint64_t>(epoch));
        const auto batches = make_batches(data.train.size(), cfg.batch_size, cfg.shuffle ? &shuffle_rng : nullptr);
        if (batches.empty()) {
            throw DataError("training split needs at least two samples");
        }

        double loss_sum = 0.0;
        for (const auto& idx : batches) {
            Matrix x = stack_pixels(data.train, idx);
            std::vector<std::size_t> labels;
            labels.reserve(idx.size());
            for (const std::size_t i : idx) {
                labels.push_back(data.train[i].label);
            }
            apply_input_policy(x, options.input, n, labels);
            const Matrix y = one_hot(labels, n);

            const ForwardCache cache = scope == GradientScope::all ? forward(net, x, Mode::train) : forward_eval(net, x);
            const double loss = mse_loss(cache.probabilities, y);
            if (!std::isfinite(loss)) {
                throw NumericError(fmt::format("{} training diverged at epoch {}: loss is {}", options.stage, epoch, loss));
            }
            loss_sum += loss;
            const Gradients grads = backward(net, cache, y, scope);
            const auto grad_ptrs = gradient_list(grads, scope);
            if (cfg.optimizer == OptimizerKind::adam) {
                adam_step(params, grad_ptrs, adam);
            } else {
                sgd_step(params, grad_ptrs, cfg.lr);
            }
        }
        for (const Matrix* p : params) {
            if (!all_finite(*p)) {
                throw NumericError(fmt::format("{} training diverged at epoch {}: non-finite parameters",
                                               options.stage, epoch));
            }
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train = evaluate_softmax(net, data.train, options.input);
        record.train.loss = loss_sum / static_cast<double>(batches.size());
        record.test = evaluate_softmax(net, data.test, options.input);
        record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        log::info("{} epoch {}: train loss {:.6f} err {:.2f}% | test err {:.2f}% auc {:.4f}", options.stage, epoch,
                  record.train.loss, record.train.error_rate, record.test.error_rate, record.test.roc_auc);

        const double value = monitor_value(cfg.monitor, record);
        history.epochs.push_back(std::move(record));
        if (std::isfinite(value) && value < best) {
            best = value;
            if (!cfg.checkpoint.path.empty()) {
                save_training_checkpoint(cfg.checkpoint, net, data.class_names, std::span(&adam, 1), history,
                                         cfg.monitor, best);
            }
        }
    }
    if (final_state != nullptr) {
        final_state->history = history;
        final_state->optimizers = {adam};
        final_state->completed_epochs = std::max(start_epoch, cfg.epochs);
        final_state->best_monitor = best;
    }
    return history;
}

} // namespace fftrain
