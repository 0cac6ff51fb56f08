#include "fftrain/training.hpp"

#include "fftrain/checkpoint.hpp"
#include "fftrain/error.hpp"

#include <fmt/core.h>

#include <cmath>
#include <numeric>

namespace fftrain {

std::string_view to_string(Monitor monitor)
{
    return monitor == Monitor::train_loss ? "train_loss" : "test_error";
}

std::string_view to_string(InputPolicy policy)
{
    switch (policy) {
    case InputPolicy::raw: return "raw";
    case InputPolicy::neutral: return "neutral";
    case InputPolicy::true_label: return "true_label";
    }
    return "raw";
}

InputPolicy parse_input_policy(std::string_view text)
{
    if (text == "raw") {
        return InputPolicy::raw;
    }
    if (text == "neutral") {
        return InputPolicy::neutral;
    }
    if (text == "true_label") {
        return InputPolicy::true_label;
    }
    throw ConfigError(fmt::format("unknown input policy '{}'", text));
}

void apply_input_policy(Matrix& batch, InputPolicy policy, std::size_t class_count,
                        std::span<const std::size_t> labels)
{
    switch (policy) {
    case InputPolicy::raw:
        break;
    case InputPolicy::neutral:
        neutral_overlay(batch, class_count);
        break;
    case InputPolicy::true_label:
        overlay_rows(batch, labels, class_count);
        break;
    }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, SeededRng* shuffle)
{
    if (batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle != nullptr) {
        shuffle->shuffle(std::span<std::size_t>(order));
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t begin = 0; begin < count; begin += batch_size) {
        const std::size_t end = std::min(count, begin + batch_size);
        if (end - begin < 2) {
            break;
        }
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

double monitor_value(Monitor monitor, const EpochRecord& record)
{
    return monitor == Monitor::train_loss ? record.train.loss : record.test.error_rate;
}

Matrix softmax_probabilities(const Network& net, std::span<const Sample> samples, InputPolicy policy,
                             std::size_t chunk)
{
    Matrix probs(samples.size(), net.class_count);
    for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
        const std::size_t end = std::min(samples.size(), begin + chunk);
        const auto part = samples.subspan(begin, end - begin);
        Matrix x = stack_pixels(part);
        const auto labels = collect_labels(part);
        apply_input_policy(x, policy, net.class_count, labels);
        const ForwardCache cache = forward_eval(net, x);
        std::copy(cache.probabilities.values().begin(), cache.probabilities.values().end(),
                  probs.values().begin() + static_cast<std::ptrdiff_t>(begin * net.class_count));
    }
    return probs;
}

void save_training_checkpoint(const CheckpointTarget& target, const Network& net,
                              const std::vector<std::string>& class_names, std::span<const AdamState> optimizers,
                              const RunHistory& history, Monitor monitor, double best_monitor)
{
    Checkpoint ckpt;
    ckpt.net = net;
    ckpt.class_names = class_names;
    ckpt.optimizers.assign(optimizers.begin(), optimizers.end());
    ckpt.epoch = history.epochs.empty() ? 0 : history.epochs.back().epoch;
    ckpt.meta = target.meta.is_object() ? target.meta : nlohmann::json::object();
    ckpt.meta["stage"] = history.stage;
    ckpt.meta["monitor"] = to_string(monitor);
    ckpt.meta["best_monitor"] = std::isfinite(best_monitor) ? nlohmann::json(best_monitor) : nlohmann::json(nullptr);
    ckpt.meta["history"] = history_to_json(history);
    save_checkpoint(ckpt, target.path);
}

TrainingResume resume_from(const nlohmann::json& meta, std::vector<AdamState> optimizers, int epoch)
{
    TrainingResume resume;
    try {
        resume.optimizers = std::move(optimizers);
        resume.completed_epochs = epoch;
        const auto& best = meta.at("best_monitor");
        resume.best_monitor = best.is_null() ? std::numeric_limits<double>::infinity() : best.get<double>();
        resume.history = history_from_json(meta.at("history"));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(fmt::format("checkpoint lacks resume information: {}", e.what()));
    }
    if (!resume.history.epochs.empty() && resume.history.epochs.back().epoch != epoch) {
        throw CheckpointError("checkpoint history does not end at the checkpoint epoch");
    }
    return resume;
}

} // namespace fftrain
