#pragma once

#include "fftrain/data.hpp"
#include "fftrain/history.hpp"
#include "fftrain/network.hpp"
#include "fftrain/optim.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

namespace fftrain {

/// Quantity watched by the checkpoint callback; lower is better.
enum class Monitor { train_loss, test_error };

/// How the first n input components are treated before a softmax-head pass.
enum class InputPolicy {
    raw,        // untouched
    neutral,    // zeroed (no label information)
    true_label, // one-hot of the true label; needs labels at prediction time
};

std::string_view to_string(Monitor monitor);
std::string_view to_string(InputPolicy policy);
InputPolicy parse_input_policy(std::string_view text);

void apply_input_policy(Matrix& batch, InputPolicy policy, std::size_t class_count,
                        std::span<const std::size_t> labels);

/// State carried across a pause: optimizer moments, completed epochs, the
/// best monitor value seen so far and the history up to the pause.
struct TrainingResume {
    std::vector<AdamState> optimizers;
    int completed_epochs = 0;
    double best_monitor = std::numeric_limits<double>::infinity();
    RunHistory history;
};

/// Best-checkpoint callback target. Empty path disables it.
struct CheckpointTarget {
    std::filesystem::path path;
    nlohmann::json meta = nlohmann::json::object();
};

/// Splits `count` rows into consecutive batches of `batch_size`, after an
/// optional shuffle. A trailing batch with a single row is dropped because
/// train-mode batch norm needs two rows.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, SeededRng* shuffle);

double monitor_value(Monitor monitor, const EpochRecord& record);

/// Eval-mode class probabilities for a set of samples, `chunk` rows at a time.
Matrix softmax_probabilities(const Network& net, std::span<const Sample> samples, InputPolicy policy,
                             std::size_t chunk = 256);

/// Writes a checkpoint whose meta is `target.meta` plus the resume fields
/// (stage, monitor, best_monitor, history so far).
void save_training_checkpoint(const CheckpointTarget& target, const Network& net,
                              const std::vector<std::string>& class_names, std::span<const AdamState> optimizers,
                              const RunHistory& history, Monitor monitor, double best_monitor);

/// Rebuilds the resume state from a checkpoint written by save_training_checkpoint.
TrainingResume resume_from(const nlohmann::json& meta, std::vector<AdamState> optimizers, int epoch);

} // namespace fftrain
