#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace fftrain {

struct SplitMetrics {
    double loss = std::numeric_limits<double>::quiet_NaN();
    double error_rate = std::numeric_limits<double>::quiet_NaN();
    double roc_auc = std::numeric_limits<double>::quiet_NaN();
};

/// Per-layer forward-forward statistics averaged over an epoch's batches.
struct LayerTrace {
    std::size_t layer = 0;
    double g_pos_mean = 0.0;
    double g_neg_mean = 0.0;
    double local_loss = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    SplitMetrics train;
    SplitMetrics test;
    double seconds = 0.0;
    std::vector<LayerTrace> layers;
};

struct RunHistory {
    std::string stage; // "bp" or "ffa"
    std::vector<EpochRecord> epochs;
};

/// CSV with header
///   stage,epoch,split,loss,error_rate,roc_auc,seconds,layer_idx,g_pos_mean,g_neg_mean,local_loss
/// One `train` and one `test` row per epoch, followed by one `layer` row per
/// hidden layer for forward-forward stages. Numbers use the shortest
/// round-trip representation; undefined values are left empty. Wall time is
/// written only when `include_seconds` is set, so default output is
/// byte-reproducible.
void write_history_csv(std::ostream& out, std::span<const RunHistory> runs, bool include_seconds);
std::string format_number(double value);

/// Lossless JSON form (undefined values become null), used to carry the
/// history of a paused run inside its checkpoint.
nlohmann::json history_to_json(const RunHistory& history);
RunHistory history_from_json(const nlohmann::json& j);

} // namespace fftrain
