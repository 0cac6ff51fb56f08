#pragma once

#include "fftrain/data.hpp"
#include "fftrain/hybrid.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fftrain::cli {

enum class RunMode { ffa, bp, hybrid };

std::string_view to_string(RunMode mode);

/// Resolved experiment settings. Loaded from a strict JSON document:
///
///   {
///     "dataset": "data/fixture",          // root with images/ and labels.csv
///     "mode": "hybrid",                   // ffa | bp | hybrid
///     "seed": 0,
///     "output_dir": "out",
///     "hidden": [784, 500, 500],
///     "record_wall_time": false,          // fill the history `seconds` column
///     "data":   {"normalization": "unit_range"},          // or minmax_per_image
///     "bp":     {"epochs": 250, "batch_size": 64, "lr": 0.001, "shuffle": true,
///                "monitor": "train_loss", "optimizer": "adam", "checkpoint_best": true},
///     "ffa":    {"epochs": 250, "batch_size": 64, "lr": 0.001, "theta": null,
///                "inter_layer_normalization": "l2_direction",
///                "goodness_layers_for_prediction": "all", "schedule": "streaming",
///                "monitor": "train_loss", "checkpoint_best": true},
///     "hybrid": {"mode": "head_only", "overlay_at_stage2": "neutral"}
///   }
///
/// Every key is optional; unknown keys are errors. `theta` is null (layer
/// width), a number for every layer, or one number per hidden layer.
struct ExperimentConfig {
    std::filesystem::path dataset;
    RunMode mode = RunMode::hybrid;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
    std::vector<std::size_t> hidden{784, 500, 500};
    bool record_wall_time = false;
    Normalization normalization = Normalization::unit_range;
    bool bp_checkpoint_best = true;
    bool ffa_checkpoint_best = true;
    /// Stage settings; the seeds inside are kept equal to `seed`.
    HybridConfig stages;

    void validate() const;
};

/// Parses and validates a config document. Overrides are `dotted.key=value`
/// pairs applied before validation; values are read as JSON when they parse
/// and as plain strings otherwise.
ExperimentConfig parse_config(std::string_view text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Full resolved form (every field present), as echoed into run.json.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

} // namespace fftrain::cli
