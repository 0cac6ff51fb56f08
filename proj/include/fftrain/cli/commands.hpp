#pragma once

#include "fftrain/cli/config.hpp"
#include "fftrain/metrics.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fftrain::cli {

/// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 1,  // bad config, override or usage
    kExitData = 2,    // unreadable dataset or checkpoint, class-count mismatch, bad index
    kExitNumeric = 3, // non-finite loss or parameters during training
    kExitInternal = 4,
};

/// Maps the current exception onto an exit code and prints its message.
int report_error(std::ostream& err);

struct FixtureCommand {
    std::filesystem::path output;
    FixtureOptions options;
};
void cmd_make_fixture(const FixtureCommand& command, std::ostream& out);

/// Final metrics of one trained model on both splits.
struct ModeResult {
    RunMode mode = RunMode::hybrid;
    SplitMetrics train;
    SplitMetrics test;
    std::uint64_t split_hash = 0;
};

/// Trains the configured mode into cfg.output_dir: history.csv (plus
/// history_ffa.csv / history_bp.csv for hybrid), results.csv, run.json,
/// final.ckpt and, when enabled, best.ckpt. `resume` continues from a
/// checkpoint of an earlier, shorter run with the same split.
ModeResult cmd_train(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& resume,
                     std::ostream& out);

enum class SplitChoice { train, test };

struct EvaluateCommand {
    std::filesystem::path checkpoint;
    std::filesystem::path dataset;
    SplitChoice split = SplitChoice::test;
    /// Defaults to results.csv next to the checkpoint.
    std::optional<std::filesystem::path> results;
};
EvalReport cmd_evaluate(const EvaluateCommand& command, std::ostream& out);

/// Runs ffa, bp and hybrid on one split into <output_dir>/{ffa,bp,hybrid} and
/// writes report.csv and report.txt to output_dir.
std::vector<ModeResult> cmd_compare(const ExperimentConfig& cfg, std::ostream& out);

struct InspectCommand {
    std::filesystem::path dataset;
    std::vector<std::size_t> indices;
    /// Overlay width; 0 means the dataset's class count.
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::filesystem::path output = "overlay";
};
/// Writes <output>/sample_<i>_positive.png and _negative.png per index and
/// prints the overlaid components.
void cmd_inspect_overlay(const InspectCommand& command, std::ostream& out);

/// CSV form of the comparison: one row per mode, error rate and AUC per split.
void write_report_csv(std::ostream& out, const std::vector<ModeResult>& results, const std::string& dataset);
/// Error-rate and ROC-AUC tables with rows FFA, BP, FFA+BP and columns test, train.
void write_report_text(std::ostream& out, const std::vector<ModeResult>& results, const std::string& dataset);

std::string hash_hex(std::uint64_t hash);

} // namespace fftrain::cli
