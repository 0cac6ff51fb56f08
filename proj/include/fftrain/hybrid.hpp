#pragma once

#include "fftrain/ffa.hpp"
#include "fftrain/train_bp.hpp"

#include <utility>
#include <vector>

namespace fftrain {

enum class HybridMode { head_only, full_finetune };

struct HybridConfig {
    FfaConfig ffa;
    TrainConfig bp;
    HybridMode mode = HybridMode::head_only;
    /// Stage-2 and inference treatment of the overlay region; `raw` is not allowed here.
    InputPolicy overlay_at_stage2 = InputPolicy::neutral;

    void validate() const;
};

struct HybridHistory {
    RunHistory ffa_stage;
    RunHistory bp_stage;
};

/// Forward-forward pretraining of the hidden stack followed by backprop
/// training of the classifier.
HybridHistory train_hybrid(Network& net, const DatasetSplit& data, const HybridConfig& cfg);

/// Stage 2 alone, on a network whose hidden stack is already trained.
RunHistory refine_with_bp(Network& net, const DatasetSplit& data, const HybridConfig& cfg,
                          const TrainingResume* resume = nullptr, TrainingResume* final_state = nullptr);

/// Eval-mode softmax prediction for one sample after applying `policy` to the
/// overlay region. `label` is only read by InputPolicy::true_label.
std::pair<std::size_t, std::vector<double>> predict_softmax(const Network& net, const Matrix& x,
                                                            InputPolicy policy = InputPolicy::raw,
                                                            std::size_t label = 0);
/// Row-wise version for a batch; returns the probability matrix.
Matrix predict_softmax_batch(const Network& net, const Matrix& x, InputPolicy policy = InputPolicy::raw,
                             std::span<const std::size_t> labels = {});

} // namespace fftrain
