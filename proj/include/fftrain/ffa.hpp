#pragma once

#include "fftrain/training.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace fftrain {

enum class InterLayerNorm { l2_direction, none };
enum class GoodnessLayers { all, skip_first };
/// streaming: every layer steps on every batch. greedy: layer k trains for
/// `epochs` epochs on the eval-mode outputs of the already trained layers.
enum class FfaSchedule { streaming, greedy };

struct FfaConfig {
    /// Per-layer thresholds; empty means "layer width" for every layer.
    std::vector<double> theta;
    int epochs = 250;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    InterLayerNorm inter_layer_normalization = InterLayerNorm::l2_direction;
    GoodnessLayers goodness_layers_for_prediction = GoodnessLayers::all;
    FfaSchedule schedule = FfaSchedule::streaming;
    Monitor monitor = Monitor::train_loss;
    CheckpointTarget checkpoint;

    void validate() const;
    /// Threshold of hidden layer k of `net`.
    double theta_for(const Network& net, std::size_t k) const;
};

/// Per-layer batch statistics of one forward-forward step.
struct GoodnessRecord {
    double g_pos_mean = 0.0;
    double g_neg_mean = 0.0;
    double local_loss = 0.0;
};

/// Row-wise sum of squares.
std::vector<double> layer_goodness(const Matrix& y);
/// logistic(g - theta).
double positive_probability(double g, double theta);
/// Mean over rows of softplus(theta - g_pos) + softplus(g_neg - theta).
double ffa_local_loss(std::span<const double> g_pos, std::span<const double> g_neg, double theta);

/// The local objective of one layer on a positive and a negative batch. Both
/// batches go through batch norm together, so the statistics are shared.
struct LocalObjective {
    double loss = 0.0;
    std::vector<double> g_pos;
    std::vector<double> g_neg;
    DenseCache cache;          // rows [0, B) positive, [B, 2B) negative
    LayerGradients gradients;  // empty unless requested
};
LocalObjective ffa_local_objective(const DenseLayer& layer, const Matrix& x_pos, const Matrix& x_neg, double theta,
                                   bool with_gradients);

struct LayerStep {
    GoodnessRecord record;
    Matrix pos_output; // post-ReLU outputs from this step's forward pass
    Matrix neg_output;
};
/// Forward both batches through `layer` alone, one Adam step on its local
/// loss, running-statistics update. The inputs are treated as constants.
LayerStep ffa_layer_step(DenseLayer& layer, const Matrix& x_pos, const Matrix& x_neg, double theta, AdamState& adam);

/// Trains the hidden stack with the forward-forward rule; the head is never
/// touched. Sets `net.interlayer_norm` from the config.
RunHistory train_ffa(Network& net, const DatasetSplit& data, const FfaConfig& cfg,
                     const TrainingResume* resume = nullptr, TrainingResume* final_state = nullptr);

/// Goodness scores for every row of `x` under every candidate label
/// (rows x n), summed over the selected layers; eval mode.
Matrix goodness_scores(const Network& net, const Matrix& x, std::size_t n, GoodnessLayers layers);
/// Label probing for a single sample: argmax (ties to the smallest label) and the n scores.
std::pair<std::size_t, std::vector<double>> predict_goodness(const Network& net, const Matrix& x, std::size_t n,
                                                             const FfaConfig& cfg);
/// Goodness scores for a sample set, `chunk` rows at a time.
Matrix goodness_scores(const Network& net, std::span<const Sample> samples, std::size_t n, GoodnessLayers layers,
                       std::size_t chunk = 128);

/// Vote error rate and AUC on `samples`; AUC scores are the vote scores of each
/// row normalized to sum to 1 (uniform when all are zero).
SplitMetrics evaluate_goodness(const Network& net, std::span<const Sample> samples, const FfaConfig& cfg);

/// Eval-mode goodness statistics per hidden layer on true-label (positive) and
/// wrong-label (negative) overlays of `samples`. Negative labels come from
/// `negative_seed`, so repeated calls are comparable.
std::vector<GoodnessRecord> goodness_separation(const Network& net, std::span<const Sample> samples,
                                                const FfaConfig& cfg, std::uint64_t negative_seed);

} // namespace fftrain
