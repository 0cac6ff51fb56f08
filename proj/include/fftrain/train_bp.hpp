#pragma once

#include "fftrain/training.hpp"

#include <cstdint>
#include <string>

namespace fftrain {

enum class OptimizerKind { adam, sgd };
enum class GradientScope { all, head_only };

struct TrainConfig {
    int epochs = 250;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    bool shuffle = true;
    Monitor monitor = Monitor::train_loss;
    OptimizerKind optimizer = OptimizerKind::adam;
    CheckpointTarget checkpoint;

    void validate() const;
};

struct Gradients {
    std::vector<LayerGradients> hidden; // empty for GradientScope::head_only
    Matrix head_weights;
    Matrix head_bias;
};

/// Mean over all B x n entries of (p - y)^2.
double mse_loss(const Matrix& probs, const Matrix& onehot);

/// Exact gradients of mse_loss(softmax(...), onehot) through the full softmax
/// Jacobian, the head, and (for GradientScope::all) every hidden block,
/// including batch norm through its batch statistics.
Gradients backward(const Network& net, const ForwardCache& cache, const Matrix& onehot,
                   GradientScope scope = GradientScope::all);

/// Parameters in optimizer order: per hidden layer weights, bias, gamma, beta;
/// then head weights, head bias. head_only returns the head pair only.
std::vector<Matrix*> network_parameters(Network& net, GradientScope scope);
std::vector<const Matrix*> gradient_list(const Gradients& grads, GradientScope scope);

struct BpOptions {
    GradientScope scope = GradientScope::all;
    InputPolicy input = InputPolicy::raw;
    std::string stage = "bp";
};

/// Minibatch training with MSE-over-softmax and Adam. In head_only scope the
/// hidden stack runs in eval mode and is never written to. `resume` continues
/// a paused run; `final_state` receives the state needed to continue this one.
RunHistory train_bp(Network& net, const DatasetSplit& data, const TrainConfig& cfg, const BpOptions& options = {},
                    const TrainingResume* resume = nullptr, TrainingResume* final_state = nullptr);

/// Eval-mode loss, error rate and ROC-AUC of the softmax head on `samples`.
SplitMetrics evaluate_softmax(const Network& net, std::span<const Sample> samples, InputPolicy policy);

} // namespace fftrain
