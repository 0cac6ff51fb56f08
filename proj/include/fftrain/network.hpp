#pragma once

#include "fftrain/data.hpp"
#include "fftrain/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fftrain {

enum class Mode { train, eval };

/// Fully connected layer followed by batch normalization and ReLU
/// (dense -> BN -> ReLU).
struct DenseLayer {
    static constexpr double kBnEps = 1e-5;
    // running = momentum * running + (1 - momentum) * batch
    static constexpr double kBnMomentum = 0.9;

    Matrix weights; // out x in
    Matrix bias;    // 1 x out
    Matrix bn_gamma;
    Matrix bn_beta;
    Matrix bn_running_mean;
    Matrix bn_running_var;

    std::size_t in_dim() const noexcept { return weights.cols(); }
    std::size_t out_dim() const noexcept { return weights.rows(); }
};

struct SoftmaxHead {
    Matrix weights; // classes x in
    Matrix bias;    // 1 x classes
};

struct Architecture {
    std::size_t input_dim = kInputDim;
    std::vector<std::size_t> hidden{784, 500, 500};
    std::size_t class_count = 2;
    /// Feed each hidden layer after the first the L2-direction of the previous
    /// layer's output (used by networks trained with the forward-forward rule).
    bool interlayer_norm = false;
};

struct Network {
    std::size_t input_dim = 0;
    std::size_t class_count = 0;
    bool interlayer_norm = false;
    std::vector<DenseLayer> hidden;
    SoftmaxHead head;

    Architecture architecture() const;
    /// Checks the dimension chain input -> hidden... -> classes and BN buffers.
    void validate() const;
};

/// He-normal weights (std sqrt(2 / fan_in)), zero biases, identity batch norm.
Network init_network(const Architecture& arch, std::uint64_t seed);
/// The default 12288 -> 784 -> 500 -> 500 -> n stack.
Network init_network(std::size_t class_count, std::uint64_t seed);

struct DenseCache {
    Matrix input;      // block input
    Matrix pre_bn;     // x W^T + b
    Matrix normalized; // (pre_bn - mean) * inv_std
    Matrix mean;       // 1 x out, batch or running statistic
    Matrix var;        // 1 x out
    Matrix inv_std;    // 1 x out
    Matrix bn_out;     // gamma * normalized + beta
    Matrix output;     // relu(bn_out)
};

struct ForwardCache {
    Mode mode = Mode::eval;
    std::vector<DenseCache> hidden;
    Matrix logits;
    Matrix probabilities;

    const Matrix& head_input() const { return hidden.back().output; }
};

/// Runs one block. In train mode the statistics come from the batch (which
/// needs at least 2 rows); the layer itself is not modified.
DenseCache dense_forward(const DenseLayer& layer, const Matrix& input, Mode mode);
/// running = momentum * running + (1 - momentum) * batch statistics in `cache`.
void update_running_stats(DenseLayer& layer, const DenseCache& cache);

/// Full pass. Train mode uses batch statistics and updates the running ones.
ForwardCache forward(Network& net, const Matrix& batch, Mode mode);
/// Eval-mode pass on a shared network.
ForwardCache forward_eval(const Network& net, const Matrix& batch);

/// Each row divided by (its L2 norm + 1e-12); zero rows stay zero.
Matrix normalize_direction(const Matrix& y);
/// Gradient of normalize_direction: given the input rows and dL/d(output), returns dL/d(input).
Matrix normalize_direction_backward(const Matrix& input, const Matrix& grad_output);

struct LayerGradients {
    Matrix weights;
    Matrix bias;
    Matrix gamma;
    Matrix beta;
};

/// Back-propagates dL/d(output) through ReLU, train-mode batch norm and the
/// dense map. `grad_input` (optional) receives dL/d(input).
LayerGradients dense_backward(const DenseLayer& layer, const DenseCache& cache,
                              const Matrix& grad_output, Matrix* grad_input);

/// Trainable tensors of a layer in checkpoint order: weights, bias, gamma, beta.
std::vector<Matrix*> layer_parameters(DenseLayer& layer);
std::vector<const Matrix*> gradient_list(const LayerGradients& grads);

Matrix column_sums(const Matrix& m);
std::vector<std::size_t> argmax_rows(const Matrix& m);

} // namespace fftrain
