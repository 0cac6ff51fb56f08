#pragma once

#include "fftrain/matrix.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fftrain {

/// Adam moments for an ordered list of parameter tensors.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;

    /// Zero moments shaped like `params`.
    static AdamState for_parameters(std::span<Matrix* const> params, double lr = 1e-3);
};

/// Bias-corrected Adam:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamState& state);

/// Plain gradient descent. Available through the config but not used by the default setup.
void sgd_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, double lr);

} // namespace fftrain
