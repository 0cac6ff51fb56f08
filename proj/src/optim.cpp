#include "fftrain/optim.hpp"

#include "fftrain/error.hpp"

#include <fmt/core.h>

#include <cmath>

namespace fftrain {

namespace {

void check_lists(std::span<Matrix* const> params, std::span<const Matrix* const> grads)
{
    if (params.size() != grads.size()) {
        throw ShapeError(fmt::format("{} parameters but {} gradients", params.size(), grads.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_shape(*params[i], *grads[i], fmt::format("gradient {}", i));
    }
}

} // namespace

AdamState AdamState::for_parameters(std::span<Matrix* const> params, double lr)
{
    AdamState state;
    state.lr = lr;
    for (const Matrix* p : params) {
        state.m.emplace_back(p->rows(), p->cols());
        state.v.emplace_back(p->rows(), p->cols());
    }
    return state;
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamState& state)
{
    check_lists(params, grads);
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError(fmt::format("optimizer tracks {} tensors, step has {}", state.m.size(), params.size()));
    }
    ++state.t;
    const double step = static_cast<double>(state.t);
    const double correction1 = 1.0 - std::pow(state.beta1, step);
    const double correction2 = 1.0 - std::pow(state.beta2, step);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        const Matrix& g = *grads[i];
        Matrix& m = state.m[i];
        Matrix& v = state.v[i];
        require_same_shape(p, m, "optimizer moment");
        double* pv = p.data();
        double* mv = m.data();
        double* vv = v.data();
        const double* gv = g.data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            // An entry that has never seen a gradient would be rewritten with
            // exactly its current value; skipping it is a pure speedup for
            // inputs that are always zero.
            if (gv[j] == 0.0 && mv[j] == 0.0 && vv[j] == 0.0) {
                continue;
            }
            mv[j] = state.beta1 * mv[j] + (1.0 - state.beta1) * gv[j];
            vv[j] = state.beta2 * vv[j] + (1.0 - state.beta2) * gv[j] * gv[j];
            const double m_hat = mv[j] / correction1;
            const double v_hat = vv[j] / correction2;
            pv[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

void sgd_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, double lr)
{
    check_lists(params, grads);
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* pv = params[i]->data();
        const double* gv = grads[i]->data();
        for (std::size_t j = 0; j < params[i]->size(); ++j) {
            pv[j] -= lr * gv[j];
        }
    }
}

} // namespace fftrain
