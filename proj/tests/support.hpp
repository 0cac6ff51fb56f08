#pragma once

#include "fftrain/data.hpp"
#include "fftrain/history.hpp"
#include "fftrain/matrix.hpp"
#include "fftrain/network.hpp"
#include "fftrain/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag)
    {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path()
              / ("fftrain-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() { std::filesystem::remove_all(path_); }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

using fftrain::Matrix;
using fftrain::SeededRng;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, SeededRng& rng, double lo = -1.0, double hi = 1.0,
                            double zero_fraction = 0.0)
{
    Matrix m(rows, cols);
    for (double& v : m.values()) {
        v = rng.uniform() < zero_fraction ? 0.0 : lo + (hi - lo) * rng.uniform();
    }
    return m;
}

// Textbook triple loop: each element summed from 0 over p in order.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b)
{
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) {
                acc += a(i, p) * b(p, j);
            }
            c(i, j) = acc;
        }
    }
    return c;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

// Relative error with an absolute floor in the denominator. Central
// differences with h = 1e-6 carry ~1e-10 of rounding noise, so gradients
// below the floor are compared absolutely.
inline constexpr double kGradientFloor = 1e-5;

inline double relative_error(double analytic, double numeric)
{
    const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradientFloor});
    return std::abs(analytic - numeric) / scale;
}

// Gaussian class blobs of width `dim`; the first `classes` components are
// left at zero for the label overlay and everything is clamped to [0, 1].
inline fftrain::DatasetSplit blob_split(std::size_t classes, std::size_t train_per_class, std::size_t test_per_class,
                                        std::size_t dim, std::uint64_t seed, double spread = 0.05,
                                        double label_noise = 0.0)
{
    SeededRng rng = SeededRng::stream(seed, "test/blobs");
    std::vector<Matrix> means;
    for (std::size_t c = 0; c < classes; ++c) {
        Matrix mean(1, dim);
        for (std::size_t d = classes; d < dim; ++d) {
            mean[d] = 0.2 + 0.6 * rng.uniform();
        }
        means.push_back(mean);
    }
    fftrain::DatasetSplit split;
    split.class_count = classes;
    for (std::size_t c = 0; c < classes; ++c) {
        split.class_names.push_back("c" + std::to_string(c));
    }
    std::size_t id = 0;
    const auto draw = [&](std::size_t label, std::vector<fftrain::Sample>& out) {
        Matrix x(1, dim);
        for (std::size_t d = classes; d < dim; ++d) {
            x[d] = std::clamp(means[label][d] + spread * rng.normal(), 0.0, 1.0);
        }
        std::size_t shown = label;
        if (label_noise > 0.0 && rng.uniform() < label_noise) {
            shown = static_cast<std::size_t>(rng.below(classes));
        }
        out.push_back(fftrain::Sample{x, shown, id++});
    };
    for (std::size_t i = 0; i < train_per_class; ++i) {
        for (std::size_t c = 0; c < classes; ++c) {
            draw(c, split.train);
        }
    }
    for (std::size_t i = 0; i < test_per_class; ++i) {
        for (std::size_t c = 0; c < classes; ++c) {
            draw(c, split.test);
        }
    }
    return split;
}

inline fftrain::Architecture toy_arch(std::size_t input, std::vector<std::size_t> hidden, std::size_t classes,
                                      bool interlayer_norm = false)
{
    fftrain::Architecture arch;
    arch.input_dim = input;
    arch.hidden = std::move(hidden);
    arch.class_count = classes;
    arch.interlayer_norm = interlayer_norm;
    return arch;
}

inline bool networks_bitwise_equal(const fftrain::Network& a, const fftrain::Network& b)
{
    if (a.hidden.size() != b.hidden.size()) {
        return false;
    }
    for (std::size_t k = 0; k < a.hidden.size(); ++k) {
        const auto& x = a.hidden[k];
        const auto& y = b.hidden[k];
        if (!bitwise_equal(x.weights, y.weights) || !bitwise_equal(x.bias, y.bias)
            || !bitwise_equal(x.bn_gamma, y.bn_gamma) || !bitwise_equal(x.bn_beta, y.bn_beta)
            || !bitwise_equal(x.bn_running_mean, y.bn_running_mean)
            || !bitwise_equal(x.bn_running_var, y.bn_running_var)) {
            return false;
        }
    }
    return bitwise_equal(a.head.weights, b.head.weights) && bitwise_equal(a.head.bias, b.head.bias);
}

// Shortest round-trip text of every record (no wall time), so equal strings
// mean bitwise-equal histories.
inline std::string history_text(const fftrain::RunHistory& history)
{
    std::ostringstream out;
    fftrain::write_history_csv(out, std::span(&history, 1), false);
    return out.str();
}

} // namespace testing
