#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>

namespace fftrain {

/// xoshiro256** seeded through splitmix64.
///
/// Every stochastic decision in a run (initialization, the train/test split,
/// per-epoch shuffles, negative-label draws) uses its own stream obtained with
/// `SeededRng::stream(root_seed, name, index)`, so consuming more draws from one
/// stream never perturbs another. All derived quantities (uniform reals,
/// bounded integers, normals, shuffles) are computed here from the raw 64-bit
/// outputs rather than through <random> distributions, whose algorithms are
/// implementation-defined.
class SeededRng {
public:
    using result_type = std::uint64_t;

    explicit SeededRng(std::uint64_t seed) noexcept;

    /// Independent stream keyed by (root, name, index).
    static SeededRng stream(std::uint64_t root, std::string_view name, std::uint64_t index = 0) noexcept;

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }
    result_type operator()() noexcept { return next(); }

    std::uint64_t next() noexcept;
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Uniform in [0, bound), unbiased. bound must be > 0.
    std::uint64_t below(std::uint64_t bound) noexcept;
    /// Standard normal via Box-Muller (one value per call, the pair's second half is cached).
    double normal() noexcept;

    template <typename T>
    void shuffle(std::span<T> items) noexcept
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_[4];
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;
/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

} // namespace fftrain
