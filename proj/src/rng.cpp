#include "fftrain/rng.hpp"

#include <cmath>
#include <numbers>

namespace fftrain {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept
{
    return (x << k) | (x >> (64 - k));
}

} // namespace

std::uint64_t splitmix64(std::uint64_t& state) noexcept
{
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) noexcept
{
    std::uint64_t h = basis;
    for (const char ch : bytes) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

SeededRng::SeededRng(std::uint64_t seed) noexcept
{
    std::uint64_t sm = seed;
    for (auto& word : state_) {
        word = splitmix64(sm);
    }
}

SeededRng SeededRng::stream(std::uint64_t root, std::string_view name, std::uint64_t index) noexcept
{
    std::uint64_t mix = root;
    std::uint64_t key = splitmix64(mix) ^ fnv1a64(name);
    mix = key;
    key = splitmix64(mix) ^ index;
    mix = key;
    return SeededRng(splitmix64(mix));
}

std::uint64_t SeededRng::next() noexcept
{
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double SeededRng::uniform() noexcept
{
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

__extension__ using u128 = unsigned __int128;

std::uint64_t SeededRng::below(std::uint64_t bound) noexcept
{
    // Lemire's multiply-shift with rejection of the biased low region.
    u128 product = static_cast<u128>(next()) * bound;
    auto low = static_cast<std::uint64_t>(product);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            product = static_cast<u128>(next()) * bound;
            low = static_cast<std::uint64_t>(product);
        }
    }
    return static_cast<std::uint64_t>(product >> 64);
}

double SeededRng::normal() noexcept
{
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

} // namespace fftrain
