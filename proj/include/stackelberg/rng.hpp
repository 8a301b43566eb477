#pragma once

#include <cstdint>
#include <stdexcept>

namespace stackelberg {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Independent noise sources of one simulated path.
enum class Channel : std::uint64_t {
    filter = 1,       ///< increments of the observable Brownian motion W-hat
    exploration = 2,  ///< increments of the independent motion W-bar
    actions = 3,      ///< sampling noise xi of the leader's actions
    aux = 4,
};

/**
 * Counter-based uniform stream: draw k of stream (seed, path, channel) is a
 * pure function of those four integers, so paths can be generated in any
 * order or on any thread and still reproduce bit-for-bit.
 */
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t path, Channel channel) noexcept
        : key_(mix64(mix64(seed ^ 0x6A09E667F3BCC909ULL) ^
                     mix64(path + 0x3C6EF372FE94F82BULL) ^
                     (static_cast<std::uint64_t>(channel) * 0x9E3779B97F4A7C15ULL))) {}

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform() {
        if (counter_ == UINT64_MAX) throw std::overflow_error("random stream exhausted");
        const std::uint64_t x = mix64(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL);
        return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal draw by inversion.
    double normal();

    std::uint64_t counter() const noexcept { return counter_; }
    void seek(std::uint64_t counter) noexcept { counter_ = counter; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/**
 * Inverse of the standard normal CDF for u in (0,1) (Acklam's rational
 * approximation, relative error below 1.2e-9).
 */
double inverse_normal_cdf(double u);

inline double CounterRng::normal() { return inverse_normal_cdf(uniform()); }

}  // namespace stackelberg
