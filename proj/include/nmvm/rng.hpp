#pragma once

// Counter-based random streams. Every Monte Carlo path owns an independent
// stream keyed by (seed, path index), so results do not depend on how paths
// are split across threads.

#include <cmath>
#include <cstdint>

namespace nmvm {

/// Bumped whenever the generator or any transform below changes its output.
inline constexpr int kRngVersion = 1;

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// SplitMix64 in counter form: draw k of stream s is mix64(key(s) + (k+1)*golden).
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key_(detail::mix64(seed ^ detail::mix64(stream + detail::kGolden))) {}

    std::uint64_t next_u64() {
        counter_ += 1;
        return detail::mix64(key_ + counter_ * detail::kGolden);
    }

    /// Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal via the Marsaglia polar method.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 0.0;
        double v = 0.0;
        double s = 0.0;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// Exponential with unit rate.
    double exponential() { return -std::log(uniform()); }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace nmvm
