#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace plantcount {

// Contract violations callers can provoke (bad dimensions, bad config, ...).
class InvalidArgument : public std::invalid_argument {
public:
    explicit InvalidArgument(const std::string& msg) : std::invalid_argument(msg) {}
};

// Non-finite values where finite math is required.
class NumericError : public std::domain_error {
public:
    explicit NumericError(const std::string& msg) : std::domain_error(msg) {}
};

// Deterministic, platform-independent RNG. SplitMix64 core; distributions are
// implemented here rather than via <random> so that streams are bit-identical
// across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int64_t(next_u64() % span);
    }

    // Standard normal via Box-Muller (one value per call; spare cached).
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        have_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    // Independent child stream; used for per-sample generation.
    Rng fork(uint64_t stream) const {
        uint64_t mixed = state_ ^ (0x9e3779b97f4a7c15ULL + stream * 0xda942042e4dd58b5ULL);
        return Rng(mixed);
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace plantcount
