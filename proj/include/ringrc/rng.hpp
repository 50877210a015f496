#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ringrc {

/// SplitMix64 step; used to derive well-separated substream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Deterministic substream seed for (global seed, stream index).
/// Serial and parallel sweeps draw identical noise because every cell
/// owns its seed instead of sharing one generator.
inline std::uint64_t substream_seed(std::uint64_t global_seed, std::uint64_t stream) {
    std::uint64_t s = global_seed;
    std::uint64_t a = splitmix64(s);
    s = stream ^ 0xD1B54A32D192ED03ULL;
    std::uint64_t b = splitmix64(s);
    std::uint64_t m = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    return splitmix64(m);
}

/// mt19937_64 with fixed output transforms. The standard pins the raw engine
/// sequence but not std::*_distribution, so uniform/normal are rolled here to
/// keep byte-identical output across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform on [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; second deviate cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection-free modulo bias is negligible for the small n used here,
        // but do the standard rejection anyway: it is cheap and exact.
        const std::uint64_t limit = n * (UINT64_MAX / n);
        std::uint64_t x = 0;
        do {
            x = eng_();
        } while (x >= limit);
        return x % n;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace ringrc
