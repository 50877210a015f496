#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ringrc/types.hpp"

namespace ringrc {

/// Complex optical field envelope on a uniform time grid.
/// Samples carry units of √W, so |E|² is instantaneous power in W.
struct SampledSignal {
    VecC samples;
    double sample_rate = 0.0; // Hz
    double t_start = 0.0;     // s

    Index size() const { return samples.size(); }
    double dt() const { return 1.0 / sample_rate; }
    double duration() const { return static_cast<double>(size()) / sample_rate; }
    double time_at(Index i) const { return t_start + static_cast<double>(i) / sample_rate; }

    /// Elementwise |E|².
    VecR power() const { return samples.array().abs2(); }

    /// Throws std::invalid_argument when an invariant is broken
    /// (non-positive rate, empty, or non-finite samples).
    void validate() const;
};

/// Binary data stream with an associated line rate.
struct BitSequence {
    std::vector<int> bits; // entries in {0,1}
    double bitrate = 0.0;  // bits/s

    Index size() const { return static_cast<Index>(bits.size()); }
    void validate() const;
};

/// Square-law receiver: single-pole low-pass plus optional additive
/// Gaussian noise on the detected power.
struct DetectorModel {
    double bandwidth = 20e9; // Hz, single-pole cutoff
    double noise_std = 0.0;  // W
    bool noise_enabled = false;
};

/// Maximal-length pseudo-random binary sequence of period 2^order − 1,
/// generated by a Fibonacci LFSR with standard primitive feedback taps.
/// `seed` initializes the shift register (only the low `order` bits are
/// used) and must be nonzero there. One full period is returned.
BitSequence prbs(int order, std::uint64_t seed = 1, double bitrate = 1.0);

/// On-off keying without return to zero: each bit becomes samples_per_bit
/// samples of constant field amplitude √p_high (1) or √p_low (0), zero phase.
SampledSignal nrz_modulate(const BitSequence& bits, int samples_per_bit,
                           double p_high, double p_low = 0.0);

/// Detected power trace: |E|² filtered by the single-pole response at
/// det.bandwidth, then (optionally) additive Gaussian noise. Deterministic
/// for a fixed noise_seed. Output has the same length and rate as the input.
VecR detect(const SampledSignal& signal, const DetectorModel& det,
            std::uint64_t noise_seed = 0);

/// Fraction of mismatched bits. Lengths must agree.
double ber(const BitSequence& predicted, const BitSequence& target);

/// 1 where analog > threshold, else 0.
BitSequence threshold_decide(const Eigen::Ref<const VecR>& analog, double threshold,
                             double bitrate = 1.0);

/// Decision threshold minimizing BER of threshold_decide(analog, ·) against
/// target; ties resolved toward the lowest threshold. O(n log n) exact sweep.
double best_threshold(const Eigen::Ref<const VecR>& analog, const BitSequence& target);

/// Mean squared error divided by the (population) variance of the target.
double nmse(const Eigen::Ref<const VecR>& predicted, const Eigen::Ref<const VecR>& target);

// --- serialization ------------------------------------------------------
//
// CSV: header "t,re,im", one row per sample, 17 significant digits
// (lossless double round-trip). Binary: 8-byte magic "RRSIG\0\0\x01"
// followed by little-endian f64 (t, re, im) triples.

void write_signal_csv(const std::string& path, const SampledSignal& s);
SampledSignal read_signal_csv(const std::string& path);
void write_signal_bin(const std::string& path, const SampledSignal& s);
SampledSignal read_signal_bin(const std::string& path);

} // namespace ringrc
