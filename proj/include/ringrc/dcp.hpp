#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ringrc/signal.hpp"
#include "ringrc/types.hpp"

namespace ringrc {

/// Delayed complex perceptron: a bank of fixed tap delays whose outputs are
/// summed with trainable complex weights before square-law detection,
///   y(t) = sum_k w_k * x(t - (k-1) * tap_spacing).
struct DcpParams {
    Index n_taps = 8;
    double tap_spacing = 50e-12; // s
    VecC weights;                // size n_taps

    void validate(double sample_rate) const;
};

/// Combined field after the tap bank. Tap k is delayed by
/// d_k = round((k-1) * tap_spacing * rate) samples; the output drops the
/// first d_max samples, so out[i] pairs with in[i + d_max] (t_start moves
/// accordingly) and every tap reads defined history.
SampledSignal dcp_apply(const DcpParams& p, const SampledSignal& in);

/// Anomalous-dispersion fiber: multiplies the spectrum by
/// exp(i * beta2/2 * omega^2 * length) and applies distributed power loss
/// alpha_db_per_m. length == 0 returns the input bit for bit.
SampledSignal dispersion_channel(const SampledSignal& in, double length,
                                 double beta2, double alpha_db_per_m = 0.0);

/// 17 ps/(nm km) at 1550 nm expressed as beta2 (s^2/m, negative).
double beta2_from_dispersion(double d_ps_nm_km, double wavelength);

/// Signed class-separation objective for a detected trace split by target
/// bit: -(mean1 - mean0) / (sigma1 + sigma0 + eps). More negative is better
/// separated with the correct polarity; the sign is kept so an inverted
/// decision rule is penalized rather than rewarded.
double separation_loss(const Eigen::Ref<const VecR>& decided,
                       const BitSequence& target);

struct PsoOptions {
    int n_particles = 24;
    int max_iter = 60;
    double inertia = 0.729;
    double c_personal = 1.494;
    double c_global = 1.494;
    double velocity_clamp = 0.5; // fraction of the box span per step
    std::uint64_t seed = 1;
};

struct PsoResult {
    VecR best_position;
    double best_value = 0.0;
    VecR trace; // best value after init and after each iteration
};

/// Global-best particle swarm minimization over a box. Positions start
/// uniform in [lo, hi] with zero velocity; every evaluation must be finite
/// or the search aborts with std::runtime_error naming the position.
PsoResult pso_train(const std::function<double(const VecR&)>& objective,
                    const Eigen::Ref<const VecR>& lo,
                    const Eigen::Ref<const VecR>& hi, const PsoOptions& opts);

/// End-to-end equalization run: PRBS OOK through the dispersive fiber, one
/// branch detected directly, the other through the PSO-trained tap bank.
struct EqualizeParams {
    double bitrate = 10e9;
    int prbs_order = 10;
    int samples_per_bit = 16;
    double fiber_length = 125e3; // m
    double dispersion_ps_nm_km = 17.0;
    double wavelength = 1.55e-6;
    double power_high = 1e-3; // W
    double power_low = 1e-5;
    DetectorModel detector{7.5e9, 0.0, false};
    Index n_taps = 8;
    double tap_spacing = 50e-12;
    double weight_bound = 2.0;  // PSO box half-width per re/im component
    double train_fraction = 0.6;
    PsoOptions pso;

    void validate() const;
};

struct ClassStats {
    double mean0 = 0.0, sigma0 = 0.0;
    double mean1 = 0.0, sigma1 = 0.0;
};

struct EqualizeReport {
    double ber_plain = 0.0;      // detected straight off the fiber
    double ber_dcp = 0.0;        // detected after the trained tap bank
    bool floor_plain = false;    // zero errors over the test bits
    bool floor_dcp = false;
    Index n_test_bits = 0;
    ClassStats stats_plain;      // decision-sample statistics per class
    ClassStats stats_dcp;
    double separation_plain = 0.0; // separation_loss at the decision points
    double separation_dcp = 0.0;
    VecC trained_weights;
    VecR pso_trace;
    VecR detected_plain;   // full receiver trace straight off the fiber
    VecR detected_dcp;     // receiver trace after the trained tap bank
    double detected_rate = 0.0;
    Index dcp_trim = 0;    // samples dropped from the front of the dcp trace
};

EqualizeReport equalize_experiment(const EqualizeParams& p, std::uint64_t seed);

void write_equalize_report_json(const std::string& path, const EqualizeReport& r);

/// Eye diagram samples: one row per (bit phase in [0,1), detected power),
/// folded at the bit period.
void write_eye_csv(const std::string& path, const Eigen::Ref<const VecR>& detected,
                   double sample_rate, double bitrate);

} // namespace ringrc
