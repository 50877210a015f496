#pragma once

#include <string>
#include <vector>

#include "ringrc/signal.hpp"
#include "ringrc/types.hpp"

namespace ringrc {

/// Static add-drop microring parameters. Both couplers share coupling_k2.
/// The refractive index responds to temperature and carriers as
/// n = n0 + dn_dT * delta_T - dn_dN * delta_N, and the resonance obeys
/// m * lambda_res = 2*pi*R * n.
struct MrrParams {
    double radius = 7e-6;                    // m
    double n0 = 4.0;                         // effective group index
    double dn_dT = 1.86e-4;                  // 1/K
    double dn_dN = 8.8e-28;                  // m^3
    double q_intrinsic = 1e5;
    double coupling_k2 = 0.05;               // power coupling per coupler
    double tau_fc = 10e-9;                   // s, free-carrier lifetime
    double tau_th = 100e-9;                  // s, thermal lifetime
    double tpa_gen_coeff = 0.0;              // carriers m^-3 per J^2 per s
    double thermal_heating_coeff = 0.0;      // K per J of absorbed energy
    double tpa_loss_coeff = 0.0;             // extra energy decay rate per J stored
    double cold_resonance_wavelength = 1.55e-6; // m
    int resonance_order = 100;

    void validate() const;
};

/// Quantities derived from MrrParams once per run. Energy decay rates are
/// full-width (1/s); gamma_e = k2 / T_roundtrip is the rate through one
/// coupler, and the loaded linear rate is gamma_i + 2*gamma_e.
struct MrrRates {
    double nu0 = 0.0;       // Hz
    double omega0 = 0.0;    // rad/s
    double t_roundtrip = 0.0;
    double gamma_i = 0.0;
    double gamma_e = 0.0;
    double gamma_tot = 0.0; // linear loaded
    double q_loaded = 0.0;
    double tau_ph = 0.0;    // loaded photon lifetime
    double t_r = 0.0;       // field pass-through sqrt(1 - k2)
    double k_thermal = 0.0; // rad/s of resonance shift per K
    double k_carrier = 0.0; // rad/s of resonance shift per m^-3
};

MrrRates derive_rates(const MrrParams& p);

/// Dynamic ring state: energy amplitude (|u|^2 in J), excess carrier
/// density (m^-3) and temperature excess (K).
struct MrrState {
    Complex u{0.0, 0.0};
    double delta_N = 0.0;
    double delta_T = 0.0;
};

/// External optical feedback loop Through -> Add:
/// E_add(t) = sqrt(eta_f) * exp(-i phi_f) * E_th(t - tau_f).
struct FeedbackParams {
    double eta_f = 0.0;      // tunable power attenuation in [0, 1]
    double phi_f = 0.0;      // rad
    double tau_f = 0.0;      // s, snapped to the integration grid
    double loop_t = 1.0;     // fixed passive power transmission of the loop
                             // (coupler/splice insertion loss), in (0, 1]
    double t_r_override = -1.0; // < 0: use sqrt(1 - k2)

    void validate() const;
};

struct StateTrace {
    VecR t;
    VecC u;
    VecR delta_N;
    VecR delta_T;
};

struct IntegrateResult {
    SampledSignal through;
    SampledSignal drop;
    StateTrace trace;
    MrrState final_state;
    double tau_f_snapped = 0.0; // 0 when no feedback
};

/// Cold-cavity steady-state power transmissions at laser detuning
/// nu_laser - nu_resonance (Hz). Returns {T_through, T_drop}.
std::pair<double, double> linear_transmission(const MrrParams& p, double detuning);

/// Fixed-step RK4 integration of the coupled (u, delta_N, delta_T) system
/// driven by e_in (resampled by zero-order hold when its rate differs from
/// 1/dt). `detuning` is the laser offset from the cold resonance. Outputs
/// are recorded every `decimation` steps (which must divide the step count),
/// including the initial and final instants.
IntegrateResult integrate(const MrrParams& p, const MrrState& state0,
                          const SampledSignal& e_in, double dt,
                          double detuning = 0.0, Index decimation = 1);

/// Same integration with the delayed self-injection loop closed. The delay
/// history starts at zero field; tau_f is snapped to round(tau_f/dt) steps
/// and the snapped value is reported in the result.
IntegrateResult simulate_with_feedback(const MrrParams& p, const FeedbackParams& fb,
                                       const SampledSignal& e_in, double dt,
                                       double detuning = 0.0, Index decimation = 1,
                                       const MrrState& state0 = MrrState{});

/// Instantaneous resonance wavelength along a trace:
/// lambda(t) = lambda_cold * (1 + (dn_dT dT - dn_dN dN) / n0).
VecR resonance_wavelength_trace(const MrrParams& p, const StateTrace& trace);

struct StabilityResult {
    bool self_pulsing = false;
    double frequency = 0.0; // Hz, 0 when stable
};

struct StabilityOptions {
    double eps_stab = 0.02;   // peak-to-peak over mean threshold
    double dt = 0.0;          // 0: tau_ph / 20
    double record_rate = 50e6; // Hz, decimated analysis rate
    bool early_exit = true;   // stop settling early once provably quiescent
};

/// Drives the ring with CW power P at the given detuning from a cold start,
/// discards settle_time, and classifies the remaining drop power trace:
/// Stable when peak-to-peak < eps_stab * mean, else SelfPulsing with the
/// dominant FFT frequency.
StabilityResult classify_stability(const MrrParams& p, double input_power,
                                   double detuning, double settle_time,
                                   double observe_time,
                                   const StabilityOptions& opts = {});

/// Dominant non-DC frequency of a real trace; 0 when no spectral line rises
/// above the noise floor (8x the median bin magnitude).
double sp_frequency(const Eigen::Ref<const VecR>& drop_power, double sample_rate);

/// Classification of every (power, detuning) cell.
struct StabilityMap {
    VecR powers;    // W, strictly increasing
    VecR detunings; // Hz, strictly increasing
    MatR sp_freq;   // powers.size() x detunings.size(); 0 where stable
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> is_sp;

    void validate() const;
};

StabilityMap stability_map(const MrrParams& p, const VecR& powers, const VecR& detunings,
                           double settle_time, double observe_time,
                           const StabilityOptions& opts = {}, int n_workers = 1);

/// CSV rows: power_w, detuning_hz, class, sp_freq_hz (17 significant digits;
/// loads back losslessly).
void write_stability_map_csv(const std::string& path, const StabilityMap& m);
StabilityMap read_stability_map_csv(const std::string& path);

/// Named device presets; throws std::invalid_argument for unknown names.
MrrParams mrr_preset(const std::string& name);
std::vector<std::string> mrr_preset_names();

} // namespace ringrc
