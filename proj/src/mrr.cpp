#include "ringrc/mrr.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <unsupported/Eigen/FFT>

#include "ringrc/errors.hpp"

namespace ringrc {

void MrrParams::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0))
            throw std::invalid_argument(std::string("MrrParams: ") + name + " must be > 0");
    };
    positive(radius, "radius");
    positive(n0, "n0");
    positive(dn_dT, "dn_dT");
    positive(dn_dN, "dn_dN");
    positive(q_intrinsic, "q_intrinsic");
    positive(tau_fc, "tau_fc");
    positive(tau_th, "tau_th");
    positive(cold_resonance_wavelength, "cold_resonance_wavelength");
    if (!(coupling_k2 > 0.0 && coupling_k2 < 1.0))
        throw std::invalid_argument("MrrParams: coupling_k2 must lie in (0, 1)");
    if (!(tau_fc < tau_th))
        throw std::invalid_argument("MrrParams: expected tau_fc < tau_th");
    // The generation/heating/extra-loss coefficients may be zero: that is the
    // linear device used as a control case.
    if (tpa_gen_coeff < 0.0 || thermal_heating_coeff < 0.0 || tpa_loss_coeff < 0.0)
        throw std::invalid_argument("MrrParams: nonlinear coefficients must be >= 0");
    if (resonance_order < 1)
        throw std::invalid_argument("MrrParams: resonance_order must be >= 1");
}

void FeedbackParams::validate() const {
    if (!(eta_f >= 0.0 && eta_f <= 1.0))
        throw std::invalid_argument("FeedbackParams: eta_f must lie in [0, 1]");
    if (!(tau_f >= 0.0))
        throw std::invalid_argument("FeedbackParams: tau_f must be >= 0");
    if (!std::isfinite(phi_f))
        throw std::invalid_argument("FeedbackParams: phi_f must be finite");
    if (!(loop_t > 0.0 && loop_t <= 1.0))
        throw std::invalid_argument("FeedbackParams: loop_t must lie in (0, 1]");
}

MrrRates derive_rates(const MrrParams& p) {
    p.validate();
    MrrRates r;
    r.nu0 = constants::c_light / p.cold_resonance_wavelength;
    r.omega0 = constants::two_pi * r.nu0;
    r.t_roundtrip = constants::two_pi * p.radius * p.n0 / constants::c_light;
    r.gamma_i = r.omega0 / p.q_intrinsic;
    r.gamma_e = p.coupling_k2 / r.t_roundtrip;
    r.gamma_tot = r.gamma_i + 2.0 * r.gamma_e;
    r.q_loaded = r.omega0 / r.gamma_tot;
    r.tau_ph = 1.0 / r.gamma_tot;
    r.t_r = std::sqrt(1.0 - p.coupling_k2);
    r.k_thermal = constants::two_pi * (r.nu0 / p.n0) * p.dn_dT;
    r.k_carrier = constants::two_pi * (r.nu0 / p.n0) * p.dn_dN;
    return r;
}

std::pair<double, double> linear_transmission(const MrrParams& p, double detuning) {
    const MrrRates r = derive_rates(p);
    const double hw = 0.5 * r.gamma_tot;       // half linewidth, rad-rate units
    const double dw = constants::two_pi * detuning;
    const double den = hw * hw + dw * dw;
    const double t_drop = r.gamma_e * r.gamma_e / den;
    // E_th/E_in = t_r - gamma_e / (hw - i dw)
    const double re = r.t_r - r.gamma_e * hw / den;
    const double im = -r.gamma_e * dw / den;
    const double t_through = re * re + im * im;
    return {t_through, t_drop};
}

VecR resonance_wavelength_trace(const MrrParams& p, const StateTrace& trace) {
    VecR lam(trace.delta_T.size());
    for (Index i = 0; i < lam.size(); ++i) {
        const double dn = p.dn_dT * trace.delta_T[i] - p.dn_dN * trace.delta_N[i];
        lam[i] = p.cold_resonance_wavelength * (1.0 + dn / p.n0);
    }
    return lam;
}

namespace {

struct RingConsts {
    double w_cold;     // 2*pi*(laser - cold resonance), rad/s
    double kT, kN;     // resonance pull, rad/s per K and per m^-3
    double half_gamma; // (gamma_i + 2 gamma_e) / 2
    double half_tpa;   // tpa_loss_coeff / 2
    double sqrt_ge;
    double t_r;
    double g_n;        // carrier generation per |u|^4
    double heat_lin;   // K/s per |u|^2  (linear absorption heating)
    double heat_tpa;   // K/s per |u|^4
    double inv_tfc, inv_tth;
    // instantaneous-feedback closure (tau_f = 0 only)
    double fb0_re = 0.0, fb0_im = 0.0;   // extra complex decay gamma_e * fbc
    double drive_re = 1.0, drive_im = 0.0; // drive multiplier (1 + fbc * t_r)
};

inline void ring_rhs(const RingConsts& c, double ur, double ui, double dn, double dte,
                     double er, double ei, double ar, double ai,
                     double& fur, double& fui, double& fdn, double& fdt) {
    const double e2 = ur * ur + ui * ui;
    const double w = c.w_cold + c.kT * dte - c.kN * dn;
    const double damp = -(c.half_gamma + c.half_tpa * e2);
    fur = damp * ur - w * ui - c.sqrt_ge * (er + ar);
    fui = damp * ui + w * ur - c.sqrt_ge * (ei + ai);
    fdn = c.g_n * e2 * e2 - dn * c.inv_tfc;
    fdt = c.heat_lin * e2 + c.heat_tpa * e2 * e2 - dte * c.inv_tth;
}

// MODE 0: plain add-drop. MODE 1: feedback with a delay of >= 1 step.
// MODE 2: feedback with zero delay (instantaneous algebraic closure).
template <int MODE>
IntegrateResult run_ring(const MrrParams& p, const MrrRates& r, const FeedbackParams* fb,
                         const SampledSignal& e_in, double dt, double detuning,
                         Index decimation, const MrrState& state0) {
    e_in.validate();
    if (!(dt > 0.0))
        throw std::invalid_argument("integrate: dt must be > 0");
    if (dt > r.tau_ph / 10.0 * (1.0 + 1e-9))
        throw std::invalid_argument("integrate: dt must resolve the photon lifetime (<= tau_ph/10)");
    if (decimation < 1)
        throw std::invalid_argument("integrate: decimation must be >= 1");

    const Index n_steps = static_cast<Index>(std::llround(e_in.duration() / dt));
    if (n_steps < 1)
        throw std::invalid_argument("integrate: input shorter than one step");
    if (n_steps % decimation != 0)
        throw std::invalid_argument("integrate: decimation must divide the step count");

    RingConsts c{};
    c.w_cold = constants::two_pi * detuning;
    c.kT = r.k_thermal;
    c.kN = r.k_carrier;
    c.half_gamma = 0.5 * r.gamma_tot;
    c.half_tpa = 0.5 * p.tpa_loss_coeff;
    c.sqrt_ge = std::sqrt(r.gamma_e);
    c.t_r = (fb && fb->t_r_override >= 0.0) ? fb->t_r_override : r.t_r;
    c.g_n = p.tpa_gen_coeff;
    c.heat_lin = p.thermal_heating_coeff * r.gamma_i;
    c.heat_tpa = p.thermal_heating_coeff * p.tpa_loss_coeff;
    c.inv_tfc = 1.0 / p.tau_fc;
    c.inv_tth = 1.0 / p.tau_th;

    double fbc_re = 0.0, fbc_im = 0.0;
    Index n_d = 0;
    if constexpr (MODE != 0) {
        const double amp = std::sqrt(fb->eta_f * fb->loop_t);
        fbc_re = amp * std::cos(fb->phi_f);
        fbc_im = -amp * std::sin(fb->phi_f);
        n_d = static_cast<Index>(std::llround(fb->tau_f / dt));
    }
    double g_re = 1.0, g_im = 0.0; // MODE 2 loop closure 1 / (1 - t_r fbc)
    if constexpr (MODE == 2) {
        // Instantaneous loop: the returning Through field re-enters the bus,
        // so E_in_tot = e + fbc E_th with E_th = t_r E_in_tot + sqrt_ge u.
        // Solving: E_in_tot = G e + G fbc sqrt_ge u, G = 1/(1 - t_r fbc).
        const double dr = 1.0 - c.t_r * fbc_re;
        const double di = -c.t_r * fbc_im;
        const double dn2 = dr * dr + di * di;
        g_re = dr / dn2;
        g_im = -di / dn2;
        // Pump term -sqrt_ge E_in_tot = -sqrt_ge G e - gamma_e (G fbc) u.
        c.fb0_re = r.gamma_e * (g_re * fbc_re - g_im * fbc_im);
        c.fb0_im = r.gamma_e * (g_re * fbc_im + g_im * fbc_re);
        c.drive_re = g_re;
        c.drive_im = g_im;
    }

    // Zero-order-hold lookup of the (possibly coarser) input grid.
    const double ratio = dt * e_in.sample_rate;
    const bool aligned = std::abs(ratio - 1.0) < 1e-9;
    const Index n_in = e_in.size();
    const auto in_at = [&](Index k) -> Complex {
        Index idx = aligned ? k : static_cast<Index>(static_cast<double>(k) * ratio + 1e-9);
        if (idx >= n_in) idx = n_in - 1;
        return e_in.samples[idx];
    };

    const Index n_rec = n_steps / decimation + 1;
    IntegrateResult out;
    out.through.sample_rate = 1.0 / (dt * static_cast<double>(decimation));
    out.through.t_start = e_in.t_start;
    out.through.samples.resize(n_rec);
    out.drop = out.through;
    out.trace.t.resize(n_rec);
    out.trace.u.resize(n_rec);
    out.trace.delta_N.resize(n_rec);
    out.trace.delta_T.resize(n_rec);
    out.tau_f_snapped = static_cast<double>(n_d) * dt;

    // Delay-line ring buffer of the Through field (MODE 1 only).
    std::vector<double> bufr, bufi;
    Index ring_n = 1;
    if constexpr (MODE == 1) {
        ring_n = n_d + 1;
        bufr.assign(static_cast<std::size_t>(ring_n), 0.0);
        bufi.assign(static_cast<std::size_t>(ring_n), 0.0);
    }
    const auto th_delayed = [&](Index kk) -> std::pair<double, double> {
        if (kk < 0) return {0.0, 0.0};
        const std::size_t s = static_cast<std::size_t>(kk % ring_n);
        return {bufr[s], bufi[s]};
    };

    double ur = state0.u.real(), ui = state0.u.imag();
    double dn = state0.delta_N, dte = state0.delta_T;
    const double h = dt, h2 = 0.5 * dt, h6 = dt / 6.0;
    Index rec = 0;

    for (Index k = 0;; ++k) {
        const Complex ein = in_at(k);
        double er = ein.real(), ei = ein.imag();

        // Returning loop field at t_k (zero, delayed, or instantaneous).
        double a0r = 0.0, a0i = 0.0;
        if constexpr (MODE == 1) {
            const auto [dr, di] = th_delayed(k - n_d);
            a0r = fbc_re * dr - fbc_im * di;
            a0i = fbc_re * di + fbc_im * dr;
        }

        // Through field at t_k: the loop return crosses the input coupler, so
        // the directly transmitted part rides along with the drive.
        double thr, thi;
        if constexpr (MODE == 2) {
            const double br = c.t_r * er + c.sqrt_ge * ur;
            const double bi = c.t_r * ei + c.sqrt_ge * ui;
            thr = g_re * br - g_im * bi;
            thi = g_re * bi + g_im * br;
            a0r = fbc_re * thr - fbc_im * thi;
            a0i = fbc_re * thi + fbc_im * thr;
        } else {
            thr = c.t_r * (er + a0r) + c.sqrt_ge * ur;
            thi = c.t_r * (ei + a0i) + c.sqrt_ge * ui;
        }
        if constexpr (MODE == 1) {
            const std::size_t s = static_cast<std::size_t>(k % ring_n);
            bufr[s] = thr;
            bufi[s] = thi;
        }

        if (k % decimation == 0) {
            out.through.samples[rec] = Complex(thr, thi);
            out.drop.samples[rec] = Complex(c.sqrt_ge * ur, c.sqrt_ge * ui);
            out.trace.t[rec] = e_in.t_start + static_cast<double>(k) * dt;
            out.trace.u[rec] = Complex(ur, ui);
            out.trace.delta_N[rec] = dn;
            out.trace.delta_T[rec] = dte;
            ++rec;
        }
        if (k == n_steps) break;

        // Delayed Add values across the step (input is held constant on the
        // step, the delayed field is interpolated midway).
        double ahr = a0r, ahi = a0i, a1r = a0r, a1i = a0i;
        if constexpr (MODE == 1) {
            const auto [d1r, d1i] = th_delayed(k - n_d + 1);
            a1r = fbc_re * d1r - fbc_im * d1i;
            a1i = fbc_re * d1i + fbc_im * d1r;
            ahr = 0.5 * (a0r + a1r);
            ahi = 0.5 * (a0i + a1i);
        }

        double k1r, k1i, k1n, k1t, k2r, k2i, k2n, k2t;
        double k3r, k3i, k3n, k3t, k4r, k4i, k4n, k4t;
        if constexpr (MODE == 2) {
            // The instantaneous loop closes inside the RHS: substitute the
            // folded operator by adjusting damping/rotation and drive.
            const double der = c.drive_re * er - c.drive_im * ei;
            const double dei = c.drive_re * ei + c.drive_im * er;
            auto rhs2 = [&](double xur, double xui, double xdn, double xdt,
                            double& fur, double& fui, double& fdn, double& fdt) {
                ring_rhs(c, xur, xui, xdn, xdt, der, dei, 0.0, 0.0, fur, fui, fdn, fdt);
                fur -= c.fb0_re * xur - c.fb0_im * xui;
                fui -= c.fb0_re * xui + c.fb0_im * xur;
            };
            rhs2(ur, ui, dn, dte, k1r, k1i, k1n, k1t);
            rhs2(ur + h2 * k1r, ui + h2 * k1i, dn + h2 * k1n, dte + h2 * k1t,
                 k2r, k2i, k2n, k2t);
            rhs2(ur + h2 * k2r, ui + h2 * k2i, dn + h2 * k2n, dte + h2 * k2t,
                 k3r, k3i, k3n, k3t);
            rhs2(ur + h * k3r, ui + h * k3i, dn + h * k3n, dte + h * k3t,
                 k4r, k4i, k4n, k4t);
        } else {
            ring_rhs(c, ur, ui, dn, dte, er, ei, a0r, a0i, k1r, k1i, k1n, k1t);
            ring_rhs(c, ur + h2 * k1r, ui + h2 * k1i, dn + h2 * k1n, dte + h2 * k1t,
                     er, ei, ahr, ahi, k2r, k2i, k2n, k2t);
            ring_rhs(c, ur + h2 * k2r, ui + h2 * k2i, dn + h2 * k2n, dte + h2 * k2t,
                     er, ei, ahr, ahi, k3r, k3i, k3n, k3t);
            ring_rhs(c, ur + h * k3r, ui + h * k3i, dn + h * k3n, dte + h * k3t,
                     er, ei, a1r, a1i, k4r, k4i, k4n, k4t);
        }

        ur += h6 * (k1r + 2.0 * (k2r + k3r) + k4r);
        ui += h6 * (k1i + 2.0 * (k2i + k3i) + k4i);
        dn += h6 * (k1n + 2.0 * (k2n + k3n) + k4n);
        dte += h6 * (k1t + 2.0 * (k2t + k3t) + k4t);
        if (dn < 0.0) dn = 0.0; // RK4 may undershoot the decaying population

        const double e2 = ur * ur + ui * ui;
        if (!std::isfinite(e2) || !std::isfinite(dn) || !std::isfinite(dte) || e2 > 1.0)
            throw DivergenceError("integrate: ring state diverged",
                                  e_in.t_start + static_cast<double>(k + 1) * dt);
    }

    out.final_state = MrrState{Complex(ur, ui), dn, dte};
    return out;
}

} // namespace

IntegrateResult integrate(const MrrParams& p, const MrrState& state0,
                          const SampledSignal& e_in, double dt, double detuning,
                          Index decimation) {
    const MrrRates r = derive_rates(p);
    return run_ring<0>(p, r, nullptr, e_in, dt, detuning, decimation, state0);
}

IntegrateResult simulate_with_feedback(const MrrParams& p, const FeedbackParams& fb,
                                       const SampledSignal& e_in, double dt,
                                       double detuning, Index decimation,
                                       const MrrState& state0) {
    fb.validate();
    const MrrRates r = derive_rates(p);
    const Index n_d = static_cast<Index>(std::llround(fb.tau_f / dt));
    if (n_d == 0)
        return run_ring<2>(p, r, &fb, e_in, dt, detuning, decimation, state0);
    return run_ring<1>(p, r, &fb, e_in, dt, detuning, decimation, state0);
}

double sp_frequency(const Eigen::Ref<const VecR>& drop_power, double sample_rate) {
    const Index n = drop_power.size();
    if (n < 8 || !(sample_rate > 0.0)) return 0.0;

    const double mean = drop_power.mean();
    const double ptp = drop_power.maxCoeff() - drop_power.minCoeff();
    if (!(ptp > 1e-12 * std::max(std::abs(mean), 1e-300))) return 0.0; // constant trace

    // Hann-windowed spectrum of the mean-free trace.
    std::vector<Complex> x(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const double w = 0.5 - 0.5 * std::cos(constants::two_pi * static_cast<double>(i) /
                                              static_cast<double>(n - 1));
        x[static_cast<std::size_t>(i)] = Complex((drop_power[i] - mean) * w, 0.0);
    }
    Eigen::FFT<double> fft;
    std::vector<Complex> spec;
    fft.fwd(spec, x);

    const Index half = n / 2;
    VecR mag(half);
    for (Index i = 1; i <= half; ++i)
        mag[i - 1] = std::abs(spec[static_cast<std::size_t>(i)]);

    Index peak = 0;
    const double peak_mag = mag.maxCoeff(&peak);
    VecR sorted = mag;
    std::nth_element(sorted.data(), sorted.data() + half / 2, sorted.data() + half);
    const double median = sorted[half / 2];
    if (peak_mag < 8.0 * median || peak_mag <= 0.0) return 0.0;

    // Parabolic refinement on the log magnitude around the peak bin.
    double delta = 0.0;
    if (peak > 0 && peak + 1 < half && mag[peak - 1] > 0.0 && mag[peak + 1] > 0.0) {
        const double la = std::log(mag[peak - 1]);
        const double lb = std::log(mag[peak]);
        const double lc = std::log(mag[peak + 1]);
        const double den = la - 2.0 * lb + lc;
        if (den < 0.0) delta = std::clamp(0.5 * (la - lc) / den, -0.5, 0.5);
    }
    return (static_cast<double>(peak + 1) + delta) * sample_rate / static_cast<double>(n);
}

namespace {

// Upward mean-crossing counter used as a fallback frequency estimate when the
// spectral peak is ambiguous.
double crossing_frequency(const Eigen::Ref<const VecR>& x, double rate) {
    if (x.size() < 3) return 0.0;
    const double mean = x.mean();
    Index crossings = 0;
    for (Index i = 1; i < x.size(); ++i)
        if (x[i - 1] <= mean && x[i] > mean) ++crossings;
    if (crossings < 2) return 0.0;
    return static_cast<double>(crossings) /
           (static_cast<double>(x.size() - 1) / rate);
}

SampledSignal cw_signal(double power, double duration) {
    SampledSignal s;
    s.sample_rate = 2.0 / duration;
    s.samples = VecC::Constant(2, Complex(std::sqrt(power), 0.0));
    return s;
}

} // namespace

StabilityResult classify_stability(const MrrParams& p, double input_power,
                                   double detuning, double settle_time,
                                   double observe_time, const StabilityOptions& opts) {
    if (!(input_power >= 0.0))
        throw std::invalid_argument("classify_stability: power must be >= 0");
    if (!(settle_time > 0.0) || !(observe_time > 0.0))
        throw std::invalid_argument("classify_stability: need positive settle/observe times");

    const MrrRates r = derive_rates(p);
    const double dt = opts.dt > 0.0 ? opts.dt : r.tau_ph / 20.0;
    Index dec = std::max<Index>(1, static_cast<Index>(std::llround(1.0 / (opts.record_rate * dt))));

    auto run_span = [&](double span, MrrState& state) {
        const Index n = std::max<Index>(dec, ((static_cast<Index>(std::ceil(span / dt)) + dec - 1) / dec) * dec);
        SampledSignal cw = cw_signal(input_power, static_cast<double>(n) * dt);
        IntegrateResult res = run_ring<0>(p, r, nullptr, cw, dt, detuning, dec, state);
        state = res.final_state;
        return res;
    };

    // Settle in blocks; a provably quiescent trajectory can stop early.
    MrrState state{};
    const int n_blocks = 8;
    int quiet = 0;
    for (int b = 0; b < n_blocks; ++b) {
        IntegrateResult blk = run_span(settle_time / n_blocks, state);
        if (!opts.early_exit || b == 0) continue;
        const VecR pw = blk.drop.power();
        const double mean = pw.mean();
        const double ptp = pw.maxCoeff() - pw.minCoeff();
        const Index last = blk.trace.t.size() - 1;
        auto drift = [&](const VecR& v) {
            const double a = v[0], bb = v[last];
            return std::abs(bb - a) / std::max({std::abs(a), std::abs(bb), 1e-12});
        };
        const bool flat = ptp < 0.01 * opts.eps_stab * std::max(mean, 1e-300) &&
                          drift(blk.trace.delta_T) < 1e-7 &&
                          drift(blk.trace.delta_N) < 1e-7;
        quiet = flat ? quiet + 1 : 0;
        if (quiet >= 2) return {false, 0.0};
    }

    IntegrateResult obs = run_span(observe_time, state);
    const VecR pw = obs.drop.power();
    const double mean = pw.mean();
    const double ptp = pw.maxCoeff() - pw.minCoeff();
    if (!(ptp >= opts.eps_stab * std::max(mean, 1e-300)))
        return {false, 0.0};

    const double rate = obs.drop.sample_rate;
    double freq = sp_frequency(pw, rate);
    if (freq == 0.0) freq = crossing_frequency(pw, rate);
    if (freq == 0.0) return {false, 0.0}; // residual drift, not oscillation
    return {true, freq};
}

void StabilityMap::validate() const {
    auto increasing = [](const VecR& v) {
        for (Index i = 1; i < v.size(); ++i)
            if (!(v[i] > v[i - 1])) return false;
        return true;
    };
    if (!increasing(powers) || !increasing(detunings))
        throw std::invalid_argument("StabilityMap: axes must be strictly increasing");
    if (sp_freq.rows() != powers.size() || sp_freq.cols() != detunings.size() ||
        is_sp.rows() != powers.size() || is_sp.cols() != detunings.size())
        throw std::invalid_argument("StabilityMap: grid shape mismatch");
    for (Index i = 0; i < sp_freq.rows(); ++i)
        for (Index j = 0; j < sp_freq.cols(); ++j) {
            const bool sp = is_sp(i, j) == 1;
            if (sp != (sp_freq(i, j) > 0.0))
                throw std::invalid_argument(
                    "StabilityMap: sp frequency must be positive exactly on SP cells");
        }
}

StabilityMap stability_map(const MrrParams& p, const VecR& powers, const VecR& detunings,
                           double settle_time, double observe_time,
                           const StabilityOptions& opts, int n_workers) {
    StabilityMap m;
    m.powers = powers;
    m.detunings = detunings;
    m.sp_freq = MatR::Zero(powers.size(), detunings.size());
    m.is_sp.setZero(powers.size(), detunings.size());

    const Index cells = powers.size() * detunings.size();
    const int workers = std::max(1, std::min<int>(n_workers, static_cast<int>(cells)));

    std::atomic<Index> next{0};
    std::exception_ptr failure = nullptr;
    std::mutex failure_mx;

    auto body = [&] {
        for (;;) {
            const Index i = next.fetch_add(1);
            if (i >= cells) return;
            const Index pi = i / detunings.size();
            const Index di = i % detunings.size();
            try {
                StabilityResult r = classify_stability(p, powers[pi], detunings[di],
                                                       settle_time, observe_time, opts);
                m.sp_freq(pi, di) = r.self_pulsing ? r.frequency : 0.0;
                m.is_sp(pi, di) = r.self_pulsing ? 1 : 0;
            } catch (const DivergenceError&) {
                m.sp_freq(pi, di) = 0.0;
                m.is_sp(pi, di) = 2;
            } catch (...) {
                std::lock_guard<std::mutex> lk(failure_mx);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    if (workers == 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(body);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    m.validate();
    return m;
}

void write_stability_map_csv(const std::string& path, const StabilityMap& m) {
    m.validate();
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f)
        throw std::runtime_error("write_stability_map_csv: cannot open " + path);
    std::fputs("power_w,detuning_hz,class,sp_freq_hz\n", f);
    for (Index i = 0; i < m.powers.size(); ++i)
        for (Index j = 0; j < m.detunings.size(); ++j) {
            const char* cls = m.is_sp(i, j) == 1 ? "self_pulsing"
                              : m.is_sp(i, j) == 2 ? "diverged"
                                                   : "stable";
            std::fprintf(f, "%.17g,%.17g,%s,%.17g\n", m.powers[i], m.detunings[j], cls,
                         m.sp_freq(i, j));
        }
    std::fclose(f);
}

StabilityMap read_stability_map_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("read_stability_map_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line))
        throw ParseError("read_stability_map_csv: empty file", 1);

    struct Cell { double p, d, freq; int cls; };
    std::vector<Cell> cells;
    std::set<double> pset, dset;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tp, td, tc, tf;
        if (!std::getline(ss, tp, ',') || !std::getline(ss, td, ',') ||
            !std::getline(ss, tc, ',') || !std::getline(ss, tf, ','))
            throw ParseError("read_stability_map_csv: expected 4 columns", lineno);
        Cell c{};
        c.p = std::stod(tp);
        c.d = std::stod(td);
        c.freq = std::stod(tf);
        if (tc == "stable") c.cls = 0;
        else if (tc == "self_pulsing") c.cls = 1;
        else if (tc == "diverged") c.cls = 2;
        else throw ParseError("read_stability_map_csv: unknown class " + tc, lineno);
        cells.push_back(c);
        pset.insert(c.p);
        dset.insert(c.d);
    }

    StabilityMap m;
    m.powers.resize(static_cast<Index>(pset.size()));
    m.detunings.resize(static_cast<Index>(dset.size()));
    Index k = 0;
    for (double v : pset) m.powers[k++] = v;
    k = 0;
    for (double v : dset) m.detunings[k++] = v;
    if (static_cast<Index>(cells.size()) != m.powers.size() * m.detunings.size())
        throw ParseError("read_stability_map_csv: incomplete grid");

    std::map<double, Index> pi, di;
    for (Index i = 0; i < m.powers.size(); ++i) pi[m.powers[i]] = i;
    for (Index j = 0; j < m.detunings.size(); ++j) di[m.detunings[j]] = j;
    m.sp_freq = MatR::Zero(m.powers.size(), m.detunings.size());
    m.is_sp.setZero(m.powers.size(), m.detunings.size());
    for (const Cell& c : cells) {
        m.sp_freq(pi[c.p], di[c.d]) = c.freq;
        m.is_sp(pi[c.p], di[c.d]) = c.cls;
    }
    m.validate();
    return m;
}

MrrParams mrr_preset(const std::string& name) {
    MrrParams p;
    p.radius = 7e-6;
    p.cold_resonance_wavelength = 1.55e-6;
    p.dn_dT = 1.86e-4;
    p.dn_dN = 8.8e-28;

    if (name == "borghi2021" || name == "linear") {
        // Slow-lifetime device: loaded Q ~ 6.5e3, sub-MHz self-pulsing.
        p.n0 = 4.8633;
        p.resonance_order = 138;
        p.q_intrinsic = 1.11e5;
        p.coupling_k2 = 0.063;
        p.tau_fc = 45e-9;
        p.tau_th = 270e-9;
        // Effective coefficients sized so the self-pulsing tongue sits at
        // 2-3.5 mW between -8 and +2 GHz with a ~1 MHz fundamental.
        p.tpa_gen_coeff = 3.6e58;
        p.thermal_heating_coeff = 8.4e10;
        p.tpa_loss_coeff = 7.0e21;
        if (name == "linear") {
            p.tpa_gen_coeff = 0.0;
            p.thermal_heating_coeff = 0.0;
            p.tpa_loss_coeff = 0.0;
        }
        return p;
    }
    if (name == "bazzanella2022") {
        // Fast-carrier device used for the delayed-logic experiments.
        p.n0 = 4.8633;
        p.resonance_order = 138;
        p.q_intrinsic = 1.11e5;
        p.coupling_k2 = 0.063;
        p.tau_fc = 4.5e-9;
        p.tau_th = 100e-9;
        // Sized so the carrier swing at ~2 mW shifts the resonance by a few
        // linewidths: one-bit-back logic then works over a wide
        // detuning/bitrate region while three-bits-back stays unsolvable.
        p.tpa_gen_coeff = 3.0e59;
        p.thermal_heating_coeff = 7.0e10;
        p.tpa_loss_coeff = 7.0e21;
        return p;
    }
    if (name == "donati2022") {
        // Weakly coupled device (loaded Q ~ 3.19e4) for the feedback loop.
        p.n0 = 4.1937;
        p.resonance_order = 119;
        p.q_intrinsic = 6.0761e4;
        p.coupling_k2 = 5.567e-3;
        p.tau_fc = 3e-9;
        p.tau_th = 83e-9;
        // Sized for a dispersive bistability knee near 4.7 mW at the -30 pm
        // operating point: the feedback phase selects the branch there, while
        // 0.1 mW drives stay effectively linear.
        p.tpa_gen_coeff = 1.5e58;
        p.thermal_heating_coeff = 1.2e10;
        p.tpa_loss_coeff = 7.0e21;
        return p;
    }
    throw std::invalid_argument("unknown device preset: " + name);
}

std::vector<std::string> mrr_preset_names() {
    return {"borghi2021", "bazzanella2022", "donati2022", "linear"};
}

} // namespace ringrc
