#include "ringrc/dcp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unsupported/Eigen/FFT>

#include "json.hpp"

#include "ringrc/errors.hpp"
#include "ringrc/rng.hpp"

namespace ringrc {

namespace {

std::vector<Index> tap_delays(const DcpParams& p, double rate) {
    std::vector<Index> d(static_cast<std::size_t>(p.n_taps));
    for (Index k = 0; k < p.n_taps; ++k)
        d[static_cast<std::size_t>(k)] =
            static_cast<Index>(std::llround(static_cast<double>(k) * p.tap_spacing * rate));
    return d;
}

} // namespace

void DcpParams::validate(double sample_rate) const {
    if (n_taps < 1)
        throw std::invalid_argument("dcp: need at least one tap");
    if (tap_spacing < 0.0)
        throw std::invalid_argument("dcp: tap_spacing must be >= 0");
    if (weights.size() != n_taps)
        throw std::invalid_argument("dcp: weight count != n_taps");
    if (!(sample_rate > 0.0))
        throw std::invalid_argument("dcp: invalid sample rate");
}

SampledSignal dcp_apply(const DcpParams& p, const SampledSignal& in) {
    in.validate();
    p.validate(in.sample_rate);
    const auto d = tap_delays(p, in.sample_rate);
    const Index d_max = d.back();
    if (in.size() <= d_max)
        throw std::invalid_argument("dcp_apply: input shorter than the tap span");

    SampledSignal out;
    out.sample_rate = in.sample_rate;
    out.t_start = in.t_start + static_cast<double>(d_max) / in.sample_rate;
    out.samples = VecC::Zero(in.size() - d_max);
    for (Index k = 0; k < p.n_taps; ++k) {
        const Index off = d_max - d[static_cast<std::size_t>(k)];
        out.samples += p.weights[k] * in.samples.segment(off, out.samples.size());
    }
    return out;
}

double beta2_from_dispersion(double d_ps_nm_km, double wavelength) {
    const double d_si = d_ps_nm_km * 1e-6; // s/m^2
    return -d_si * wavelength * wavelength / (constants::two_pi * constants::c_light);
}

SampledSignal dispersion_channel(const SampledSignal& in, double length,
                                 double beta2, double alpha_db_per_m) {
    in.validate();
    if (length < 0.0)
        throw std::invalid_argument("dispersion_channel: negative length");
    if (length == 0.0)
        return in;

    const Index n = in.size();
    std::vector<Complex> t(in.samples.data(), in.samples.data() + n);
    std::vector<Complex> f;
    Eigen::FFT<double> fft;
    fft.fwd(f, t);

    const double amp = std::pow(10.0, -alpha_db_per_m * length / 20.0);
    for (Index j = 0; j < n; ++j) {
        const double cyc = (j <= n / 2) ? static_cast<double>(j)
                                        : static_cast<double>(j - n);
        const double w = constants::two_pi * cyc * in.sample_rate / static_cast<double>(n);
        f[static_cast<std::size_t>(j)] *=
            amp * std::exp(Complex(0.0, 0.5 * beta2 * w * w * length));
    }
    fft.inv(t, f);

    SampledSignal out = in;
    out.samples = Eigen::Map<const VecC>(t.data(), n);
    return out;
}

double separation_loss(const Eigen::Ref<const VecR>& decided, const BitSequence& target) {
    if (decided.size() != target.size())
        throw std::invalid_argument("separation_loss: length mismatch");
    double m0 = 0, m1 = 0;
    Index n0 = 0, n1 = 0;
    for (Index i = 0; i < decided.size(); ++i) {
        if (target.bits[static_cast<std::size_t>(i)]) { m1 += decided[i]; ++n1; }
        else { m0 += decided[i]; ++n0; }
    }
    if (n0 == 0 || n1 == 0)
        throw std::invalid_argument("separation_loss: need both classes present");
    m0 /= static_cast<double>(n0);
    m1 /= static_cast<double>(n1);
    double v0 = 0, v1 = 0;
    for (Index i = 0; i < decided.size(); ++i) {
        const double d = decided[i];
        if (target.bits[static_cast<std::size_t>(i)]) v1 += (d - m1) * (d - m1);
        else v0 += (d - m0) * (d - m0);
    }
    const double s0 = std::sqrt(v0 / static_cast<double>(n0));
    const double s1 = std::sqrt(v1 / static_cast<double>(n1));
    return -(m1 - m0) / (s1 + s0 + 1e-15);
}

PsoResult pso_train(const std::function<double(const VecR&)>& objective,
                    const Eigen::Ref<const VecR>& lo,
                    const Eigen::Ref<const VecR>& hi, const PsoOptions& opts) {
    const Index dim = lo.size();
    if (dim == 0 || hi.size() != dim)
        throw std::invalid_argument("pso_train: bound size mismatch");
    for (Index i = 0; i < dim; ++i)
        if (!(hi[i] > lo[i]))
            throw std::invalid_argument("pso_train: need hi > lo in every dimension");
    if (opts.n_particles < 2 || opts.max_iter < 0)
        throw std::invalid_argument("pso_train: bad swarm size or iteration count");

    Rng rng(opts.seed);
    const VecR span = hi - lo;
    const VecR vmax = opts.velocity_clamp * span;

    auto eval = [&](const VecR& x) {
        const double v = objective(x);
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "pso_train: objective returned a non-finite value at [";
            for (Index i = 0; i < x.size(); ++i)
                os << (i ? ", " : "") << x[i];
            os << "]";
            throw std::runtime_error(os.str());
        }
        return v;
    };

    const int np = opts.n_particles;
    MatR pos(dim, np), vel = MatR::Zero(dim, np), pbest(dim, np);
    VecR pval(np);
    for (int j = 0; j < np; ++j) {
        for (Index i = 0; i < dim; ++i)
            pos(i, j) = rng.uniform(lo[i], hi[i]);
        pval[j] = eval(pos.col(j));
        pbest.col(j) = pos.col(j);
    }
    Index gbest_idx = 0;
    pval.minCoeff(&gbest_idx);
    VecR gbest = pbest.col(gbest_idx);
    double gval = pval[gbest_idx];

    PsoResult res;
    res.trace.resize(opts.max_iter + 1);
    res.trace[0] = gval;

    for (int it = 1; it <= opts.max_iter; ++it) {
        for (int j = 0; j < np; ++j) {
            for (Index i = 0; i < dim; ++i) {
                const double r1 = rng.uniform();
                const double r2 = rng.uniform();
                double v = opts.inertia * vel(i, j) +
                           opts.c_personal * r1 * (pbest(i, j) - pos(i, j)) +
                           opts.c_global * r2 * (gbest[i] - pos(i, j));
                v = std::clamp(v, -vmax[i], vmax[i]);
                vel(i, j) = v;
                pos(i, j) = std::clamp(pos(i, j) + v, lo[i], hi[i]);
            }
            const double f = eval(pos.col(j));
            if (f < pval[j]) {
                pval[j] = f;
                pbest.col(j) = pos.col(j);
                if (f < gval) {
                    gval = f;
                    gbest = pos.col(j);
                }
            }
        }
        res.trace[it] = gval;
    }
    res.best_position = gbest;
    res.best_value = gval;
    return res;
}

void EqualizeParams::validate() const {
    if (!(bitrate > 0.0) || samples_per_bit < 4 || prbs_order < 2)
        throw std::invalid_argument("equalize: bad signal parameters");
    if (fiber_length < 0.0)
        throw std::invalid_argument("equalize: negative fiber length");
    if (!(power_high > power_low) || power_low < 0.0)
        throw std::invalid_argument("equalize: need power_high > power_low >= 0");
    if (n_taps < 1 || tap_spacing < 0.0 || !(weight_bound > 0.0))
        throw std::invalid_argument("equalize: bad tap bank parameters");
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
        throw std::invalid_argument("equalize: train_fraction must be in (0, 1)");
}

namespace {

ClassStats class_stats(const Eigen::Ref<const VecR>& x, const BitSequence& b) {
    ClassStats s;
    double v0 = 0, v1 = 0;
    Index n0 = 0, n1 = 0;
    for (Index i = 0; i < x.size(); ++i) {
        if (b.bits[static_cast<std::size_t>(i)]) { s.mean1 += x[i]; ++n1; }
        else { s.mean0 += x[i]; ++n0; }
    }
    s.mean0 /= std::max<Index>(n0, 1);
    s.mean1 /= std::max<Index>(n1, 1);
    for (Index i = 0; i < x.size(); ++i) {
        const double d = x[i];
        if (b.bits[static_cast<std::size_t>(i)]) v1 += (d - s.mean1) * (d - s.mean1);
        else v0 += (d - s.mean0) * (d - s.mean0);
    }
    s.sigma0 = std::sqrt(v0 / std::max<Index>(n0, 1));
    s.sigma1 = std::sqrt(v1 / std::max<Index>(n1, 1));
    return s;
}

BitSequence slice_bits(const BitSequence& b, Index lo, Index n) {
    BitSequence out;
    out.bitrate = b.bitrate;
    out.bits.assign(b.bits.begin() + lo, b.bits.begin() + lo + n);
    return out;
}

} // namespace

EqualizeReport equalize_experiment(const EqualizeParams& p, std::uint64_t seed) {
    p.validate();

    const BitSequence bits = prbs(p.prbs_order, 1, p.bitrate);
    const SampledSignal tx = nrz_modulate(bits, p.samples_per_bit, p.power_high, p.power_low);
    const double rate = tx.sample_rate;
    const double beta2 = beta2_from_dispersion(p.dispersion_ps_nm_km, p.wavelength);
    const SampledSignal rx = dispersion_channel(tx, p.fiber_length, beta2);

    DcpParams bank;
    bank.n_taps = p.n_taps;
    bank.tap_spacing = p.tap_spacing;
    bank.weights = VecC::Zero(p.n_taps);
    const auto delays = tap_delays(bank, rate);
    const Index d_max = delays.back();

    // Tap-delayed field matrix: column k holds tap k aligned with the
    // d_max-trimmed output timeline, so a weight change is one mat-vec.
    const Index n_out = rx.size() - d_max;
    if (n_out < 8 * p.samples_per_bit)
        throw std::invalid_argument("equalize: signal shorter than the tap span");
    Eigen::MatrixXcd taps(n_out, p.n_taps);
    for (Index k = 0; k < p.n_taps; ++k)
        taps.col(k) = rx.samples.segment(d_max - delays[static_cast<std::size_t>(k)], n_out);

    const int spb = p.samples_per_bit;
    const Index n_bits = bits.size();
    const Index guard = std::max<Index>(8, 2 + d_max / spb); // edge + tap washout
    const Index n_dec = n_bits - 2 * guard;
    if (n_dec < 64)
        throw std::invalid_argument("equalize: too few decision bits after guards");

    const BitSequence dec_bits = slice_bits(bits, guard, n_dec);
    const Index n_train = static_cast<Index>(std::floor(p.train_fraction *
                                                        static_cast<double>(n_dec)));
    const Index n_test = n_dec - n_train;
    const BitSequence train_bits = slice_bits(dec_bits, 0, n_train);
    const BitSequence test_bits = slice_bits(dec_bits, n_train, n_test);

    const auto decide_tx = [&](const VecR& analog) {
        // analog is on the un-trimmed timeline
        VecR d(n_dec);
        for (Index b = 0; b < n_dec; ++b)
            d[b] = analog[(guard + b) * spb + spb / 2];
        return d;
    };
    const auto decide_dcp = [&](const VecR& analog) {
        // analog is on the d_max-trimmed timeline
        VecR d(n_dec);
        for (Index b = 0; b < n_dec; ++b)
            d[b] = analog[(guard + b) * spb + spb / 2 - d_max];
        return d;
    };

    EqualizeReport rep;
    rep.n_test_bits = n_test;

    // Plain branch
    const VecR plain = detect(rx, p.detector, substream_seed(seed, 1));
    rep.detected_plain = plain;
    rep.detected_rate = rate;
    rep.dcp_trim = d_max;
    const VecR plain_dec = decide_tx(plain);
    {
        const double thr = best_threshold(plain_dec.head(n_train), train_bits);
        const BitSequence pred = threshold_decide(plain_dec.tail(n_test), thr, p.bitrate);
        rep.ber_plain = ber(pred, test_bits);
        rep.floor_plain = rep.ber_plain == 0.0;
        rep.stats_plain = class_stats(plain_dec.tail(n_test), test_bits);
        rep.separation_plain = separation_loss(plain_dec.tail(n_test), test_bits);
    }

    // Tap-bank branch: train complex weights on the decision separation.
    SampledSignal combined;
    combined.sample_rate = rate;
    const std::uint64_t det_seed = substream_seed(seed, 2);
    const auto branch_decisions = [&](const VecR& w) {
        VecC cw(p.n_taps);
        for (Index k = 0; k < p.n_taps; ++k)
            cw[k] = Complex(w[2 * k], w[2 * k + 1]);
        combined.samples = taps * cw;
        const VecR det = detect(combined, p.detector, det_seed);
        return decide_dcp(det);
    };
    const auto objective = [&](const VecR& w) {
        return separation_loss(branch_decisions(w).head(n_train), train_bits);
    };

    VecR lo = VecR::Constant(2 * p.n_taps, -p.weight_bound);
    VecR hi = VecR::Constant(2 * p.n_taps, p.weight_bound);
    PsoOptions pso = p.pso;
    pso.seed = substream_seed(seed, 3);
    const PsoResult sol = pso_train(objective, lo, hi, pso);

    rep.pso_trace = sol.trace;
    rep.trained_weights.resize(p.n_taps);
    for (Index k = 0; k < p.n_taps; ++k)
        rep.trained_weights[k] = Complex(sol.best_position[2 * k],
                                         sol.best_position[2 * k + 1]);

    const VecR dcp_dec = branch_decisions(sol.best_position);
    rep.detected_dcp = detect(combined, p.detector, det_seed); // combined holds the best weights
    {
        const double thr = best_threshold(dcp_dec.head(n_train), train_bits);
        const BitSequence pred = threshold_decide(dcp_dec.tail(n_test), thr, p.bitrate);
        rep.ber_dcp = ber(pred, test_bits);
        rep.floor_dcp = rep.ber_dcp == 0.0;
        rep.stats_dcp = class_stats(dcp_dec.tail(n_test), test_bits);
        rep.separation_dcp = separation_loss(dcp_dec.tail(n_test), test_bits);
    }
    return rep;
}

void write_equalize_report_json(const std::string& path, const EqualizeReport& r) {
    nlohmann::json j;
    j["ber_plain"] = r.ber_plain;
    j["ber_dcp"] = r.ber_dcp;
    j["floor_plain"] = r.floor_plain;
    j["floor_dcp"] = r.floor_dcp;
    j["n_test_bits"] = r.n_test_bits;
    j["separation_plain"] = r.separation_plain;
    j["separation_dcp"] = r.separation_dcp;
    j["stats_plain"] = {{"mean0", r.stats_plain.mean0}, {"sigma0", r.stats_plain.sigma0},
                        {"mean1", r.stats_plain.mean1}, {"sigma1", r.stats_plain.sigma1}};
    j["stats_dcp"] = {{"mean0", r.stats_dcp.mean0}, {"sigma0", r.stats_dcp.sigma0},
                      {"mean1", r.stats_dcp.mean1}, {"sigma1", r.stats_dcp.sigma1}};
    std::vector<std::vector<double>> w;
    for (Index k = 0; k < r.trained_weights.size(); ++k)
        w.push_back({r.trained_weights[k].real(), r.trained_weights[k].imag()});
    j["trained_weights"] = w;
    j["pso_trace"] = std::vector<double>(r.pso_trace.begin(), r.pso_trace.end());
    std::ofstream f(path);
    if (!f)
        throw std::runtime_error("write_equalize_report_json: cannot open " + path);
    f << j.dump(2) << "\n";
}

void write_eye_csv(const std::string& path, const Eigen::Ref<const VecR>& detected,
                   double sample_rate, double bitrate) {
    if (!(sample_rate > 0.0) || !(bitrate > 0.0))
        throw std::invalid_argument("write_eye_csv: rates must be positive");
    std::ofstream f(path);
    if (!f)
        throw std::runtime_error("write_eye_csv: cannot open " + path);
    f << "bit_phase,power_w\n";
    char buf[80];
    const double spb = sample_rate / bitrate;
    for (Index i = 0; i < detected.size(); ++i) {
        const double phase = std::fmod(static_cast<double>(i) / spb, 1.0);
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", phase, detected[i]);
        f << buf;
    }
}

} // namespace ringrc
