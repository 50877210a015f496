#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include "json.hpp"

#include "ringrc/dcp.hpp"
#include "ringrc/errors.hpp"
#include "ringrc/experiments.hpp"
#include "ringrc/mrr.hpp"
#include "ringrc/reservoir.hpp"
#include "ringrc/rng.hpp"
#include "ringrc/signal.hpp"
#include "ringrc/tasks.hpp"
#include "ringrc/version.hpp"

namespace ringrc {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// Streams >= 2^32 are reserved for run-wide draws (task data, masks, input
// matrices); cell indices stay below, so the two can never collide.
constexpr std::uint64_t kShared = 1ULL << 32;

[[noreturn]] void config_error(const Config& cfg, const std::string& msg) {
    throw ParseError(cfg.source_name() + ": " + msg);
}

VecR linspace(double lo, double hi, Index n) {
    VecR v(n);
    for (Index i = 0; i < n; ++i)
        v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

/// Grid axis values: the [grid.<name>] section when present, else the fallback.
VecR axis_values(const Config& cfg, const std::string& name, const VecR& fallback) {
    for (const auto& a : cfg.grid_axes())
        if (a.name == name)
            return a.values;
    return fallback;
}

/// Rejects grid sections this experiment kind does not sweep.
void check_axes(const Config& cfg, std::initializer_list<const char*> allowed) {
    for (const auto& sec : cfg.section_names()) {
        if (sec.rfind("grid.", 0) != 0)
            continue;
        const std::string name = sec.substr(5);
        bool ok = false;
        for (const char* a : allowed)
            if (name == a)
                ok = true;
        if (!ok) {
            std::string msg = "unsupported grid axis '" + name + "'; this kind sweeps {";
            bool first = true;
            for (const char* a : allowed) {
                msg += std::string(first ? "" : ", ") + a;
                first = false;
            }
            config_error(cfg, msg + "}");
        }
    }
}

MrrParams device_from(const Config& cfg, const std::string& fallback_preset,
                      std::string& preset_name) {
    preset_name = cfg.get_string("device", "preset", fallback_preset);
    MrrParams p;
    try {
        p = mrr_preset(preset_name);
    } catch (const std::invalid_argument& e) {
        config_error(cfg, std::string("device.preset: ") + e.what());
    }
    using U = Config::Unit;
    if (cfg.has("device", "radius")) p.radius = cfg.get_quantity("device", "radius", U::Length);
    if (cfg.has("device", "n0")) p.n0 = cfg.get_quantity("device", "n0", U::None);
    if (cfg.has("device", "dn_dT")) p.dn_dT = cfg.get_quantity("device", "dn_dT", U::None);
    if (cfg.has("device", "dn_dN")) p.dn_dN = cfg.get_quantity("device", "dn_dN", U::None);
    if (cfg.has("device", "q_intrinsic"))
        p.q_intrinsic = cfg.get_quantity("device", "q_intrinsic", U::None);
    if (cfg.has("device", "coupling_k2"))
        p.coupling_k2 = cfg.get_quantity("device", "coupling_k2", U::None);
    if (cfg.has("device", "tau_fc")) p.tau_fc = cfg.get_quantity("device", "tau_fc", U::Time);
    if (cfg.has("device", "tau_th")) p.tau_th = cfg.get_quantity("device", "tau_th", U::Time);
    if (cfg.has("device", "tpa_gen_coeff"))
        p.tpa_gen_coeff = cfg.get_quantity("device", "tpa_gen_coeff", U::None);
    if (cfg.has("device", "thermal_heating_coeff"))
        p.thermal_heating_coeff = cfg.get_quantity("device", "thermal_heating_coeff", U::None);
    if (cfg.has("device", "tpa_loss_coeff"))
        p.tpa_loss_coeff = cfg.get_quantity("device", "tpa_loss_coeff", U::None);
    if (cfg.has("device", "cold_resonance_wavelength"))
        p.cold_resonance_wavelength =
            cfg.get_quantity("device", "cold_resonance_wavelength", U::Length);
    if (cfg.has("device", "resonance_order"))
        p.resonance_order = static_cast<int>(cfg.get_int("device", "resonance_order"));
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        config_error(cfg, std::string("[device]: ") + e.what());
    }
    return p;
}

/// Laser offset from the cold resonance in Hz. A negative wavelength shift
/// means the laser sits blue of the resonance, i.e. a positive detuning.
double shift_to_detuning(const MrrParams& p, double shift_m) {
    return -shift_m * derive_rates(p).nu0 / p.cold_resonance_wavelength;
}

double resolve_detuning(const Config& cfg, const std::string& sec, const MrrParams& p,
                        double fallback_hz) {
    const bool hd = cfg.has(sec, "detuning");
    const bool hw = cfg.has(sec, "wavelength_shift");
    if (hd && hw)
        config_error(cfg, "[" + sec + "]: give either detuning or wavelength_shift, not both");
    if (hd)
        return cfg.get_quantity(sec, "detuning", Config::Unit::Frequency);
    if (hw)
        return shift_to_detuning(p, cfg.get_quantity(sec, "wavelength_shift",
                                                     Config::Unit::Length));
    return fallback_hz;
}

VecR lambda_grid_from(const Config& cfg) {
    if (cfg.has("readout", "lambda_grid")) {
        const auto v = cfg.get_list("readout", "lambda_grid", Config::Unit::None);
        return Eigen::Map<const VecR>(v.data(), static_cast<Index>(v.size()));
    }
    VecR g(9);
    g << 1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0;
    return g;
}

int resolve_workers(const RunOptions& opts) {
    if (opts.n_workers > 0)
        return opts.n_workers;
    if (const char* env = std::getenv("RINGRC_WORKERS")) {
        const int v = std::atoi(env);
        if (v > 0)
            return v;
    }
    return 1;
}

/// Runs body(cell) for every cell, striped over n_workers threads. Cells are
/// independent; any result ordering is imposed by cell index, so thread
/// scheduling cannot change the output. First exception wins and rethrows.
void parallel_cells(Index n_cells, int n_workers, const std::function<void(Index)>& body) {
    n_workers = static_cast<int>(std::min<Index>(std::max(n_workers, 1), n_cells));
    if (n_workers <= 1) {
        for (Index c = 0; c < n_cells; ++c)
            body(c);
        return;
    }
    std::atomic<bool> abort{false};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) {
        pool.emplace_back([&, w] {
            for (Index c = w; c < n_cells; c += n_workers) {
                if (abort.load())
                    return;
                try {
                    body(c);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(mu);
                    if (!failure)
                        failure = std::current_exception();
                    abort.store(true);
                    return;
                }
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_trace_csv(const fs::path& path, const Eigen::Ref<const VecR>& values,
                     double sample_rate, double t_start) {
    std::ofstream f(path);
    if (!f)
        throw std::runtime_error("cannot open trace file " + path.string());
    f << "t_s,power_w\n";
    for (Index i = 0; i < values.size(); ++i)
        f << fmt17(t_start + static_cast<double>(i) / sample_rate) << "," << fmt17(values[i])
          << "\n";
}

fs::path trace_path(const fs::path& out, Index cell) {
    char name[32];
    std::snprintf(name, sizeof name, "cell_%05lld.csv", static_cast<long long>(cell));
    return out / "trace" / name;
}

// --- shared readout plumbing ---------------------------------------------

struct BitScore {
    double ber_v = 0.0;
    bool floor = false;
    Index n_test = 0;
};

/// Ridge-with-CV readout on binary targets: threshold picked on the training
/// block, BER scored on the held-out tail. Error-free test runs report the
/// statistical floor 1/M instead of zero.
BitScore score_bits(const Eigen::Ref<const MatR>& features, const std::vector<int>& target,
                    double train_fraction, const VecR& grid, int folds) {
    const Index m = features.cols();
    const Index m_tr = static_cast<Index>(std::llround(train_fraction * static_cast<double>(m)));
    const Index m_te = m - m_tr;
    if (m_tr < folds || m_te < 8)
        throw std::invalid_argument("bit readout: too few samples for the train/test split");
    MatR y(1, m_tr);
    for (Index j = 0; j < m_tr; ++j)
        y(0, j) = target[static_cast<std::size_t>(j)];
    const RidgeReadout ro = ridge_cv(features.leftCols(m_tr), y, grid, folds, 0);
    const VecR s_tr = ro.predict(features.leftCols(m_tr)).row(0).transpose();
    BitSequence b_tr{std::vector<int>(target.begin(), target.begin() + m_tr), 1.0};
    const double thr = best_threshold(s_tr, b_tr);
    const VecR s_te = ro.predict(features.rightCols(m_te)).row(0).transpose();
    BitSequence b_te{std::vector<int>(target.begin() + m_tr, target.end()), 1.0};
    const BitSequence pred = threshold_decide(s_te, thr, 1.0);
    BitScore s;
    s.n_test = m_te;
    s.ber_v = ber(pred, b_te);
    s.floor = s.ber_v == 0.0;
    if (s.floor)
        s.ber_v = 1.0 / static_cast<double>(m_te);
    return s;
}

/// Per-bit virtual-node features from a measured trace: discards the washout
/// bits, optionally concatenates the n2-1 preceding bits and trims the
/// wrapped leading columns. `lead_bits` reports washout + n2 - 1 so targets
/// can be aligned.
MatR bit_features(const Eigen::Ref<const VecR>& meas, Index n_bits, Index washout_bits,
                  int spb, double bitrate, int n_virtual, double rate, int n2,
                  Index& lead_bits) {
    const VecR seg = meas.segment(washout_bits * spb, (n_bits - washout_bits) * spb);
    StateMatrix sv = sample_virtual_nodes(seg, bitrate, n_virtual, rate);
    if (n2 > 1)
        sv = augment_rbits(sv, n2);
    const Index drop_cols = n2 - 1;
    lead_bits = washout_bits + drop_cols;
    return sv.features.rightCols(sv.features.cols() - drop_cols);
}

/// Oversampling factor so the RK4 step resolves the photon lifetime while
/// the recorded grid still lands exactly on the drive grid.
Index oversample_for(const MrrParams& p, double drive_rate) {
    const double dt_max = derive_rates(p).tau_ph * 0.1 * (1.0 - 1e-9);
    return std::max<Index>(1, static_cast<Index>(std::ceil(1.0 / (drive_rate * dt_max))));
}

struct ReadoutSettings {
    VecR grid;
    int folds = 5;
    double train_fraction = 0.6;
    int n2 = 1;
};

ReadoutSettings readout_from(const Config& cfg) {
    ReadoutSettings r;
    r.grid = lambda_grid_from(cfg);
    r.folds = static_cast<int>(cfg.get_int("readout", "folds", 5));
    r.train_fraction = cfg.get_quantity("readout", "train_fraction", Config::Unit::None, 0.6);
    r.n2 = static_cast<int>(cfg.get_int("readout", "n2", 1));
    if (r.folds < 2 || r.n2 < 1 || !(r.train_fraction > 0.0 && r.train_fraction < 1.0))
        config_error(cfg, "[readout]: need folds >= 2, n2 >= 1, train_fraction in (0, 1)");
    return r;
}

// --- experiment context ---------------------------------------------------

struct RunCtx {
    const Config& cfg;
    fs::path out;
    std::uint64_t seed = 0;
    int workers = 1;
    bool dump = false;
    ojson resolved;
    std::vector<std::pair<std::string, ResultMap>> extra_maps;
    std::vector<std::string> extra_files;
};

// --- stability_map --------------------------------------------------------

ResultMap run_stability(RunCtx& c) {
    const Config& cfg = c.cfg;
    check_axes(cfg, {"power", "detuning"});
    std::string preset;
    const MrrParams p = device_from(cfg, "borghi2021", preset);
    const MrrRates r = derive_rates(p);

    VecR powers = axis_values(cfg, "power", linspace(0.2e-3, 5e-3, 20));
    VecR dets = axis_values(cfg, "detuning", linspace(-10e9, 4e9, 20));
    std::sort(powers.begin(), powers.end());
    std::sort(dets.begin(), dets.end());

    const double settle = cfg.get_quantity("integration", "settle", Config::Unit::Time, 6e-6);
    const double observe = cfg.get_quantity("integration", "observe", Config::Unit::Time, 12e-6);
    StabilityOptions so;
    so.eps_stab = cfg.get_quantity("integration", "eps_stab", Config::Unit::None, 0.02);
    so.record_rate =
        cfg.get_quantity("integration", "record_rate", Config::Unit::Frequency, 50e6);
    const auto divisor = cfg.get_int("integration", "dt_divisor", 10);
    if (divisor < 10)
        config_error(cfg, "integration.dt_divisor: must be >= 10 to resolve the cavity");
    so.dt = r.tau_ph / static_cast<double>(divisor);
    so.early_exit = cfg.get_bool("integration", "early_exit", true);

    StabilityMap sm;
    try {
        sm = stability_map(p, powers, dets, settle, observe, so, c.workers);
    } catch (const std::invalid_argument& e) {
        config_error(cfg, std::string("stability sweep: ") + e.what());
    }

    ResultMap m;
    m.preset = preset;
    m.axes = {{"power_w", powers}, {"detuning_hz", dets}};
    m.metric_names = {"is_sp", "sp_freq_hz"};
    const Index n = m.n_cells();
    m.metrics.resize(n, 2);
    m.diverged.resize(static_cast<std::size_t>(n));
    m.cell_seeds.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < powers.size(); ++i)
        for (Index j = 0; j < dets.size(); ++j) {
            const Index cell = i * dets.size() + j;
            m.metrics(cell, 0) = sm.is_sp(i, j);
            m.metrics(cell, 1) = sm.sp_freq(i, j);
            m.diverged[static_cast<std::size_t>(cell)] = sm.is_sp(i, j) == 2 ? 1 : 0;
            m.cell_seeds[static_cast<std::size_t>(cell)] =
                substream_seed(c.seed, static_cast<std::uint64_t>(cell));
        }

    write_stability_map_csv((c.out / "stability.csv").string(), sm);
    c.extra_files.push_back("stability.csv");

    if (c.dump) {
        // Re-integrate each cell at the analysis rate and keep the drop trace.
        const double duration = settle + observe;
        const Index dec = std::max<Index>(
            Index(1), static_cast<Index>(std::llround(1.0 / (so.record_rate * so.dt))));
        const Index n_coarse = static_cast<Index>(std::ceil(duration / (so.dt * dec)));
        parallel_cells(n, c.workers, [&](Index cell) {
            const Index i = cell / dets.size(), j = cell % dets.size();
            SampledSignal cw;
            cw.samples = VecC::Constant(n_coarse, Complex(std::sqrt(powers[i]), 0.0));
            cw.sample_rate = 1.0 / (so.dt * static_cast<double>(dec));
            try {
                const IntegrateResult res = integrate(p, MrrState{}, cw, so.dt, dets[j], dec);
                write_trace_csv(trace_path(c.out, cell), res.drop.power(),
                                res.drop.sample_rate, 0.0);
            } catch (const DivergenceError&) {
            }
        });
    }

    c.resolved["settle_s"] = settle;
    c.resolved["observe_s"] = observe;
    c.resolved["dt_s"] = so.dt;
    c.resolved["record_rate_hz"] = so.record_rate;
    c.resolved["eps_stab"] = so.eps_stab;
    c.resolved["tau_ph_s"] = r.tau_ph;
    return m;
}

// --- logic_task -----------------------------------------------------------

ResultMap run_logic(RunCtx& c) {
    const Config& cfg = c.cfg;
    check_axes(cfg, {"power", "detuning", "bitrate"});
    std::string preset;
    const MrrParams p = device_from(cfg, "bazzanella2022", preset);

    LogicTaskSpec task;
    try {
        task.op = logic_op_from_string(cfg.get_string("task", "op", "XOR"));
    } catch (const std::invalid_argument& e) {
        config_error(cfg, std::string("task.op: ") + e.what());
    }
    task.n1 = static_cast<int>(cfg.get_int("task", "n1", 1));
    const ReadoutSettings ro = readout_from(cfg);
    task.n2 = static_cast<int>(cfg.get_int("task", "n2", ro.n2));
    if (task.n1 < 0 || task.n2 < 1)
        config_error(cfg, "[task]: need n1 >= 0 and n2 >= 1");

    const int n_virtual = static_cast<int>(cfg.get_int("encoding", "n_virtual", 12));
    const int spn = static_cast<int>(cfg.get_int("encoding", "samples_per_node", 2));
    const int prbs_order = static_cast<int>(cfg.get_int("input", "prbs_order", 9));
    const Index n_bits = cfg.get_int("input", "n_bits", 600);
    const Index washout = cfg.get_int("input", "washout_bits", 40);
    const double p_low_frac =
        cfg.get_quantity("input", "p_low_fraction", Config::Unit::None, 0.0);
    const double det_bw =
        cfg.get_quantity("detector", "bandwidth", Config::Unit::Frequency, 2e9);
    const double noise_frac =
        cfg.get_quantity("detector", "noise_fraction", Config::Unit::None, 0.05);
    if (n_virtual < 1 || spn < 1 || n_bits < 1)
        config_error(cfg, "[encoding]/[input]: counts must be positive");
    if (washout < task.n1 + task.n2 || n_bits - washout < 50)
        config_error(cfg, "[input]: need washout_bits >= n1 + n2 and at least 50 kept bits");

    VecR powers = axis_values(
        cfg, "power", VecR::Constant(1, cfg.get_quantity("drive", "power",
                                                         Config::Unit::Power, 1e-3)));
    VecR dets = axis_values(
        cfg, "detuning", VecR::Constant(1, resolve_detuning(cfg, "drive", p, -2e9)));
    VecR rates = axis_values(
        cfg, "bitrate", VecR::Constant(1, cfg.get_quantity("drive", "bitrate",
                                                           Config::Unit::Bitrate, 100e6)));

    ResultMap m, mb;
    m.preset = mb.preset = preset;
    m.axes = {{"power_w", powers}, {"detuning_hz", dets}, {"bitrate_bps", rates}};
    mb.axes = m.axes;
    m.metric_names = mb.metric_names = {"ber", "ber_floor", "n_test_bits"};
    const Index n = m.n_cells();
    m.metrics.resize(n, 3);
    mb.metrics.resize(n, 3);
    m.diverged.assign(static_cast<std::size_t>(n), 0);
    mb.diverged.assign(static_cast<std::size_t>(n), 0);
    m.cell_seeds.resize(static_cast<std::size_t>(n));
    mb.cell_seeds.resize(static_cast<std::size_t>(n));

    const std::uint64_t period = (1ULL << prbs_order) - 1;
    const int spb = n_virtual * spn;

    parallel_cells(n, c.workers, [&](Index cell) {
        const Index ci = cell / (dets.size() * rates.size());
        const Index cj = cell / rates.size() % dets.size();
        const Index ck = cell % rates.size();
        const double power = powers[ci], detuning = dets[cj], bitrate = rates[ck];
        const std::uint64_t cs = substream_seed(c.seed, static_cast<std::uint64_t>(cell));
        m.cell_seeds[static_cast<std::size_t>(cell)] = cs;
        mb.cell_seeds[static_cast<std::size_t>(cell)] = cs;

        const BitSequence base = prbs(prbs_order, 1 + cs % period, bitrate);
        BitSequence bits;
        bits.bitrate = bitrate;
        bits.bits.resize(static_cast<std::size_t>(n_bits));
        for (Index k = 0; k < n_bits; ++k)
            bits.bits[static_cast<std::size_t>(k)] =
                base.bits[static_cast<std::size_t>(k % static_cast<Index>(period))];
        const BitSequence target = delayed_logic_target(bits, task);

        const double rate = bitrate * spb;
        const SampledSignal drive = nrz_modulate(bits, spb, power, p_low_frac * power);
        const Index over = oversample_for(p, rate);
        const double dt = 1.0 / (rate * static_cast<double>(over));

        IntegrateResult res;
        try {
            res = integrate(p, MrrState{}, drive, dt, detuning, over);
        } catch (const DivergenceError&) {
            m.diverged[static_cast<std::size_t>(cell)] = 1;
            mb.diverged[static_cast<std::size_t>(cell)] = 1;
            m.metrics.row(cell).setConstant(std::numeric_limits<double>::quiet_NaN());
            mb.metrics.row(cell).setConstant(std::numeric_limits<double>::quiet_NaN());
            return;
        }
        SampledSignal drop;
        drop.samples = res.drop.samples.segment(1, n_bits * spb);
        drop.sample_rate = rate;

        const DetectorModel clean_det{det_bw, 0.0, false};
        const auto measure = [&](const SampledSignal& s, std::uint64_t stream) {
            const VecR clean = detect(s, clean_det, 0);
            const double sigma = noise_frac * clean.maxCoeff();
            if (sigma <= 0.0)
                return clean;
            const DetectorModel noisy{det_bw, sigma, true};
            return detect(s, noisy, substream_seed(cs, stream));
        };
        VecR meas = measure(drop, 1);
        VecR meas_in = measure(drive, 2);
        meas /= power; // dimensionless features; keeps ridge weights O(1)
        meas_in /= power;

        Index lead = 0;
        const MatR f_ring =
            bit_features(meas, n_bits, washout, spb, bitrate, n_virtual, rate, task.n2, lead);
        const MatR f_in = bit_features(meas_in, n_bits, washout, spb, bitrate, n_virtual,
                                       rate, task.n2, lead);
        const std::vector<int> tg(target.bits.begin() + lead, target.bits.end());

        const BitScore sr = score_bits(f_ring, tg, ro.train_fraction, ro.grid, ro.folds);
        const BitScore sb = score_bits(f_in, tg, ro.train_fraction, ro.grid, ro.folds);
        m.metrics(cell, 0) = sr.ber_v;
        m.metrics(cell, 1) = sr.floor ? 1.0 : 0.0;
        m.metrics(cell, 2) = static_cast<double>(sr.n_test);
        mb.metrics(cell, 0) = sb.ber_v;
        mb.metrics(cell, 1) = sb.floor ? 1.0 : 0.0;
        mb.metrics(cell, 2) = static_cast<double>(sb.n_test);

        if (c.dump)
            write_trace_csv(trace_path(c.out, cell), meas * power, rate, 0.0);
    });

    c.extra_maps.emplace_back("map_baseline.csv", std::move(mb));
    c.resolved["op"] = to_string(task.op);
    c.resolved["n1"] = task.n1;
    c.resolved["n2"] = task.n2;
    c.resolved["n_virtual"] = n_virtual;
    c.resolved["samples_per_node"] = spn;
    c.resolved["samples_per_bit"] = spb;
    c.resolved["n_bits"] = n_bits;
    c.resolved["washout_bits"] = washout;
    c.resolved["prbs_order"] = prbs_order;
    c.resolved["detector_bandwidth_hz"] = det_bw;
    c.resolved["detector_noise_fraction"] = noise_frac;
    c.resolved["sample_rate_hz_at_max_bitrate"] = rates.maxCoeff() * spb;
    return m;
}

// --- xor_rc (analytic pump-probe reservoir) -------------------------------

ResultMap run_xor_rc(RunCtx& c) {
    const Config& cfg = c.cfg;
    check_axes(cfg, {"bitrate"});

    LogicTaskSpec task;
    try {
        task.op = logic_op_from_string(cfg.get_string("task", "op", "XOR"));
    } catch (const std::invalid_argument& e) {
        config_error(cfg, std::string("task.op: ") + e.what());
    }
    task.n1 = static_cast<int>(cfg.get_int("task", "n1", 1));
    ReadoutSettings ro = readout_from(cfg);
    task.n2 = static_cast<int>(cfg.get_int("task", "n2", 2));
    if (task.n1 < 0 || task.n2 < 1)
        config_error(cfg, "[task]: need n1 >= 0 and n2 >= 1");

    const double tau = cfg.get_quantity("reservoir", "tau_fc", Config::Unit::Time, 45e-9);
    PumpProbeCoeffs coeffs;
    coeffs.tau_fc = tau;
    coeffs.c0 = cfg.get_quantity("reservoir", "c0", Config::Unit::None, 0.1);
    coeffs.c1 = cfg.get_quantity("reservoir", "c1_tau", Config::Unit::None, 1.0) / tau;
    coeffs.c2 = cfg.get_quantity("reservoir", "c2_tau", Config::Unit::None, -0.6) / tau;
    const int n_virtual = static_cast<int>(cfg.get_int("encoding", "n_virtual", 3));
    const int spn_cfg = static_cast<int>(cfg.get_int("encoding", "samples_per_node", 8));
    const double alpha = cfg.get_quantity("encoding", "alpha", Config::Unit::None, 1.0);
    const double u0 = cfg.get_quantity("encoding", "u0", Config::Unit::None, 0.0);
    const int prbs_order = static_cast<int>(cfg.get_int("input", "prbs_order", 9));
    const Index n_bits = cfg.get_int("input", "n_bits", 800);
    const Index washout = cfg.get_int("input", "washout_bits", 50);
    if (!(tau > 0.0) || n_virtual < 1 || spn_cfg < 1)
        config_error(cfg, "[reservoir]/[encoding]: need tau_fc > 0 and positive counts");
    if (washout < task.n1 + task.n2 || n_bits - washout < 50)
        config_error(cfg, "[input]: need washout_bits >= n1 + n2 and at least 50 kept bits");

    VecR def_rates(6);
    def_rates << 5e6, 10e6, 1.0 / tau / 2.0, 1.0 / tau, 2.0 / tau, 10.0 / tau;
    VecR rates = axis_values(cfg, "bitrate", def_rates);

    ResultMap m, mb;
    m.preset = mb.preset = "pump_probe";
    m.axes = {{"bitrate_bps", rates}};
    mb.axes = m.axes;
    m.metric_names = mb.metric_names = {"ber", "ber_floor", "n_test_bits"};
    const Index n = m.n_cells();
    m.metrics.resize(n, 3);
    mb.metrics.resize(n, 3);
    m.diverged.assign(static_cast<std::size_t>(n), 0);
    mb.diverged.assign(static_cast<std::size_t>(n), 0);
    m.cell_seeds.resize(static_cast<std::size_t>(n));
    mb.cell_seeds.resize(static_cast<std::size_t>(n));

    const std::uint64_t period = (1ULL << prbs_order) - 1;
    MatR w_in = MatR::Ones(n_virtual, 1);

    parallel_cells(n, c.workers, [&](Index cell) {
        const double bitrate = rates[cell];
        const std::uint64_t cs = substream_seed(c.seed, static_cast<std::uint64_t>(cell));
        m.cell_seeds[static_cast<std::size_t>(cell)] = cs;
        mb.cell_seeds[static_cast<std::size_t>(cell)] = cs;

        const BitSequence base = prbs(prbs_order, 1 + cs % period, bitrate);
        BitSequence bits;
        bits.bitrate = bitrate;
        bits.bits.resize(static_cast<std::size_t>(n_bits));
        for (Index k = 0; k < n_bits; ++k)
            bits.bits[static_cast<std::size_t>(k)] =
                base.bits[static_cast<std::size_t>(k % static_cast<Index>(period))];
        const BitSequence target = delayed_logic_target(bits, task);

        // Node spacing; the pump-probe recursion needs dt <= tau/20.
        const double theta = 1.0 / (bitrate * n_virtual);
        int spn = spn_cfg;
        while (theta / spn > tau / 20.0)
            ++spn;
        const double dt = theta / spn;
        const double rate = bitrate * n_virtual * spn;
        const int spb = n_virtual * spn;

        MatR x_in(1, n_bits);
        for (Index k = 0; k < n_bits; ++k)
            x_in(0, k) = bits.bits[static_cast<std::size_t>(k)];
        EncodingConfig ec;
        ec.w_in = w_in;
        ec.alpha = alpha;
        ec.u0 = u0;
        ec.n_virtual = n_virtual;
        ec.node_spacing = theta;
        const PowerTrace u = encode(x_in, ec, spn);

        VecR u_pr;
        try {
            u_pr = pump_probe_response(u.values, coeffs, dt);
        } catch (const DivergenceError&) {
            m.diverged[static_cast<std::size_t>(cell)] = 1;
            mb.diverged[static_cast<std::size_t>(cell)] = 1;
            m.metrics.row(cell).setConstant(std::numeric_limits<double>::quiet_NaN());
            mb.metrics.row(cell).setConstant(std::numeric_limits<double>::quiet_NaN());
            return;
        }

        Index lead = 0;
        const MatR f_res =
            bit_features(u_pr, n_bits, washout, spb, bitrate, n_virtual, rate, task.n2, lead);
        const MatR f_in = bit_features(u.values, n_bits, washout, spb, bitrate, n_virtual,
                                       rate, task.n2, lead);
        const std::vector<int> tg(target.bits.begin() + lead, target.bits.end());

        const BitScore sr = score_bits(f_res, tg, ro.train_fraction, ro.grid, ro.folds);
        const BitScore sb = score_bits(f_in, tg, ro.train_fraction, ro.grid, ro.folds);
        m.metrics(cell, 0) = sr.ber_v;
        m.metrics(cell, 1) = sr.floor ? 1.0 : 0.0;
        m.metrics(cell, 2) = static_cast<double>(sr.n_test);
        mb.metrics(cell, 0) = sb.ber_v;
        mb.metrics(cell, 1) = sb.floor ? 1.0 : 0.0;
        mb.metrics(cell, 2) = static_cast<double>(sb.n_test);

        if (c.dump)
            write_trace_csv(trace_path(c.out, cell), u_pr, rate, 0.0);
    });

    c.extra_maps.emplace_back("map_baseline.csv", std::move(mb));
    c.resolved["op"] = to_string(task.op);
    c.resolved["n1"] = task.n1;
    c.resolved["n2"] = task.n2;
    c.resolved["tau_fc_s"] = tau;
    c.resolved["c0"] = coeffs.c0;
    c.resolved["c1_per_js"] = coeffs.c1;
    c.resolved["c2_per_js"] = coeffs.c2;
    c.resolved["n_virtual"] = n_virtual;
    c.resolved["n_bits"] = n_bits;
    c.resolved["washout_bits"] = washout;
    c.resolved["prbs_order"] = prbs_order;
    return m;
}

// --- shared masked-drive helpers (narma10 / mackey_glass / memory_capacity)

struct MaskedDrive {
    MrrParams ring;
    std::string preset;
    double power = 0.0;      // peak drive power p_max
    double detuning = 0.0;   // Hz
    double bit_duration = 0.0;
    int n_virtual = 25;
    int spn = 1;
    Mask mask;
    double fb_tau = 1e-9;
    double fb_loop_t = 1.0;  // passive loop power transmission (insertion loss)
    double det_bw = 20e9;
    double noise_frac = 0.0;
    double rate = 0.0;       // recorded sample rate
    Index over = 0;          // RK4 oversampling
    double dt = 0.0;
};

MaskedDrive masked_drive_from(RunCtx& c, const char* fallback_preset,
                              double fallback_power, double fallback_shift_m) {
    const Config& cfg = c.cfg;
    MaskedDrive d;
    d.ring = device_from(cfg, fallback_preset, d.preset);
    d.power = cfg.get_quantity("drive", "power", Config::Unit::Power, fallback_power);
    d.detuning = resolve_detuning(cfg, "drive", d.ring,
                                  shift_to_detuning(d.ring, fallback_shift_m));
    d.bit_duration = cfg.get_quantity("encoding", "bit_duration", Config::Unit::Time, 1e-9);
    d.n_virtual = static_cast<int>(cfg.get_int("encoding", "n_virtual", 25));
    d.spn = static_cast<int>(cfg.get_int("encoding", "samples_per_node", 1));
    if (d.n_virtual < 1 || d.spn < 1 || !(d.bit_duration > 0.0) || !(d.power > 0.0))
        config_error(cfg, "[encoding]/[drive]: need positive node counts, duration, power");
    const std::uint64_t mask_seed =
        cfg.has("encoding", "mask_seed") ? cfg.get_u64("encoding", "mask_seed")
                                         : substream_seed(c.seed, kShared + 1);
    d.mask = random_mask(d.n_virtual, mask_seed);
    d.fb_tau = cfg.get_quantity("feedback", "tau", Config::Unit::Time, 1e-9);
    const double loss_db =
        cfg.get_quantity("feedback", "loss_db", Config::Unit::None, 0.0);
    if (!(loss_db >= 0.0))
        config_error(cfg, "feedback.loss_db: must be >= 0");
    d.fb_loop_t = std::pow(10.0, -loss_db / 10.0);
    d.det_bw = cfg.get_quantity("detector", "bandwidth", Config::Unit::Frequency, 20e9);
    d.noise_frac = cfg.get_quantity("detector", "noise_fraction", Config::Unit::None, 0.0);
    d.rate = d.n_virtual * d.spn / d.bit_duration;
    d.over = oversample_for(d.ring, d.rate);
    d.dt = 1.0 / (d.rate * static_cast<double>(d.over));

    c.resolved["power_w"] = d.power;
    c.resolved["detuning_hz"] = d.detuning;
    c.resolved["bit_duration_s"] = d.bit_duration;
    c.resolved["n_virtual"] = d.n_virtual;
    c.resolved["samples_per_node"] = d.spn;
    c.resolved["mask_seed"] = mask_seed;
    c.resolved["feedback_tau_s"] = d.fb_tau;
    c.resolved["feedback_loop_transmission"] = d.fb_loop_t;
    c.resolved["detector_bandwidth_hz"] = d.det_bw;
    c.resolved["detector_noise_fraction"] = d.noise_frac;
    c.resolved["sample_rate_hz"] = d.rate;
    c.resolved["dt_s"] = d.dt;
    return d;
}

/// Closed-loop run of a masked drive; returns the measured drop power per
/// recorded sample, normalized by the peak power. Throws DivergenceError.
VecR masked_response(const MaskedDrive& d, const Eigen::Ref<const VecR>& x, double eta,
                     double phi, std::uint64_t noise_seed, StateTrace* trace_out) {
    const SampledSignal drive = mask_encode(x, d.mask, d.bit_duration, d.power, d.spn);
    FeedbackParams fb;
    fb.eta_f = eta;
    fb.phi_f = phi;
    fb.tau_f = d.fb_tau;
    fb.loop_t = d.fb_loop_t;
    const IntegrateResult res =
        simulate_with_feedback(d.ring, fb, drive, d.dt, d.detuning, d.over);
    SampledSignal drop;
    drop.samples = res.drop.samples.segment(1, drive.size());
    drop.sample_rate = d.rate;
    const DetectorModel clean_det{d.det_bw, 0.0, false};
    VecR meas = detect(drop, clean_det, 0);
    if (d.noise_frac > 0.0) {
        const DetectorModel noisy{d.det_bw, d.noise_frac * meas.maxCoeff(), true};
        meas = detect(drop, noisy, noise_seed);
    }
    if (trace_out)
        *trace_out = res.trace;
    return meas / d.power;
}

std::pair<VecR, VecR> eta_phi_axes(const Config& cfg, const VecR& def_eta) {
    VecR phi_def(8);
    for (Index i = 0; i < 8; ++i)
        phi_def[i] = constants::two_pi * static_cast<double>(i) / 8.0;
    VecR eta = axis_values(cfg, "eta", def_eta);
    VecR phi = axis_values(cfg, "phi", phi_def);
    for (Index i = 0; i < eta.size(); ++i)
        if (eta[i] < 0.0 || eta[i] > 1.0)
            throw ParseError(cfg.source_name() + ": grid.eta values must lie in [0, 1]");
    return {eta, phi};
}

// --- narma10 ---------------------------------------------------------------

ResultMap run_narma10(RunCtx& c) {
    const Config& cfg = c.cfg;
    check_axes(cfg, {"eta", "phi"});
    MaskedDrive d = masked_drive_from(c, "donati2022", 0.1e-3, -10e-12);
    const ReadoutSettings ro = readout_from(cfg);
    const Index n_samples = cfg.get_int("input", "n_samples", 1500);
    const Index washout = cfg.get_int("input", "washout", 200);
    // Depth of the task stream on the optical carrier: 1 modulates the power
    // down to zero, shallower values keep a pedestal so the loop's coherent
    // cross-term stays linear in the recirculated history.
    const double depth =
        cfg.get_quantity("input", "modulation_depth", Config::Unit::None, 1.0);
    if (n_samples - washout < 100 || washout < ro.n2)
        config_error(cfg, "[input]: need washout >= n2 and >= 100 kept samples");
    if (!(depth > 0.0) || depth > 1.0)
        config_error(cfg, "input.modulation_depth: must lie in (0, 1]");

    const auto [eta, phi] = eta_phi_axes(cfg, linspace(0.0, 0.98, 8));

    // Task data is shared by every cell: the sweep compares reservoirs, not
    // input realizations.
    Rng rng(substream_seed(c.seed, kShared + 0));
    VecR u(n_samples);
    for (Index i = 0; i < n_samples; ++i)
        u[i] = 0.5 * rng.uniform();
    VecR y;
    try {
        y = narma10(u);
    } catch (const DivergenceError&) {
        throw std::runtime_error("narma10: the driving sequence diverged; pick another seed");
    }
    // [0, 0.5] -> [1 - depth, 1] drive range
    const VecR x = ((1.0 - depth) + 2.0 * depth * u.array()).matrix();

    ResultMap m;
    m.preset = d.preset;
    m.axes = {{"eta_f", eta}, {"phi_rad", phi}};
    m.metric_names = {"nmse", "nmse_train"};
    const Index n = m.n_cells();
    m.metrics.resize(n, 2);
    m.diverged.assign(static_cast<std::size_t>(n), 0);
    m.cell_seeds.resize(static_cast<std::size_t>(n));
    const int spb = d.n_virtual * d.spn;

    parallel_cells(n, c.workers, [&](Index cell) {
        const double e = eta[cell / phi.size()];
        const double ph = phi[cell % phi.size()];
        const std::uint64_t cs = substream_seed(c.seed, static_cast<std::uint64_t>(cell));
        m.cell_seeds[static_cast<std::size_t>(cell)] = cs;
        VecR meas;
        try {
            meas = masked_response(d, x, e, ph, substream_seed(cs, 1), nullptr);
        } catch (const DivergenceError&) {
            m.diverged[static_cast<std::size_t>(cell)] = 1;
            m.metrics.row(cell).setConstant(std::numeric_limits<double>::quiet_NaN());
            return;
        }
        Index lead = 0;
        const MatR f = bit_features(meas, n_samples, washout, spb, 1.0 / d.bit_duration,
                                    d.n_virtual, d.rate, ro.n2, lead);
        const VecR yt = y.segment(lead, n_samples - lead);
        const Index mcols = f.cols();
        const Index m_tr =
            static_cast<Index>(std::llround(ro.train_fraction * static_cast<double>(mcols)));
        const RidgeReadout rr =
            ridge_cv(f.leftCols(m_tr), yt.head(m_tr).transpose(), ro.grid, ro.folds, 0);
        const VecR p_tr = rr.predict(f.leftCols(m_tr)).row(0).transpose();
        const VecR p_te = rr.predict(f.rightCols(mcols - m_tr)).row(0).transpose();
        m.metrics(cell, 0) = nmse(p_te, yt.tail(mcols - m_tr));
        m.metrics(cell, 1) = nmse(p_tr, yt.head(m_tr));
        if (c.dump)
            write_trace_csv(trace_path(c.out, cell), meas * d.power, d.rate, 0.0);
    });

    c.resolved["n_samples"] = n_samples;
    c.resolved["washout"] = washout;
    c.resolved["modulation_depth"] = depth;
    return m;
}

// --- mackey_glass ----------------------------------------------------------

ResultMap run_mackey_glass(RunCtx& c) {
    const Config& cfg = c.cfg;
    check_axes(cfg, {"eta", "phi"});
    MaskedDrive d = masked_drive_from(c, "donati2022", 5e-3, -30e-12);
    const ReadoutSettings ro = readout_from(cfg);
    const Index n_samples = cfg.get_int("input", "n_samples", 1500);
    const Index washout = cfg.get_int("input", "washout", 200);
    const double depth =
        cfg.get_quantity("input", "modulation_depth", Config::Unit::None, 0.5);
    if (n_samples - washout < 100 || washout < ro.n2)
        config_error(cfg, "[input]: need washout >= n2 and >= 100 kept samples");

    const double mg_beta = cfg.get_quantity("mg", "beta", Config::Unit::None, 0.2);
    const double mg_gamma = cfg.get_quantity("mg", "gamma", Config::Unit::None, 0.1);
    const double mg_n = cfg.get_quantity("mg", "n", Config::Unit::None, 10.0);
    const double mg_tau = cfg.get_quantity("mg", "tau", Config::Unit::None, 17.0);
    const double mg_dt = cfg.get_quantity("mg", "dt", Config::Unit::None, 0.1);
    const double mg_x0 = cfg.get_quantity("mg", "x0", Config::Unit::None, 1.2);
    const Index mg_discard = cfg.get_int("mg", "discard", 1000);
    // Keeping every integrator step makes one-step prediction trivial; the
    // stride widens the effective sampling so the target is genuinely chaotic.
    const Index mg_stride = cfg.get_int("mg", "stride", 30);
    if (mg_stride < 1)
        config_error(cfg, "mg.stride: must be >= 1");

    const VecR series = mackey_glass(mg_beta, mg_gamma, mg_n, mg_tau, mg_dt,
                                     mg_discard + (n_samples + 1) * mg_stride, mg_x0);
    VecR w(n_samples + 1);
    for (Index k = 0; k <= n_samples; ++k)
        w[k] = series[mg_discard + k * mg_stride];
    const double wbar = w.head(n_samples).mean();
    VecR p_bits(n_samples);
    for (Index k = 0; k < n_samples; ++k)
        p_bits[k] = d.power * (1.0 + depth * (w[k] / wbar - 1.0));
    if (p_bits.minCoeff() < 0.0)
        config_error(cfg, "input.modulation_depth: drive power would go negative");
    const double p_cap = p_bits.maxCoeff();
    const VecR x = p_bits / p_cap;
    MaskedDrive dm = d;
    dm.power = p_cap; // mask_encode peak; metrics stay normalized by it

    const auto [eta, phi] = eta_phi_axes(cfg, linspace(0.0, 0.98, 8));

    ResultMap m;
    m.preset = d.preset;
    m.axes = {{"eta_f", eta}, {"phi_rad", phi}};
    m.metric_names = {"nmse", "nmse_train", "sigma_lambda_m", "sp_flag"};
    const Index n = m.n_cells();
    m.metrics.resize(n, 4);
    m.diverged.assign(static_cast<std::size_t>(n), 0);
    m.cell_seeds.resize(static_cast<std::size_t>(n));
    const int spb = d.n_virtual * d.spn;

    parallel_cells(n, c.workers, [&](Index cell) {
        const double e = eta[cell / phi.size()];
        const double ph = phi[cell % phi.size()];
        const std::uint64_t cs = substream_seed(c.seed, static_cast<std::uint64_t>(cell));
        m.cell_seeds[static_cast<std::size_t>(cell)] = cs;
        VecR meas;
        StateTrace trace;
        try {
            meas = masked_response(dm, x, e, ph, substream_seed(cs, 1), &trace);
        } catch (const DivergenceError&) {
            m.diverged[static_cast<std::size_t>(cell)] = 1;
            m.metrics.row(cell).setConstant(std::numeric_limits<double>::quiet_NaN());
            return;
        }
        Index lead = 0;
        const MatR f = bit_features(meas, n_samples, washout, spb, 1.0 / d.bit_duration,
                                    d.n_virtual, d.rate, ro.n2, lead);
        // One-step-ahead prediction in raw series units.
        const VecR yt = w.segment(lead + 1, n_samples - lead);
        const Index mcols = f.cols();
        const Index m_tr =
            static_cast<Index>(std::llround(ro.train_fraction * static_cast<double>(mcols)));
        const RidgeReadout rr =
            ridge_cv(f.leftCols(m_tr), yt.head(m_tr).transpose(), ro.grid, ro.folds, 0);
        const VecR p_tr = rr.predict(f.leftCols(m_tr)).row(0).transpose();
        const VecR p_te = rr.predict(f.rightCols(mcols - m_tr)).row(0).transpose();
        m.metrics(cell, 0) = nmse(p_te, yt.tail(mcols - m_tr));
        m.metrics(cell, 1) = nmse(p_tr, yt.head(m_tr));

        const VecR lambda = resonance_wavelength_trace(dm.ring, trace);
        const Index skip = 1 + washout * spb;
        const VecR lam = lambda.segment(skip, lambda.size() - skip);
        const double mean = lam.mean();
        m.metrics(cell, 2) = std::sqrt((lam.array() - mean).square().mean());
        m.metrics(cell, 3) = 0.0; // filled by the map-level split below

        if (c.dump)
            write_trace_csv(trace_path(c.out, cell), meas * dm.power, d.rate, 0.0);
    });

    // Self-pulsing flag: the resonance-wavelength jitter splits bimodally
    // when some cells hop branches; split at the geometric mean when the
    // spread exceeds 30x, otherwise nothing is flagged.
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (Index cell = 0; cell < n; ++cell)
        if (!m.diverged[static_cast<std::size_t>(cell)]) {
            lo = std::min(lo, m.metrics(cell, 2));
            hi = std::max(hi, m.metrics(cell, 2));
        }
    if (std::isfinite(lo) && lo > 0.0 && hi / lo > 30.0) {
        const double thr = std::sqrt(lo * hi);
        for (Index cell = 0; cell < n; ++cell)
            if (!m.diverged[static_cast<std::size_t>(cell)])
                m.metrics(cell, 3) = m.metrics(cell, 2) > thr ? 1.0 : 0.0;
        c.resolved["sp_sigma_threshold_m"] = thr;
    }

    c.resolved["n_samples"] = n_samples;
    c.resolved["washout"] = washout;
    c.resolved["modulation_depth"] = depth;
    c.resolved["peak_power_w"] = p_cap;
    c.resolved["mg"] = {{"beta", mg_beta}, {"gamma", mg_gamma}, {"n", mg_n},
                        {"tau", mg_tau},   {"dt", mg_dt},       {"x0", mg_x0},
                        {"discard", mg_discard}, {"stride", mg_stride}};
    return m;
}

// --- memory_capacity -------------------------------------------------------

ResultMap run_memory_capacity(RunCtx& c) {
    const Config& cfg = c.cfg;
    check_axes(cfg, {"eta", "phi"});
    MaskedDrive d = masked_drive_from(c, "donati2022", 0.1e-3, -10e-12);
    if (!cfg.has("detector", "noise_fraction"))
        d.noise_frac = 0.02; // the noiseless linear map would remember forever

    const int l_max = static_cast<int>(cfg.get_int("mc", "l_max", 19));
    McOptions mo;
    mo.n_samples = cfg.get_int("mc", "n_samples", 3000);
    mo.washout = cfg.get_int("mc", "washout", 60);
    mo.train_fraction = cfg.get_quantity("mc", "train_fraction", Config::Unit::None, 0.6);
    mo.ridge_lambda = cfg.get_quantity("mc", "ridge_lambda", Config::Unit::None, 1e-6);
    if (l_max < 1)
        config_error(cfg, "mc.l_max: must be >= 1");
    // Modulation depth of the recall stream on the optical carrier.  A shallow
    // ride keeps the detected power linear in the lagged inputs (the carrier
    // cross-term dominates), which is what the linear-recall score measures;
    // depth 1 modulates down to zero power.
    const double depth = cfg.get_quantity("mc", "input_depth", Config::Unit::None, 1.0);
    if (!(depth > 0.0) || depth > 1.0)
        config_error(cfg, "mc.input_depth: must lie in (0, 1]");

    VecR def_eta(2);
    def_eta << 0.0, 0.9;
    const auto [eta, phi] = eta_phi_axes(cfg, def_eta);

    const std::uint64_t input_seed = substream_seed(c.seed, kShared + 0);

    ResultMap m;
    m.preset = d.preset;
    m.axes = {{"eta_f", eta}, {"phi_rad", phi}};
    m.metric_names = {"mc"};
    for (int l = 1; l <= l_max; ++l)
        m.metric_names.push_back("m" + std::to_string(l));
    const Index n = m.n_cells();
    m.metrics.resize(n, 1 + l_max);
    m.diverged.assign(static_cast<std::size_t>(n), 0);
    m.cell_seeds.resize(static_cast<std::size_t>(n));

    parallel_cells(n, c.workers, [&](Index cell) {
        const double e = eta[cell / phi.size()];
        const double ph = phi[cell % phi.size()];
        const std::uint64_t cs = substream_seed(c.seed, static_cast<std::uint64_t>(cell));
        m.cell_seeds[static_cast<std::size_t>(cell)] = cs;
        const auto eval = [&](const VecR& x) -> StateMatrix {
            const VecR xe = ((1.0 - depth) + depth * x.array()).matrix();
            const VecR meas = masked_response(d, xe, e, ph, substream_seed(cs, 1), nullptr);
            return sample_virtual_nodes(meas, 1.0 / d.bit_duration, d.n_virtual, d.rate);
        };
        try {
            const McResult r = memory_capacity(eval, l_max, input_seed, mo);
            m.metrics(cell, 0) = r.mc;
            for (int l = 1; l <= l_max; ++l)
                m.metrics(cell, l) = r.m[l - 1];
        } catch (const DivergenceError&) {
            m.diverged[static_cast<std::size_t>(cell)] = 1;
            m.metrics.row(cell).setConstant(std::numeric_limits<double>::quiet_NaN());
        }
    });

    c.resolved["l_max"] = l_max;
    c.resolved["n_samples"] = mo.n_samples;
    c.resolved["washout"] = mo.washout;
    c.resolved["ridge_lambda"] = mo.ridge_lambda;
    c.resolved["input_seed"] = input_seed;
    c.resolved["input_depth"] = depth;
    c.resolved["detector_noise_fraction"] = d.noise_frac;
    return m;
}

// --- dcp_equalize ----------------------------------------------------------

ResultMap run_dcp_equalize(RunCtx& c) {
    const Config& cfg = c.cfg;
    check_axes(cfg, {"length"});
    using U = Config::Unit;
    EqualizeParams p;
    p.bitrate = cfg.get_quantity("dcp", "bitrate", U::Bitrate, 10e9);
    p.prbs_order = static_cast<int>(cfg.get_int("dcp", "prbs_order", 10));
    p.samples_per_bit = static_cast<int>(cfg.get_int("dcp", "samples_per_bit", 16));
    p.dispersion_ps_nm_km = cfg.get_quantity("dcp", "dispersion_ps_nm_km", U::None, 17.0);
    p.wavelength = cfg.get_quantity("dcp", "wavelength", U::Length, 1.55e-6);
    p.power_high = cfg.get_quantity("dcp", "power_high", U::Power, 1e-3);
    p.power_low = cfg.get_quantity("dcp", "power_low", U::Power, 1e-5);
    p.n_taps = cfg.get_int("dcp", "n_taps", 8);
    p.tap_spacing = cfg.get_quantity("dcp", "tap_spacing", U::Time, 50e-12);
    p.weight_bound = cfg.get_quantity("dcp", "weight_bound", U::None, 2.0);
    p.train_fraction = cfg.get_quantity("dcp", "train_fraction", U::None, 0.6);
    p.detector.bandwidth = cfg.get_quantity("detector", "bandwidth", U::Frequency, 7.5e9);
    p.detector.noise_std = cfg.get_quantity("detector", "noise_std", U::Power, 0.0);
    p.detector.noise_enabled = p.detector.noise_std > 0.0;
    p.pso.n_particles = static_cast<int>(cfg.get_int("pso", "n_particles", 24));
    p.pso.max_iter = static_cast<int>(cfg.get_int("pso", "max_iter", 60));
    p.pso.inertia = cfg.get_quantity("pso", "inertia", U::None, p.pso.inertia);
    p.pso.c_personal = cfg.get_quantity("pso", "c_personal", U::None, p.pso.c_personal);
    p.pso.c_global = cfg.get_quantity("pso", "c_global", U::None, p.pso.c_global);
    p.pso.velocity_clamp = cfg.get_quantity("pso", "velocity_clamp", U::None,
                                            p.pso.velocity_clamp);
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        config_error(cfg, std::string("[dcp]: ") + e.what());
    }

    VecR lengths = axis_values(
        cfg, "length", VecR::Constant(1, cfg.get_quantity("dcp", "fiber_length", U::Length,
                                                          125e3)));

    ResultMap m;
    m.preset = "dcp";
    m.axes = {{"fiber_length_m", lengths}};
    m.metric_names = {"ber_plain", "floor_plain",      "ber_dcp",       "floor_dcp",
                      "n_test_bits", "separation_plain", "separation_dcp"};
    const Index n = m.n_cells();
    m.metrics.resize(n, 7);
    m.diverged.assign(static_cast<std::size_t>(n), 0);
    m.cell_seeds.resize(static_cast<std::size_t>(n));

    std::mutex io_mu;
    parallel_cells(n, c.workers, [&](Index cell) {
        EqualizeParams pc = p;
        pc.fiber_length = lengths[cell];
        const std::uint64_t cs = substream_seed(c.seed, static_cast<std::uint64_t>(cell));
        m.cell_seeds[static_cast<std::size_t>(cell)] = cs;
        const EqualizeReport rep = equalize_experiment(pc, cs);
        const double floor_ber = 1.0 / static_cast<double>(rep.n_test_bits);
        m.metrics(cell, 0) = rep.floor_plain ? floor_ber : rep.ber_plain;
        m.metrics(cell, 1) = rep.floor_plain ? 1.0 : 0.0;
        m.metrics(cell, 2) = rep.floor_dcp ? floor_ber : rep.ber_dcp;
        m.metrics(cell, 3) = rep.floor_dcp ? 1.0 : 0.0;
        m.metrics(cell, 4) = static_cast<double>(rep.n_test_bits);
        m.metrics(cell, 5) = rep.separation_plain;
        m.metrics(cell, 6) = rep.separation_dcp;

        if (cell == 0 || c.dump) {
            const std::string suffix = cell == 0 ? "" : "_" + std::to_string(cell);
            const int spb = pc.samples_per_bit;
            const Index off =
                (spb - static_cast<int>(rep.dcp_trim % spb)) % spb; // realign bit phase
            std::lock_guard<std::mutex> lk(io_mu);
            write_equalize_report_json((c.out / ("report" + suffix + ".json")).string(), rep);
            write_eye_csv((c.out / ("eye_plain" + suffix + ".csv")).string(),
                          rep.detected_plain, rep.detected_rate, pc.bitrate);
            write_eye_csv((c.out / ("eye_dcp" + suffix + ".csv")).string(),
                          rep.detected_dcp.segment(off, rep.detected_dcp.size() - off),
                          rep.detected_rate, pc.bitrate);
            if (cell == 0) {
                c.extra_files.push_back("report.json");
                c.extra_files.push_back("eye_plain.csv");
                c.extra_files.push_back("eye_dcp.csv");
            }
        }
    });

    c.resolved["bitrate_bps"] = p.bitrate;
    c.resolved["prbs_order"] = p.prbs_order;
    c.resolved["samples_per_bit"] = p.samples_per_bit;
    c.resolved["sample_rate_hz"] = p.bitrate * p.samples_per_bit;
    c.resolved["dispersion_ps_nm_km"] = p.dispersion_ps_nm_km;
    c.resolved["n_taps"] = p.n_taps;
    c.resolved["tap_spacing_s"] = p.tap_spacing;
    c.resolved["pso_particles"] = p.pso.n_particles;
    c.resolved["pso_iterations"] = p.pso.max_iter;
    return m;
}

// --- iris -------------------------------------------------------------------

ResultMap run_iris(RunCtx& c) {
    const Config& cfg = c.cfg;
    check_axes(cfg, {});
    std::string preset;
    const MrrParams p = device_from(cfg, "bazzanella2022", preset);
    const std::string path = cfg.get_string("data", "path"); // never bundled; must be supplied
    const double power = cfg.get_quantity("drive", "power", Config::Unit::Power, 1e-3);
    const double detuning = resolve_detuning(cfg, "drive", p, 2e9);
    const int n_virtual = static_cast<int>(cfg.get_int("encoding", "n_virtual", 50));
    const double theta =
        cfg.get_quantity("encoding", "node_spacing", Config::Unit::Time, 1e-9);
    const int spn = static_cast<int>(cfg.get_int("encoding", "samples_per_node", 2));
    const double u0 = cfg.get_quantity("encoding", "u0", Config::Unit::None, 0.1);
    const double det_bw =
        cfg.get_quantity("detector", "bandwidth", Config::Unit::Frequency, 20e9);
    const double noise_frac =
        cfg.get_quantity("detector", "noise_fraction", Config::Unit::None, 0.01);
    const ReadoutSettings ro = readout_from(cfg);
    if (n_virtual < 1 || spn < 1 || !(theta > 0.0) || u0 < 0.0)
        config_error(cfg, "[encoding]: need positive node counts/spacing and u0 >= 0");

    const IrisData iris = iris_load(path);
    const Index n_total = iris.features.cols();

    // Random input weights and a stratified half/half split.
    Rng wrng(substream_seed(c.seed, kShared + 2));
    MatR w_in(n_virtual, iris.features.rows());
    for (Index i = 0; i < w_in.rows(); ++i)
        for (Index j = 0; j < w_in.cols(); ++j)
            w_in(i, j) = wrng.uniform();
    Rng srng(substream_seed(c.seed, kShared + 3));
    std::vector<Index> train_idx, test_idx;
    for (int k = 0; k < 3; ++k) {
        std::vector<Index> members;
        for (Index j = 0; j < n_total; ++j)
            if (iris.klass[static_cast<std::size_t>(j)] == k)
                members.push_back(j);
        for (std::size_t i = members.size(); i > 1; --i) {
            const auto r = static_cast<std::size_t>(srng.uniform() * static_cast<double>(i));
            std::swap(members[i - 1], members[std::min(r, i - 1)]);
        }
        for (std::size_t i = 0; i < members.size(); ++i)
            (i < members.size() / 2 ? train_idx : test_idx).push_back(members[i]);
    }

    EncodingConfig ec;
    ec.w_in = w_in;
    ec.u0 = u0;
    ec.n_virtual = n_virtual;
    ec.node_spacing = theta;
    const MatR pre = (w_in * iris.features).array() + u0;
    ec.alpha = power / pre.maxCoeff();
    const PowerTrace pump = encode(iris.features, ec, spn);

    SampledSignal drive;
    drive.samples = pump.values.array().sqrt().matrix().cast<Complex>();
    drive.sample_rate = pump.sample_rate;
    const Index over = oversample_for(p, pump.sample_rate);
    const double dt = 1.0 / (pump.sample_rate * static_cast<double>(over));
    const IntegrateResult res = integrate(p, MrrState{}, drive, dt, detuning, over);
    SampledSignal drop;
    drop.samples = res.drop.samples.segment(1, pump.values.size());
    drop.sample_rate = pump.sample_rate;

    const std::uint64_t cs = substream_seed(c.seed, 0);
    const DetectorModel clean_det{det_bw, 0.0, false};
    VecR meas = detect(drop, clean_det, 0);
    if (noise_frac > 0.0) {
        const DetectorModel noisy{det_bw, noise_frac * meas.maxCoeff(), true};
        meas = detect(drop, noisy, substream_seed(cs, 1));
    }
    meas /= power;

    const double sample_period = theta * static_cast<double>(n_virtual);
    const StateMatrix sv =
        sample_virtual_nodes(meas, 1.0 / sample_period, n_virtual, pump.sample_rate);

    const auto cols = [&](const std::vector<Index>& idx) {
        MatR f(sv.features.rows(), static_cast<Index>(idx.size()));
        MatR y(3, static_cast<Index>(idx.size()));
        for (std::size_t j = 0; j < idx.size(); ++j) {
            f.col(static_cast<Index>(j)) = sv.features.col(idx[j]);
            y.col(static_cast<Index>(j)) = iris.labels.col(idx[j]);
        }
        return std::make_pair(f, y);
    };
    const auto [f_tr, y_tr] = cols(train_idx);
    const auto [f_te, y_te] = cols(test_idx);
    const RidgeReadout rr = ridge_cv(f_tr, y_tr, ro.grid, ro.folds, 0);
    const auto accuracy = [&](const MatR& f, const std::vector<Index>& idx) {
        const MatR out = rr.predict(f); // 3 x M; winner takes all
        Index hits = 0;
        for (Index j = 0; j < out.cols(); ++j) {
            Index best;
            out.col(j).maxCoeff(&best);
            if (static_cast<int>(best) == iris.klass[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])])
                ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(out.cols());
    };

    ResultMap m;
    m.preset = preset;
    m.metric_names = {"accuracy_train", "accuracy_test", "n_test"};
    m.metrics.resize(1, 3);
    m.metrics(0, 0) = accuracy(f_tr, train_idx);
    m.metrics(0, 1) = accuracy(f_te, test_idx);
    m.metrics(0, 2) = static_cast<double>(test_idx.size());
    m.diverged = {0};
    m.cell_seeds = {cs};

    if (c.dump)
        write_trace_csv(trace_path(c.out, 0), meas * power, pump.sample_rate, 0.0);

    c.resolved["data_path"] = path;
    c.resolved["n_samples"] = n_total;
    c.resolved["n_virtual"] = n_virtual;
    c.resolved["node_spacing_s"] = theta;
    c.resolved["power_w"] = power;
    c.resolved["detuning_hz"] = detuning;
    c.resolved["sample_rate_hz"] = pump.sample_rate;
    c.resolved["alpha_w"] = ec.alpha;
    return m;
}

} // namespace

std::vector<std::string> experiment_kinds() {
    return {"stability_map", "logic_task",      "xor_rc",       "narma10",
            "mackey_glass",  "memory_capacity", "dcp_equalize", "iris"};
}

RunSummary run_experiment(const Config& cfg, const RunOptions& opts) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string kind = cfg.get_string("experiment", "kind");
    const auto kinds = experiment_kinds();
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
        std::string msg = "experiment.kind: unknown kind '" + kind + "'; expected one of {";
        for (std::size_t i = 0; i < kinds.size(); ++i)
            msg += (i ? ", " : "") + kinds[i];
        config_error(cfg, msg + "}");
    }
    if (!cfg.has("experiment", "seed"))
        config_error(cfg, "experiment.seed is required (reproducibility contract)");

    RunCtx ctx{cfg,
               fs::path(opts.out_dir.empty()
                            ? cfg.get_string("experiment", "output", "out-" + kind)
                            : opts.out_dir),
               cfg.get_u64("experiment", "seed"),
               resolve_workers(opts),
               opts.dump_traces,
               ojson::object(),
               {},
               {}};
    fs::create_directories(ctx.out);
    if (ctx.dump)
        fs::create_directories(ctx.out / "trace");

    ResultMap map;
    if (kind == "stability_map") map = run_stability(ctx);
    else if (kind == "logic_task") map = run_logic(ctx);
    else if (kind == "xor_rc") map = run_xor_rc(ctx);
    else if (kind == "narma10") map = run_narma10(ctx);
    else if (kind == "mackey_glass") map = run_mackey_glass(ctx);
    else if (kind == "memory_capacity") map = run_memory_capacity(ctx);
    else if (kind == "dcp_equalize") map = run_dcp_equalize(ctx);
    else map = run_iris(ctx);

    map.kind = kind;
    map.seed = ctx.seed;
    map.config_hash = cfg.content_hash();
    map.version = code_version;

    RunSummary s;
    s.kind = kind;
    s.out_dir = ctx.out.string();
    write_result_map_csv((ctx.out / "map.csv").string(), map);
    s.outputs.push_back((ctx.out / "map.csv").string());
    for (auto& [name, extra] : ctx.extra_maps) {
        extra.kind = kind;
        extra.seed = ctx.seed;
        extra.config_hash = cfg.content_hash();
        extra.version = code_version;
        write_result_map_csv((ctx.out / name).string(), extra);
        s.outputs.push_back((ctx.out / name).string());
    }
    for (const auto& name : ctx.extra_files)
        s.outputs.push_back((ctx.out / name).string());

    const auto t1 = std::chrono::steady_clock::now();
    s.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

    ojson manifest;
    manifest["kind"] = kind;
    manifest["preset"] = map.preset;
    manifest["seed"] = ctx.seed;
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "0x%016llx",
                      static_cast<unsigned long long>(cfg.content_hash()));
        manifest["config"] = {{"source", cfg.source_name()}, {"hash", buf}};
    }
    manifest["version"] = code_version;
    manifest["n_workers"] = ctx.workers;
    manifest["wall_seconds"] = s.wall_seconds;
    ojson axes = ojson::object();
    for (const auto& a : map.axes) {
        std::vector<double> v(a.values.begin(), a.values.end());
        axes[a.name] = v;
    }
    manifest["axes"] = axes;
    manifest["resolved"] = ctx.resolved;
    {
        std::vector<std::string> rel;
        rel.reserve(s.outputs.size() + 2);
        rel.emplace_back("map.csv");
        for (const auto& kv : ctx.extra_maps)
            rel.push_back(kv.first);
        for (const auto& name : ctx.extra_files)
            rel.push_back(name);
        if (ctx.dump)
            rel.emplace_back("trace/");
        manifest["outputs"] = rel;
    }
    {
        std::ofstream f(ctx.out / "manifest.json");
        if (!f)
            throw std::runtime_error("cannot write manifest.json in " + ctx.out.string());
        f << manifest.dump(2) << "\n";
    }
    s.outputs.push_back((ctx.out / "manifest.json").string());
    return s;
}

} // namespace ringrc
