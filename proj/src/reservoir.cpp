#include "ringrc/reservoir.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ringrc/errors.hpp"
#include "ringrc/rng.hpp"

namespace ringrc {

void EncodingConfig::validate() const {
    if (n_virtual < 1)
        throw std::invalid_argument("EncodingConfig: n_virtual must be >= 1");
    if (!(alpha > 0.0))
        throw std::invalid_argument("EncodingConfig: alpha must be > 0");
    if (!(node_spacing > 0.0))
        throw std::invalid_argument("EncodingConfig: node_spacing must be > 0");
    if (w_in.rows() != n_virtual)
        throw std::invalid_argument("EncodingConfig: w_in must have n_virtual rows");
}

Mask random_mask(int n_virtual, std::uint64_t seed) {
    if (n_virtual < 1)
        throw std::invalid_argument("random_mask: n_virtual must be >= 1");
    Mask m;
    m.seed = seed;
    m.values.resize(n_virtual);
    Rng rng(seed);
    for (Index i = 0; i < m.values.size(); ++i)
        m.values[i] = rng.uniform();
    return m;
}

MatR RidgeReadout::predict(const Eigen::Ref<const MatR>& x) const {
    if (!intercept) {
        if (weights.cols() != x.rows())
            throw std::invalid_argument("RidgeReadout::predict: feature count mismatch");
        return weights * x;
    }
    if (weights.cols() != x.rows() + 1)
        throw std::invalid_argument("RidgeReadout::predict: feature count mismatch");
    MatR y = weights.leftCols(x.rows()) * x;
    y.colwise() += weights.col(x.rows());
    return y;
}

PowerTrace encode(const Eigen::Ref<const MatR>& x_in, const EncodingConfig& cfg,
                  int samples_per_node) {
    cfg.validate();
    if (samples_per_node < 1)
        throw std::invalid_argument("encode: samples_per_node must be >= 1");
    if (x_in.cols() < 1 || x_in.rows() != cfg.w_in.cols())
        throw std::invalid_argument("encode: x_in must be (w_in cols) x M");

    const MatR u = cfg.alpha * ((cfg.w_in * x_in).array() + cfg.u0).matrix();
    for (Index j = 0; j < u.cols(); ++j)
        for (Index i = 0; i < u.rows(); ++i)
            if (u(i, j) < 0.0)
                throw std::invalid_argument(
                    "encode: negative encoded power at node " + std::to_string(i) +
                    ", sample " + std::to_string(j));

    PowerTrace out;
    out.sample_rate = static_cast<double>(samples_per_node) / cfg.node_spacing;
    out.values.resize(u.cols() * u.rows() * samples_per_node);
    Index k = 0;
    for (Index j = 0; j < u.cols(); ++j)
        for (Index i = 0; i < u.rows(); ++i)
            for (int s = 0; s < samples_per_node; ++s)
                out.values[k++] = u(i, j);
    return out;
}

SampledSignal mask_encode(const Eigen::Ref<const VecR>& x, const Mask& mask,
                          double b_w, double p_max, int samples_per_node) {
    if (mask.values.size() < 1)
        throw std::invalid_argument("mask_encode: empty mask");
    if (!(b_w > 0.0) || !(p_max > 0.0))
        throw std::invalid_argument("mask_encode: b_w and p_max must be > 0");
    if (samples_per_node < 1)
        throw std::invalid_argument("mask_encode: samples_per_node must be >= 1");
    for (Index j = 0; j < mask.values.size(); ++j)
        if (mask.values[j] < 0.0 || mask.values[j] > 1.0)
            throw std::invalid_argument("mask_encode: mask entries must lie in [0, 1]");
    for (Index i = 0; i < x.size(); ++i)
        if (x[i] < 0.0)
            throw std::invalid_argument("mask_encode: negative input value at index " +
                                        std::to_string(i));

    const Index n_v = mask.values.size();
    const double theta = b_w / static_cast<double>(n_v);

    SampledSignal s;
    s.sample_rate = static_cast<double>(samples_per_node) / theta;
    s.samples.resize(x.size() * n_v * samples_per_node);
    Index k = 0;
    for (Index i = 0; i < x.size(); ++i)
        for (Index j = 0; j < n_v; ++j) {
            const double amp = std::sqrt(p_max * x[i] * mask.values[j]);
            for (int q = 0; q < samples_per_node; ++q)
                s.samples[k++] = Complex(amp, 0.0);
        }
    return s;
}

StateMatrix sample_virtual_nodes(const Eigen::Ref<const VecR>& power_trace, double bitrate,
                                 int n_virtual, double sample_rate) {
    if (power_trace.size() == 0)
        throw std::invalid_argument("sample_virtual_nodes: empty trace");
    if (n_virtual < 1)
        throw std::invalid_argument("sample_virtual_nodes: n_virtual must be >= 1");
    if (!(bitrate > 0.0) || !(sample_rate > 0.0))
        throw std::invalid_argument("sample_virtual_nodes: rates must be > 0");

    const double ns_f = sample_rate / bitrate;
    const Index n_s = static_cast<Index>(std::llround(ns_f));
    if (n_s < 1 || std::abs(ns_f - static_cast<double>(n_s)) > 1e-6 * ns_f)
        throw std::invalid_argument(
            "sample_virtual_nodes: samples per bit must be a positive integer");
    if (power_trace.size() % n_s != 0)
        throw std::invalid_argument(
            "sample_virtual_nodes: trace must span an integer number of bits");

    const Index m = power_trace.size() / n_s;
    StateMatrix out;
    out.features = MatR::Zero(n_virtual, m);
    for (Index b = 0; b < m; ++b) {
        const auto bit = power_trace.segment(b * n_s, n_s);
        if (n_s == n_virtual) {
            out.features.col(b) = bit;
        } else if (n_s > n_virtual) {
            // Bin-average; uneven group sizes split as evenly as possible.
            for (Index v = 0; v < n_virtual; ++v) {
                const Index lo = v * n_s / n_virtual;
                const Index hi = (v + 1) * n_s / n_virtual;
                out.features(v, b) = bit.segment(lo, hi - lo).mean();
            }
        } else {
            out.features.col(b).head(n_s) = bit; // remaining nodes stay zero
        }
    }
    out.provenance.reserve(static_cast<std::size_t>(n_virtual));
    for (Index v = 0; v < n_virtual; ++v)
        out.provenance.push_back("node" + std::to_string(v));
    return out;
}

StateMatrix augment_rbits(const StateMatrix& state, int n2) {
    if (n2 < 1)
        throw std::invalid_argument("augment_rbits: n2 must be >= 1");
    const Index m = state.features.cols();
    const Index nf = state.features.rows();
    if (static_cast<Index>(n2) > m)
        throw std::invalid_argument("augment_rbits: n2 exceeds the sequence length");
    if (n2 == 1) return state;

    StateMatrix out;
    out.features.resize(nf * n2, m);
    for (Index j = 0; j < m; ++j)
        for (int k = 0; k < n2; ++k) {
            const Index src = ((j - k) % m + m) % m; // wrap over the periodic sequence
            out.features.block(k * nf, j, nf, 1) = state.features.col(src);
        }
    out.provenance.reserve(static_cast<std::size_t>(nf * n2));
    for (int k = 0; k < n2; ++k)
        for (Index v = 0; v < nf; ++v) {
            const std::string base = v < static_cast<Index>(state.provenance.size())
                                         ? state.provenance[static_cast<std::size_t>(v)]
                                         : "f" + std::to_string(v);
            out.provenance.push_back("bit-" + std::to_string(k) + ":" + base);
        }
    return out;
}

RidgeReadout ridge_fit(const Eigen::Ref<const MatR>& x, const Eigen::Ref<const MatR>& y,
                       double lambda, bool intercept) {
    if (x.cols() != y.cols())
        throw std::invalid_argument("ridge_fit: sample count mismatch");
    if (x.cols() < 1)
        throw std::invalid_argument("ridge_fit: no samples");
    if (lambda < 0.0)
        throw std::invalid_argument("ridge_fit: lambda must be >= 0");
    if (!x.allFinite() || !y.allFinite())
        throw std::invalid_argument("ridge_fit: non-finite inputs");

    const Index n = x.rows();
    const Index na = intercept ? n + 1 : n;

    MatR xa(na, x.cols());
    xa.topRows(n) = x;
    if (intercept) xa.row(n).setOnes();

    MatR gram = xa * xa.transpose();
    for (Index i = 0; i < n; ++i)
        gram(i, i) += lambda * lambda; // intercept row never penalized

    const MatR rhs = xa * y.transpose(); // na x Q
    Eigen::LDLT<MatR> ldlt(gram);
    if (lambda == 0.0) {
        // Unregularized: pivoted LDLT happily returns one of the infinitely
        // many solutions of a consistent rank-deficient system, so detect the
        // deficiency directly from the pivot spread.
        const VecR d = ldlt.vectorD().cwiseAbs();
        if (d.size() == 0 || d.minCoeff() <= d.maxCoeff() * 1e-12)
            throw SolvabilityError(
                "ridge_fit: feature rows linearly dependent at lambda = 0");
    }
    MatR wt = ldlt.solve(rhs);
    // Backward-error test: scale-invariant, so legitimately ill-conditioned
    // solves pass while singular systems are rejected.
    const double backward = (gram * wt - rhs).norm() /
                            (gram.norm() * wt.norm() + rhs.norm() + 1e-300);
    if (!wt.allFinite() || backward > 1e-10)
        throw SolvabilityError(
            "ridge_fit: singular normal matrix; use lambda > 0 or drop "
            "linearly dependent feature rows");

    RidgeReadout r;
    r.weights = wt.transpose();
    r.lambda = lambda;
    r.intercept = intercept;
    return r;
}

RidgeReadout ridge_cv(const Eigen::Ref<const MatR>& x, const Eigen::Ref<const MatR>& y,
                      const Eigen::Ref<const VecR>& lambda_grid, int folds,
                      std::uint64_t /*seed*/) {
    if (lambda_grid.size() == 0)
        throw std::invalid_argument("ridge_cv: empty lambda grid");
    if (folds < 2)
        throw std::invalid_argument("ridge_cv: need at least 2 folds");
    const Index m = x.cols();
    if (m < folds)
        throw std::invalid_argument("ridge_cv: fewer samples than folds");

    CvReport report;
    report.lambda_grid = lambda_grid;
    report.fold_error = MatR::Zero(folds, lambda_grid.size());

    for (int f = 0; f < folds; ++f) {
        const Index lo = f * m / folds;
        const Index hi = (f + 1) * m / folds;
        const Index nv = hi - lo;
        const Index nt = m - nv;

        MatR xt(x.rows(), nt), yt(y.rows(), nt);
        xt.leftCols(lo) = x.leftCols(lo);
        yt.leftCols(lo) = y.leftCols(lo);
        xt.rightCols(nt - lo) = x.rightCols(m - hi);
        yt.rightCols(nt - lo) = y.rightCols(m - hi);

        for (Index g = 0; g < lambda_grid.size(); ++g) {
            RidgeReadout r;
            try {
                r = ridge_fit(xt, yt, lambda_grid[g]);
            } catch (const SolvabilityError&) {
                report.fold_error(f, g) = std::numeric_limits<double>::infinity();
                continue;
            }
            const MatR pred = r.predict(x.middleCols(lo, nv));
            report.fold_error(f, g) =
                (pred - y.middleCols(lo, nv)).squaredNorm() / static_cast<double>(nv);
        }
    }

    report.mean_error = report.fold_error.colwise().mean();
    Index best = 0;
    report.mean_error.minCoeff(&best); // first minimum -> smallest lambda on ties
    report.best_lambda = lambda_grid[best];

    RidgeReadout r = ridge_fit(x, y, report.best_lambda);
    r.cv = report;
    return r;
}

VecR pump_probe_response(const Eigen::Ref<const VecR>& u, const PumpProbeCoeffs& coeffs,
                         double dt) {
    if (!(coeffs.tau_fc > 0.0))
        throw std::invalid_argument("pump_probe_response: tau_fc must be > 0");
    if (!(dt > 0.0) || dt > coeffs.tau_fc / 20.0 * (1.0 + 1e-9))
        throw std::invalid_argument("pump_probe_response: need dt <= tau_fc / 20");
    if (u.size() == 0)
        throw std::invalid_argument("pump_probe_response: empty input");

    const double e = std::exp(-dt / coeffs.tau_fc);
    const double g = coeffs.tau_fc * (1.0 - e); // exact one-pole gain for held input
    const double guard = 1e6 * (std::abs(coeffs.c0) + 1.0);

    VecR y(u.size());
    double i1 = 0.0, i2 = 0.0;
    double y_prev = coeffs.c0; // response before any pump arrives
    for (Index k = 0; k < u.size(); ++k) {
        const double u2 = u[k] * u[k];
        i1 = e * i1 + g * u2;
        // Trapezoidal closure of the self-coupled integral: the unknown y_k
        // appears linearly, so solve in place.
        const double denom = 1.0 - 0.5 * coeffs.c2 * g * u2;
        if (denom <= 1e-12)
            throw DivergenceError("pump_probe_response: unstable self-coupling",
                                  static_cast<double>(k) * dt);
        const double yk =
            (coeffs.c0 + coeffs.c1 * i1 + coeffs.c2 * (e * i2 + 0.5 * g * u2 * y_prev)) / denom;
        if (!std::isfinite(yk) || std::abs(yk) > guard)
            throw DivergenceError("pump_probe_response: response diverged",
                                  static_cast<double>(k) * dt);
        i2 = e * i2 + g * u2 * 0.5 * (y_prev + yk);
        y[k] = yk;
        y_prev = yk;
    }
    return y;
}

McResult memory_capacity(const std::function<StateMatrix(const VecR&)>& reservoir_eval,
                         int l_max, std::uint64_t seed, const McOptions& opts) {
    if (l_max < 1)
        throw std::invalid_argument("memory_capacity: l_max must be >= 1");
    if (opts.n_samples < 10 * (l_max + 1))
        throw std::invalid_argument("memory_capacity: too few samples for l_max");

    VecR input(opts.n_samples);
    Rng rng(seed);
    for (Index i = 0; i < input.size(); ++i)
        input[i] = rng.uniform();

    const StateMatrix state = reservoir_eval(input);
    if (state.features.cols() != input.size())
        throw std::invalid_argument(
            "memory_capacity: reservoir must emit one column per input sample");

    McResult res;
    res.m = VecR::Zero(l_max);

    const Index first = std::max<Index>(opts.washout, l_max);
    const Index usable = input.size() - first;
    const Index n_train = static_cast<Index>(std::floor(opts.train_fraction *
                                                        static_cast<double>(usable)));
    const Index n_test = usable - n_train;
    if (n_train < 10 || n_test < 10)
        throw std::invalid_argument("memory_capacity: train/test split too small");

    const MatR x_train = state.features.middleCols(first, n_train);
    const MatR x_test = state.features.middleCols(first + n_train, n_test);

    for (int l = 1; l <= l_max; ++l) {
        MatR z_train(1, n_train), z_test(1, n_test);
        for (Index j = 0; j < n_train; ++j)
            z_train(0, j) = input[first + j - l];
        for (Index j = 0; j < n_test; ++j)
            z_test(0, j) = input[first + n_train + j - l];

        RidgeReadout r = ridge_fit(x_train, z_train, opts.ridge_lambda);
        const MatR o = r.predict(x_test);

        const double o_mean = o.mean();
        const double z_mean = z_test.mean();
        const double var_o = (o.array() - o_mean).square().mean();
        const double var_z = (z_test.array() - z_mean).square().mean();
        if (var_o <= 1e-300 || var_z <= 0.0) {
            res.m[l - 1] = 0.0; // degenerate output: no recoverable memory
            continue;
        }
        const double cov = ((o.array() - o_mean) * (z_test.array() - z_mean)).mean();
        res.m[l - 1] = std::clamp(cov * cov / (var_o * var_z), 0.0, 1.0);
    }
    res.mc = res.m.sum();
    return res;
}

// --- serialization ------------------------------------------------------

void write_state_matrix_csv(const std::string& path, const StateMatrix& s) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f)
        throw std::runtime_error("write_state_matrix_csv: cannot open " + path);
    for (Index r = 0; r < s.features.rows(); ++r) {
        const std::string label = r < static_cast<Index>(s.provenance.size())
                                      ? s.provenance[static_cast<std::size_t>(r)]
                                      : "f" + std::to_string(r);
        std::fprintf(f, "%s%s", r ? "," : "", label.c_str());
    }
    std::fputc('\n', f);
    for (Index c = 0; c < s.features.cols(); ++c) {
        for (Index r = 0; r < s.features.rows(); ++r)
            std::fprintf(f, "%s%.17g", r ? "," : "", s.features(r, c));
        std::fputc('\n', f);
    }
    std::fclose(f);
}

StateMatrix read_state_matrix_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("read_state_matrix_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line))
        throw ParseError("read_state_matrix_csv: empty file", 1);

    StateMatrix s;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ','))
            s.provenance.push_back(tok);
    }
    const Index nf = static_cast<Index>(s.provenance.size());
    std::vector<VecR> cols;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        VecR col(nf);
        std::stringstream ss(line);
        std::string tok;
        for (Index r = 0; r < nf; ++r) {
            if (!std::getline(ss, tok, ','))
                throw ParseError("read_state_matrix_csv: short row", lineno);
            col[r] = std::stod(tok);
        }
        cols.push_back(std::move(col));
    }
    s.features.resize(nf, static_cast<Index>(cols.size()));
    for (Index c = 0; c < s.features.cols(); ++c)
        s.features.col(c) = cols[static_cast<std::size_t>(c)];
    return s;
}

void write_readout_json(const std::string& path, const RidgeReadout& r) {
    nlohmann::json j;
    j["lambda"] = r.lambda;
    j["intercept"] = r.intercept;
    j["rows"] = r.weights.rows();
    j["cols"] = r.weights.cols();
    std::vector<double> w(static_cast<std::size_t>(r.weights.size()));
    for (Index i = 0; i < r.weights.rows(); ++i)
        for (Index k = 0; k < r.weights.cols(); ++k)
            w[static_cast<std::size_t>(i * r.weights.cols() + k)] = r.weights(i, k);
    j["weights"] = w;
    if (r.cv.lambda_grid.size() > 0) {
        j["cv"] = {{"lambda_grid", std::vector<double>(r.cv.lambda_grid.begin(),
                                                       r.cv.lambda_grid.end())},
                   {"mean_error", std::vector<double>(r.cv.mean_error.begin(),
                                                      r.cv.mean_error.end())},
                   {"best_lambda", r.cv.best_lambda}};
    }
    std::ofstream f(path);
    if (!f)
        throw std::runtime_error("write_readout_json: cannot open " + path);
    f << j.dump(2) << "\n";
}

RidgeReadout read_readout_json(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("read_readout_json: cannot open " + path);
    nlohmann::json j;
    f >> j;
    RidgeReadout r;
    r.lambda = j.at("lambda").get<double>();
    r.intercept = j.at("intercept").get<bool>();
    const Index rows = j.at("rows").get<Index>();
    const Index cols = j.at("cols").get<Index>();
    const auto w = j.at("weights").get<std::vector<double>>();
    if (static_cast<Index>(w.size()) != rows * cols)
        throw ParseError("read_readout_json: weight count mismatch");
    r.weights.resize(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index k = 0; k < cols; ++k)
            r.weights(i, k) = w[static_cast<std::size_t>(i * cols + k)];
    if (j.contains("cv")) {
        const auto& c = j.at("cv");
        const auto grid = c.at("lambda_grid").get<std::vector<double>>();
        const auto err = c.at("mean_error").get<std::vector<double>>();
        r.cv.lambda_grid = Eigen::Map<const VecR>(grid.data(),
                                                  static_cast<Index>(grid.size()));
        r.cv.mean_error = Eigen::Map<const VecR>(err.data(),
                                                 static_cast<Index>(err.size()));
        r.cv.best_lambda = c.at("best_lambda").get<double>();
    }
    return r;
}

} // namespace ringrc
