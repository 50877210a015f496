#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ringrc/errors.hpp"
#include "ringrc/reservoir.hpp"
#include "ringrc/rng.hpp"

using namespace ringrc;

TEST_CASE("encode holds alpha*(W x + u0) per node slot") {
    EncodingConfig cfg;
    cfg.n_virtual = 3;
    cfg.w_in = MatR::Identity(3, 3);
    cfg.alpha = 2.0;
    cfg.u0 = 0.5;
    cfg.node_spacing = 1e-9;
    MatR x(3, 2);
    x << 0.1, 0.0, 0.2, 0.0, 0.3, 0.0;

    const PowerTrace t = encode(x, cfg, 2);
    REQUIRE(t.values.size() == 12);
    CHECK(t.sample_rate == doctest::Approx(2e9));
    const double first_bit[6] = {1.2, 1.2, 1.4, 1.4, 1.6, 1.6};
    for (Index i = 0; i < 6; ++i) CHECK(t.values[i] == doctest::Approx(first_bit[i]));
    for (Index i = 6; i < 12; ++i) CHECK(t.values[i] == doctest::Approx(1.0)); // 2*(0+0.5)

    cfg.u0 = -1.0; // makes every encoded value negative
    CHECK_THROWS_AS(encode(x, cfg, 1), std::invalid_argument);
    try {
        encode(x, cfg, 1);
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("negative encoded power") != std::string::npos);
    }
}

TEST_CASE("mask_encode emits sqrt(p_max * x * m) amplitudes") {
    Mask m;
    m.values.resize(2);
    m.values << 0.5, 1.0;
    VecR x(2);
    x << 1.0, 0.25;
    const SampledSignal s = mask_encode(x, m, 2e-9, 2.0);
    REQUIRE(s.size() == 4);
    CHECK(s.sample_rate == doctest::Approx(1e9)); // theta = b_w / 2
    CHECK(s.samples[0].real() == doctest::Approx(std::sqrt(1.0)));
    CHECK(s.samples[1].real() == doctest::Approx(std::sqrt(2.0)));
    CHECK(s.samples[2].real() == doctest::Approx(std::sqrt(0.25)));
    CHECK(s.samples[3].real() == doctest::Approx(std::sqrt(0.5)));

    VecR bad(1);
    bad << -0.1;
    CHECK_THROWS_AS(mask_encode(bad, m, 2e-9, 2.0), std::invalid_argument);
    m.values << 0.5, 1.5;
    CHECK_THROWS_AS(mask_encode(x, m, 2e-9, 2.0), std::invalid_argument);
}

TEST_CASE("sample_virtual_nodes: identity, averaging, uneven bins, zero fill") {
    VecR trace(10);
    trace << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;

    SUBCASE("equal counts copy verbatim") {
        const StateMatrix s = sample_virtual_nodes(trace, 1.0, 5, 5.0);
        REQUIRE(s.features.rows() == 5);
        REQUIRE(s.features.cols() == 2);
        CHECK(s.features(0, 0) == 1);
        CHECK(s.features(4, 1) == 10);
    }
    SUBCASE("more samples than nodes bin-average") {
        const StateMatrix s = sample_virtual_nodes(trace, 1.0, 5, 10.0);
        REQUIRE(s.features.cols() == 1);
        CHECK(s.features(0, 0) == doctest::Approx(1.5));
        CHECK(s.features(4, 0) == doctest::Approx(9.5));
    }
    SUBCASE("uneven split floors the boundaries") {
        const StateMatrix s = sample_virtual_nodes(trace.head(5), 1.0, 2, 5.0);
        // 5 samples over 2 nodes: bins [0,2) and [2,5).
        CHECK(s.features(0, 0) == doctest::Approx(1.5));
        CHECK(s.features(1, 0) == doctest::Approx(4.0));
    }
    SUBCASE("fewer samples than nodes zero-fill") {
        const StateMatrix s = sample_virtual_nodes(trace.head(2), 1.0, 4, 2.0);
        CHECK(s.features(0, 0) == 1);
        CHECK(s.features(1, 0) == 2);
        CHECK(s.features(2, 0) == 0);
        CHECK(s.features(3, 0) == 0);
    }
    SUBCASE("rates must give an integer sample count per bit") {
        CHECK_THROWS_AS(sample_virtual_nodes(trace, 1.0, 2, 2.5), std::invalid_argument);
        CHECK_THROWS_AS(sample_virtual_nodes(trace.head(7), 1.0, 2, 2.0),
                        std::invalid_argument);
    }
}

TEST_CASE("augment_rbits wraps past-bit columns periodically") {
    StateMatrix s;
    s.features.resize(2, 4);
    s.features << 1, 2, 3, 4, 5, 6, 7, 8;
    s.provenance = {"node0", "node1"};

    const StateMatrix a = augment_rbits(s, 2);
    REQUIRE(a.features.rows() == 4);
    REQUIRE(a.features.cols() == 4);
    // Column 0 wraps to the final bit.
    CHECK(a.features(0, 0) == 1);
    CHECK(a.features(2, 0) == 4);
    CHECK(a.features(3, 0) == 8);
    CHECK(a.features(2, 2) == 2);
    CHECK(a.provenance[2] == "bit-1:node0");

    const StateMatrix same = augment_rbits(s, 1);
    CHECK(same.features == s.features);
    CHECK_THROWS_AS(augment_rbits(s, 5), std::invalid_argument);
    CHECK_THROWS_AS(augment_rbits(s, 0), std::invalid_argument);
}

TEST_CASE("ridge_fit: hand-solved one-feature systems") {
    MatR x(1, 3), y(1, 3);
    x << 1, 2, 3;

    SUBCASE("no intercept, no penalty") {
        y << 2, 4, 6;
        const RidgeReadout r = ridge_fit(x, y, 0.0, false);
        CHECK(r.weights(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("penalty shrinks toward zero: w = Sxy/(Sxx + l^2)") {
        y << 2, 4, 6;
        const RidgeReadout r = ridge_fit(x, y, std::sqrt(14.0), false);
        CHECK(r.weights(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("intercept recovers affine data exactly") {
        y << 3, 5, 7; // y = 2x + 1
        const RidgeReadout r = ridge_fit(x, y, 0.0, true);
        CHECK(r.weights(0, 0) == doctest::Approx(2.0).epsilon(1e-10));
        CHECK(r.weights(0, 1) == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(r.predict(x)(0, 2) == doctest::Approx(7.0).epsilon(1e-10));
    }
    SUBCASE("huge penalty leaves only the (unpenalized) intercept") {
        y << 3, 5, 7;
        const RidgeReadout r = ridge_fit(x, y, 1e8, true);
        CHECK(std::abs(r.weights(0, 0)) < 1e-6);
        CHECK(r.weights(0, 1) == doctest::Approx(5.0).epsilon(1e-6)); // mean(y)
    }
}

TEST_CASE("ridge_fit matches a conjugate-gradient oracle to 1e-6") {
    Rng rng(31);
    MatR x(8, 60), y(2, 60);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
    for (Index i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform(-1, 1);
    const double lambda = 0.3;

    const RidgeReadout r = ridge_fit(x, y, lambda, true);

    // Independent solver: CG on (Xa Xa^T + l^2 D) w = Xa y^T per output row,
    // with D zeroing the intercept entry.
    MatR xa(9, 60);
    xa.topRows(8) = x;
    xa.row(8).setOnes();
    MatR a = xa * xa.transpose();
    for (Index i = 0; i < 8; ++i) a(i, i) += lambda * lambda;
    for (Index q = 0; q < 2; ++q) {
        VecR b = xa * y.row(q).transpose();
        VecR w = VecR::Zero(9);
        VecR res = b, p = b;
        double rs = res.squaredNorm();
        for (int it = 0; it < 400 && rs > 1e-26; ++it) {
            const VecR ap = a * p;
            const double alpha = rs / p.dot(ap);
            w += alpha * p;
            res -= alpha * ap;
            const double rs2 = res.squaredNorm();
            p = res + (rs2 / rs) * p;
            rs = rs2;
        }
        for (Index i = 0; i < 9; ++i)
            CHECK(std::abs(r.weights(q, i) - w[i]) <= 1e-6);
    }
}

TEST_CASE("ridge_fit rejects singular systems at lambda = 0") {
    MatR x(2, 4), y(1, 4);
    x << 1, 2, 3, 4, 2, 4, 6, 8; // duplicate direction
    y << 1, 1, 2, 2;
    CHECK_THROWS_AS(ridge_fit(x, y, 0.0, false), SolvabilityError);
    CHECK_NOTHROW(ridge_fit(x, y, 1e-3, false));
}

TEST_CASE("ridge_cv selects by contiguous-fold validation error") {
    Rng rng(5);
    MatR x(3, 100), y(1, 100);
    VecR w_true(3);
    w_true << 0.5, -1.0, 2.0;
    for (Index j = 0; j < 100; ++j) {
        for (Index i = 0; i < 3; ++i) x(i, j) = rng.uniform(-1, 1);
        y(0, j) = w_true.dot(x.col(j)) + 0.3;
    }
    VecR grid(2);
    grid << 1e-4, 1e3;
    const RidgeReadout r = ridge_cv(x, y, grid, 5);
    CHECK(r.cv.best_lambda == 1e-4); // clean linear data favors the weak penalty
    CHECK(r.lambda == r.cv.best_lambda);
    CHECK(r.cv.fold_error.rows() == 5);
    CHECK(r.cv.fold_error.cols() == 2);
    for (Index g = 0; g < 2; ++g)
        CHECK(r.cv.mean_error[g] ==
              doctest::Approx(r.cv.fold_error.col(g).mean()).epsilon(1e-12));
    CHECK((r.predict(x) - y).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("ridge_cv skips lambdas whose folds are singular") {
    MatR x = MatR::Zero(2, 40); // all-zero features: singular at lambda = 0
    MatR y(1, 40);
    for (Index j = 0; j < 40; ++j) y(0, j) = static_cast<double>(j % 3);
    VecR grid(2);
    grid << 0.0, 1.0;
    const RidgeReadout r = ridge_cv(x, y, grid, 4);
    CHECK(r.cv.best_lambda == 1.0);
    CHECK(std::isinf(r.cv.mean_error[0]));
}

namespace {

// Exact continuous response for piecewise-constant pump: over one hold
// interval the pair (i1, i2) obeys a constant-coefficient linear ODE
//   i1' = -i1/tau + u2,   i2' = -i2/tau + u2*(c0 + c1 i1 + c2 i2),
// whose lower-triangular system matrix integrates in closed form.
VecR pump_probe_exact(const VecR& u, const PumpProbeCoeffs& c, double dt) {
    double i1 = 0, i2 = 0;
    VecR y(u.size());
    for (Index k = 0; k < u.size(); ++k) {
        const double u2 = u[k] * u[k];
        const double l1 = -1.0 / c.tau_fc;
        const double l2 = -1.0 / c.tau_fc + u2 * c.c2;
        const double a21 = u2 * c.c1;
        const double b1 = u2;
        const double b2 = u2 * c.c0;
        // Particular solution A x + b = 0 (A is invertible: l1, l2 < 0 for
        // the coefficient ranges exercised here).
        const double p1 = -b1 / l1;
        const double p2 = -(b2 + a21 * p1) / l2;
        const double e1 = std::exp(l1 * dt);
        const double e2 = std::exp(l2 * dt);
        const double phi = (std::abs(l1 - l2) > 1e-300 * std::abs(l1))
                               ? (e1 - e2) / (l1 - l2)
                               : dt * e1;
        const double h1 = i1 - p1;
        const double h2 = i2 - p2;
        i1 = p1 + e1 * h1;
        i2 = p2 + e2 * h2 + a21 * phi * h1;
        y[k] = c.c0 + c.c1 * i1 + c.c2 * i2;
    }
    return y;
}

VecR smooth_pump(Index n) {
    VecR u(n);
    for (Index k = 0; k < n; ++k) {
        const double s = static_cast<double>(k) / static_cast<double>(n);
        u[k] = 0.6 + 0.4 * std::sin(6.28318530717958647 * 3.0 * s) *
                         std::cos(6.28318530717958647 * 0.7 * s);
    }
    return u;
}

} // namespace

TEST_CASE("pump_probe_response: constant pump matches the one-pole analytic curve") {
    PumpProbeCoeffs c;
    c.tau_fc = 10e-9;
    c.c0 = 0.1;
    c.c1 = 0.72 / c.tau_fc;
    c.c2 = 0.0;
    const double dt = c.tau_fc / 40.0;
    const VecR u = VecR::Constant(400, 0.8);
    const VecR y = pump_probe_response(u, c, dt);
    for (Index k = 0; k < u.size(); k += 37) {
        const double t_end = static_cast<double>(k + 1) * dt;
        const double i1 = 0.64 * c.tau_fc * (1.0 - std::exp(-t_end / c.tau_fc));
        CHECK(y[k] == doctest::Approx(c.c0 + c.c1 * i1).epsilon(1e-12));
    }
}

TEST_CASE("pump_probe_response matches the exact matrix-exponential oracle") {
    PumpProbeCoeffs c;
    c.tau_fc = 10e-9;
    c.c0 = 0.1;
    c.c1 = 0.72 / c.tau_fc;
    c.c2 = 0.15 / c.tau_fc;
    const double dt = c.tau_fc / 20.0;
    const VecR u = smooth_pump(600);
    const VecR got = pump_probe_response(u, c, dt);
    const VecR ref = pump_probe_exact(u, c, dt);
    for (Index k = 0; k < u.size(); ++k)
        CHECK(got[k] == doctest::Approx(ref[k]).epsilon(1e-3));
}

TEST_CASE("pump_probe_response converges under grid refinement") {
    PumpProbeCoeffs c;
    c.tau_fc = 10e-9;
    c.c0 = 0.1;
    c.c1 = 0.72 / c.tau_fc;
    c.c2 = 0.15 / c.tau_fc;
    const double dt = c.tau_fc / 20.0;
    const VecR u = smooth_pump(300);

    // Same piecewise-constant drive on a 16x finer grid.
    VecR u_fine(u.size() * 16);
    for (Index k = 0; k < u.size(); ++k) u_fine.segment(16 * k, 16).setConstant(u[k]);
    const VecR coarse = pump_probe_response(u, c, dt);
    const VecR fine = pump_probe_response(u_fine, c, dt / 16.0);
    for (Index k = 0; k < u.size(); ++k) {
        const double rel = std::abs(coarse[k] - fine[16 * k + 15]) /
                           std::max(std::abs(fine[16 * k + 15]), 1e-12);
        CHECK(rel <= 1e-3);
    }
}

TEST_CASE("pump_probe_response guards its step size and stability") {
    PumpProbeCoeffs c;
    c.tau_fc = 10e-9;
    CHECK_THROWS_AS(pump_probe_response(VecR::Ones(4), c, c.tau_fc), std::invalid_argument);

    c.c2 = 60.0 / (c.tau_fc * (1.0 - std::exp(-0.05))); // drives the closure singular
    CHECK_THROWS_AS(pump_probe_response(VecR::Ones(40), c, c.tau_fc / 20.0),
                    DivergenceError);
}

TEST_CASE("memory_capacity: a k-tap shift register scores k") {
    // Reservoir whose features are the inputs delayed by 1..5 bits; a linear
    // readout recovers those delays perfectly and nothing beyond.
    const int taps = 5;
    auto shift_reservoir = [&](const VecR& in) {
        StateMatrix s;
        s.features = MatR::Zero(taps, in.size());
        for (Index j = 0; j < in.size(); ++j)
            for (int k = 1; k <= taps; ++k)
                s.features(k - 1, j) = (j - k >= 0) ? in[j - k] : 0.0;
        return s;
    };
    const McResult r = memory_capacity(shift_reservoir, 19, 7);
    CHECK(r.mc == doctest::Approx(static_cast<double>(taps)).epsilon(0.04));
    for (int l = 1; l <= taps; ++l)
        CHECK(r.m[l - 1] == doctest::Approx(1.0).epsilon(1e-6));
    for (int l = taps + 2; l <= 19; ++l)
        CHECK(r.m[l - 1] < 0.05);
    CHECK(r.m.minCoeff() >= 0.0);
    CHECK(r.m.maxCoeff() <= 1.0);
}

TEST_CASE("memory_capacity: constant reservoirs carry no memory") {
    auto flat = [](const VecR& in) {
        StateMatrix s;
        s.features = MatR::Ones(3, in.size());
        return s;
    };
    auto noise = [](const VecR& in) {
        StateMatrix s;
        s.features.resize(3, in.size());
        Rng r(123);
        for (Index i = 0; i < s.features.size(); ++i)
            s.features.data()[i] = r.uniform();
        return s;
    };
    // Constant outputs: predictions carry only rounding noise, so every
    // per-delay score collapses to numerical zero.
    CHECK(memory_capacity(flat, 10, 7).mc < 1e-12);
    CHECK(memory_capacity(noise, 10, 7).mc < 0.2); // uncorrelated output


    auto short_output = [](const VecR& in) {
        StateMatrix s;
        s.features = MatR::Ones(2, in.size() - 1);
        return s;
    };
    CHECK_THROWS_AS(memory_capacity(short_output, 10, 7), std::invalid_argument);
}

TEST_CASE("state matrix CSV and readout JSON round-trip") {
    StateMatrix s;
    s.features.resize(3, 5);
    Rng rng(8);
    for (Index i = 0; i < s.features.size(); ++i)
        s.features.data()[i] = rng.uniform(-2, 2);
    s.provenance = {"node0", "node1", "bit-1:node0"};

    const std::string pcsv =
        (std::filesystem::temp_directory_path() / "ringrc_state.csv").string();
    write_state_matrix_csv(pcsv, s);
    const StateMatrix rs = read_state_matrix_csv(pcsv);
    CHECK(rs.provenance == s.provenance);
    CHECK(rs.features == s.features);
    std::remove(pcsv.c_str());

    MatR x(2, 30), y(1, 30);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
    for (Index i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform(-1, 1);
    VecR grid(3);
    grid << 1e-6, 1e-3, 1.0;
    const RidgeReadout r = ridge_cv(x, y, grid, 5);

    const std::string pjson =
        (std::filesystem::temp_directory_path() / "ringrc_readout.json").string();
    write_readout_json(pjson, r);
    const RidgeReadout rr = read_readout_json(pjson);
    CHECK(rr.weights == r.weights);
    CHECK(rr.lambda == r.lambda);
    CHECK(rr.intercept == r.intercept);
    CHECK(rr.cv.best_lambda == r.cv.best_lambda);
    std::remove(pjson.c_str());
}
