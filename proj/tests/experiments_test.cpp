#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "ringrc/config.hpp"
#include "ringrc/errors.hpp"
#include "ringrc/experiments.hpp"

using namespace ringrc;
namespace fs = std::filesystem;

namespace {

ResultMap toy_map(const std::vector<double>& ber, const std::vector<double>& floor_flags) {
    ResultMap m;
    VecR p(2), d(2);
    p << 1e-3, 2e-3;
    d << -2e9, 0.0;
    m.axes = {{"power_w", p}, {"detuning_hz", d}};
    m.metric_names = {"ber", "ber_floor", "n_test_bits"};
    m.metrics.resize(4, 3);
    for (Index i = 0; i < 4; ++i) {
        m.metrics(i, 0) = ber[static_cast<std::size_t>(i)];
        m.metrics(i, 1) = floor_flags[static_cast<std::size_t>(i)];
        m.metrics(i, 2) = 200.0;
    }
    m.diverged = {0, 0, 0, 0};
    m.cell_seeds = {11, 12, 13, 14};
    m.kind = "logic_task";
    m.preset = "bazzanella2022";
    m.seed = 42;
    m.config_hash = 0xdeadbeefcafef00dULL;
    m.version = "test";
    return m;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("ringrc_test_" + name);
    fs::remove_all(dir);
    return dir;
}

} // namespace

TEST_CASE("experiments: result map validation and coordinates") {
    ResultMap m = toy_map({0.1, 0.2, 0.3, 0.4}, {0, 0, 0, 0});
    CHECK(m.n_cells() == 4);
    CHECK(m.metric_index("ber") == 0);
    CHECK(m.metric_index("n_test_bits") == 2);
    CHECK_THROWS_AS(m.metric_index("missing"), std::invalid_argument);
    m.validate();

    // Row-major with the first axis slowest.
    const auto c0 = m.cell_coords(0);
    const auto c3 = m.cell_coords(3);
    CHECK(c0 == std::vector<Index>{0, 0});
    CHECK(c3 == std::vector<Index>{1, 1});
    CHECK(m.cell_coords(2) == std::vector<Index>{1, 0});

    ResultMap bad = m;
    bad.metrics.resize(3, 3);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = m;
    bad.diverged.pop_back();
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("experiments: result map csv round trip is lossless") {
    ResultMap m = toy_map({0.1, 1.0 / 3.0, 5e-3, 0.25}, {0, 0, 1, 0});
    m.diverged[3] = 1;
    m.metrics(3, 0) = std::numeric_limits<double>::quiet_NaN();
    const fs::path dir = fresh_dir("roundtrip");
    fs::create_directories(dir);
    const std::string path = (dir / "map.csv").string();
    write_result_map_csv(path, m);

    const ResultMap r = read_result_map_csv(path);
    CHECK(r.kind == m.kind);
    CHECK(r.preset == m.preset);
    CHECK(r.seed == m.seed);
    CHECK(r.config_hash == m.config_hash);
    CHECK(r.version == m.version);
    REQUIRE(r.axes.size() == 2);
    CHECK(r.axes[0].name == "power_w");
    CHECK(r.axes[1].values[0] == -2e9); // bitwise, no tolerance
    CHECK(r.metric_names == m.metric_names);
    CHECK(r.metrics(1, 0) == 1.0 / 3.0);
    CHECK(std::isnan(r.metrics(3, 0)));
    CHECK(r.diverged == m.diverged);
    CHECK(r.cell_seeds == m.cell_seeds);

    // Writing the loaded map reproduces the file byte for byte.
    const std::string path2 = (dir / "map2.csv").string();
    write_result_map_csv(path2, r);
    CHECK(slurp(path) == slurp(path2));
    fs::remove_all(dir);
}

TEST_CASE("experiments: compare_baseline recovery ratios") {
    const ResultMap in = toy_map({0.1, 0.2, 0.3, 0.4}, {0, 0, 0, 0});

    SUBCASE("identical maps give ratio one everywhere") {
        const ResultMap rb = compare_baseline(in, in);
        REQUIRE(rb.metric_names[0] == "rb");
        for (Index i = 0; i < 4; ++i)
            CHECK(rb.metrics(i, rb.metric_index("rb")) == 1.0);
    }
    SUBCASE("tenfold better output gives ratio ten") {
        ResultMap out = toy_map({0.01, 0.02, 0.03, 0.04}, {0, 0, 0, 0});
        const ResultMap rb = compare_baseline(out, in);
        for (Index i = 0; i < 4; ++i)
            CHECK(rb.metrics(i, rb.metric_index("rb")) == doctest::Approx(10.0).epsilon(1e-12));
    }
    SUBCASE("hand computed cells with floors and divergence") {
        ResultMap out = toy_map({0.05, 5e-3, 0.6, 0.1}, {0, 1, 0, 0});
        out.diverged[3] = 1;
        const ResultMap rb = compare_baseline(out, in);
        const Index k = rb.metric_index("rb");
        CHECK(rb.metrics(0, k) == doctest::Approx(2.0));
        CHECK(rb.metrics(1, k) == doctest::Approx(40.0));
        CHECK(rb.metrics(1, rb.metric_index("rb_floor")) == 1.0); // out at its floor
        CHECK(rb.metrics(2, k) == doctest::Approx(0.5));          // ring made it worse
        CHECK(std::isnan(rb.metrics(3, k)));
        CHECK(rb.diverged == std::vector<int>{0, 0, 0, 1});
    }
    SUBCASE("axis mismatch is rejected") {
        ResultMap out = toy_map({0.1, 0.2, 0.3, 0.4}, {0, 0, 0, 0});
        out.axes[0].values[1] = 3e-3;
        CHECK_THROWS_AS(compare_baseline(out, in), std::invalid_argument);
    }
    SUBCASE("missing metric is rejected") {
        ResultMap out = toy_map({0.1, 0.2, 0.3, 0.4}, {0, 0, 0, 0});
        out.metric_names[0] = "accuracy";
        CHECK_THROWS_AS(compare_baseline(out, in), std::invalid_argument);
    }
}

TEST_CASE("experiments: best power projection") {
    ResultMap m = toy_map({0.3, 0.02, 0.1, 0.2}, {0, 0, 0, 0});

    SUBCASE("argmin over power is carried with its metrics") {
        // cells: (p0,d0)=0.3 (p0,d1)=0.02 (p1,d0)=0.1 (p1,d1)=0.2
        const ResultMap pr = best_power_projection(m, "ber", "power_w");
        REQUIRE(pr.axes.size() == 1);
        CHECK(pr.axes[0].name == "detuning_hz");
        CHECK(pr.n_cells() == 2);
        const Index kb = pr.metric_index("ber");
        const Index kp = pr.metric_index("power_at_best_w");
        CHECK(pr.metrics(0, kb) == 0.1);  // detuning -2e9: min(0.3, 0.1)
        CHECK(pr.metrics(0, kp) == 2e-3);
        CHECK(pr.metrics(1, kb) == 0.02); // detuning 0: min(0.02, 0.2)
        CHECK(pr.metrics(1, kp) == 1e-3);
    }
    SUBCASE("ties resolve to the lowest power") {
        ResultMap t = toy_map({0.1, 0.5, 0.1, 0.5}, {0, 0, 0, 0});
        const ResultMap pr = best_power_projection(t, "ber", "power_w");
        CHECK(pr.metrics(0, pr.metric_index("power_at_best_w")) == 1e-3);
    }
    SUBCASE("diverged cells are skipped; all diverged marks the output cell") {
        ResultMap t = toy_map({0.1, 0.5, 0.2, 0.6}, {0, 0, 0, 0});
        t.diverged = {1, 1, 0, 1};
        const ResultMap pr = best_power_projection(t, "ber", "power_w");
        CHECK(pr.metrics(0, pr.metric_index("ber")) == 0.2); // only live cell
        CHECK(pr.diverged[0] == 0);
        CHECK(pr.diverged[1] == 1);
        CHECK(std::isnan(pr.metrics(1, pr.metric_index("ber"))));
    }
    SUBCASE("unknown axis or metric rejected") {
        CHECK_THROWS_AS(best_power_projection(m, "ber", "nope"), std::invalid_argument);
        CHECK_THROWS_AS(best_power_projection(m, "nope", "power_w"), std::invalid_argument);
    }
}

namespace {

const char* kXorConfig = R"(
[experiment]
kind = xor_rc
seed = 7

[task]
n1 = 1
n2 = 2

[input]
n_bits = 220
washout_bits = 30

[grid.bitrate]
values = 10 Mbps, 22.2 Mbps
)";

} // namespace

TEST_CASE("experiments: run_experiment produces a complete output set") {
    const Config cfg = Config::parse_string(kXorConfig, "xor.ini");
    const fs::path dir = fresh_dir("xor_run");
    RunOptions opts;
    opts.out_dir = dir.string();
    const RunSummary s = run_experiment(cfg, opts);
    CHECK(s.kind == "xor_rc");
    CHECK(fs::exists(dir / "map.csv"));
    CHECK(fs::exists(dir / "map_baseline.csv"));
    CHECK(fs::exists(dir / "manifest.json"));
    REQUIRE(!s.outputs.empty());
    CHECK(s.outputs.front() == (dir / "map.csv").string());

    const ResultMap m = read_result_map_csv((dir / "map.csv").string());
    CHECK(m.kind == "xor_rc");
    CHECK(m.seed == 7);
    CHECK(m.config_hash == cfg.content_hash());
    REQUIRE(m.axes.size() == 1);
    CHECK(m.axes[0].name == "bitrate_bps");
    CHECK(m.n_cells() == 2);
    const Index kb = m.metric_index("ber");
    for (Index i = 0; i < 2; ++i) {
        CHECK(m.diverged[static_cast<std::size_t>(i)] == 0);
        CHECK(m.metrics(i, kb) > 0.0);
        CHECK(m.metrics(i, kb) <= 0.6);
    }

    // The undistorted-input baseline cannot solve XOR: it stays near chance
    // while the nonlinear reservoir separates it.
    const ResultMap mb = read_result_map_csv((dir / "map_baseline.csv").string());
    CHECK(mb.metrics(0, kb) > 0.15);
    fs::remove_all(dir);
}

TEST_CASE("experiments: reruns are byte identical") {
    const Config cfg = Config::parse_string(kXorConfig, "xor.ini");
    const fs::path a = fresh_dir("rerun_a"), b = fresh_dir("rerun_b");
    RunOptions oa, ob;
    oa.out_dir = a.string();
    ob.out_dir = b.string();
    run_experiment(cfg, oa);
    run_experiment(cfg, ob);
    CHECK(slurp(a / "map.csv") == slurp(b / "map.csv"));
    CHECK(slurp(a / "map_baseline.csv") == slurp(b / "map_baseline.csv"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("experiments: config problems are parse errors") {
    SUBCASE("unknown kind") {
        const Config cfg =
            Config::parse_string("[experiment]\nkind = flurble\nseed = 1\n", "bad.ini");
        CHECK_THROWS_AS(run_experiment(cfg), ParseError);
    }
    SUBCASE("missing seed") {
        const Config cfg = Config::parse_string("[experiment]\nkind = xor_rc\n", "bad.ini");
        CHECK_THROWS_AS(run_experiment(cfg), ParseError);
    }
    SUBCASE("unsupported grid axis for the kind") {
        const Config cfg = Config::parse_string(
            "[experiment]\nkind = xor_rc\nseed = 1\n[grid.power]\nvalues = 1 mW\n", "bad.ini");
        try {
            RunOptions o;
            o.out_dir = fresh_dir("bad_axis").string();
            run_experiment(cfg, o);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("unsupported grid axis") != std::string::npos);
        }
    }
    SUBCASE("washout too small for the task history") {
        const Config cfg = Config::parse_string(
            "[experiment]\nkind = xor_rc\nseed = 1\n"
            "[task]\nn1 = 4\nn2 = 2\n[input]\nwashout_bits = 3\n",
            "bad.ini");
        RunOptions o;
        o.out_dir = fresh_dir("bad_washout").string();
        CHECK_THROWS_AS(run_experiment(cfg, o), ParseError);
    }
}

TEST_CASE("experiments: small stability run stays stable at low power") {
    const Config cfg = Config::parse_string(R"(
[experiment]
kind = stability_map
seed = 3

[device]
preset = borghi2021

[integration]
settle = 1 us
observe = 2 us

[grid.power]
values = 0.01 mW, 0.02 mW

[grid.detuning]
values = -2 GHz, 0 GHz
)",
                     "stab.ini");
    const fs::path dir = fresh_dir("stab_run");
    RunOptions opts;
    opts.out_dir = dir.string();
    run_experiment(cfg, opts);
    CHECK(fs::exists(dir / "stability.csv"));
    const ResultMap m = read_result_map_csv((dir / "map.csv").string());
    CHECK(m.n_cells() == 4);
    const Index k = m.metric_index("is_sp");
    for (Index i = 0; i < 4; ++i) {
        CHECK(m.metrics(i, k) == 0.0);
        CHECK(m.metrics(i, m.metric_index("sp_freq_hz")) == 0.0);
    }
    fs::remove_all(dir);
}
