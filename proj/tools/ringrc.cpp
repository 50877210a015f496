#include <cstdio>
#include <exception>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ringrc/config.hpp"
#include "ringrc/errors.hpp"
#include "ringrc/experiments.hpp"
#include "ringrc/mrr.hpp"
#include "ringrc/version.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir, bool dump,
            int workers) {
    const ringrc::Config cfg = ringrc::Config::parse_file(config_path);
    ringrc::RunOptions opts;
    opts.out_dir = out_dir;
    opts.dump_traces = dump;
    opts.n_workers = workers;
    const ringrc::RunSummary s = ringrc::run_experiment(cfg, opts);
    std::printf("%s: %s finished in %.1f s\n", ringrc::code_version, s.kind.c_str(),
                s.wall_seconds);
    for (const auto& f : s.outputs)
        std::printf("  wrote %s\n", f.c_str());
    return 0;
}

int cmd_compare(const std::string& out_path, const std::string& in_path) {
    const ringrc::ResultMap mo = ringrc::read_result_map_csv(out_path);
    const ringrc::ResultMap mi = ringrc::read_result_map_csv(in_path);
    const ringrc::ResultMap rb = ringrc::compare_baseline(mo, mi);
    const auto dir = std::filesystem::path(out_path).parent_path();
    const std::string rb_path = (dir / "rb.csv").string();
    ringrc::write_result_map_csv(rb_path, rb);

    const ringrc::Index k = rb.metric_index("rb");
    double best = 0.0, worst = std::numeric_limits<double>::infinity();
    ringrc::Index best_cell = -1, n_live = 0, n_improved = 0;
    for (ringrc::Index c = 0; c < rb.n_cells(); ++c) {
        if (rb.diverged[static_cast<std::size_t>(c)])
            continue;
        const double v = rb.metrics(c, k);
        ++n_live;
        if (v > 1.0)
            ++n_improved;
        if (v > best) {
            best = v;
            best_cell = c;
        }
        worst = std::min(worst, v);
    }
    std::printf("wrote %s\n", rb_path.c_str());
    std::printf("cells: %lld total, %lld usable, %lld improved (rb > 1)\n",
                static_cast<long long>(rb.n_cells()), static_cast<long long>(n_live),
                static_cast<long long>(n_improved));
    if (best_cell >= 0) {
        std::printf("best rb = %.3g at", best);
        const auto coords = rb.cell_coords(best_cell);
        for (std::size_t a = 0; a < rb.axes.size(); ++a)
            std::printf(" %s = %.6g", rb.axes[a].name.c_str(),
                        rb.axes[a].values[coords[a]]);
        std::printf("; worst rb = %.3g\n", worst);
    }
    return 0;
}

int cmd_presets() {
    std::printf("%-16s %9s %6s %9s %9s %9s %9s %9s\n", "name", "radius_um", "Q_load",
                "tau_ph_ps", "tau_fc_ns", "tau_th_ns", "fsr_ghz", "k2");
    for (const auto& name : ringrc::mrr_preset_names()) {
        const ringrc::MrrParams p = ringrc::mrr_preset(name);
        const ringrc::MrrRates r = ringrc::derive_rates(p);
        std::printf("%-16s %9.2f %6.0f %9.2f %9.1f %9.1f %9.1f %9.4f\n", name.c_str(),
                    p.radius * 1e6, r.q_loaded, r.tau_ph * 1e12, p.tau_fc * 1e9,
                    p.tau_th * 1e9, 1e-9 / r.t_roundtrip, p.coupling_k2);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(ringrc::code_version) +
                 " - microring reservoir experiment runner"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    bool dump = false;
    int workers = 0;
    auto* run = app.add_subcommand("run", "run the experiment described by a config file");
    run->add_option("config", config_path, "INI config file")->required();
    run->add_option("--out", out_dir, "output directory (default from the config)");
    run->add_flag("--dump-traces", dump, "also write per-cell time traces");
    run->add_option("--workers", workers,
                    "worker threads (default: RINGRC_WORKERS or 1)");

    std::string cmp_out, cmp_in;
    auto* cmp = app.add_subcommand(
        "compare", "bit-error recovery ratio of an output map over an input baseline");
    cmp->add_option("out_map", cmp_out, "map.csv measured at the device output")->required();
    cmp->add_option("in_map", cmp_in, "map.csv of the undistorted-input baseline")
        ->required();

    auto* presets = app.add_subcommand("presets", "preset device parameter sets");
    presets->add_subcommand("list", "list presets with derived rates");

    try {
        app.parse(argc, argv);
        if (run->parsed())
            return cmd_run(config_path, out_dir, dump, workers);
        if (cmp->parsed())
            return cmd_compare(cmp_out, cmp_in);
        return cmd_presets();
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ringrc::ParseError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
