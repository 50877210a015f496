#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ringrc/config.hpp"
#include "ringrc/types.hpp"

namespace ringrc {

/// Sweep output: one row of metrics per grid cell. Cells are laid out
/// row-major with the first axis slowest; an empty axis list means a single
/// cell. Every cell records the derived seed it ran with, so serial and
/// parallel execution produce identical files.
struct ResultMap {
    std::vector<GridAxis> axes;
    std::vector<std::string> metric_names;
    MatR metrics; // n_cells x metric_names.size()
    std::vector<int> diverged;
    std::vector<std::uint64_t> cell_seeds;

    std::string kind;
    std::string preset;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::string version;

    Index n_cells() const;
    Index metric_index(const std::string& name) const; // throws invalid_argument
    std::vector<Index> cell_coords(Index cell) const;
    void validate() const;
};

/// CSV layout: "# key = value" provenance comments, one authoritative
/// "# axis <name> = v1,v2,..." line per axis (17 significant digits), a
/// header row "cell,<axes...>,cell_seed,diverged,<metrics...>", then one
/// row per cell. Loads back losslessly.
void write_result_map_csv(const std::string& path, const ResultMap& m);
ResultMap read_result_map_csv(const std::string& path);

/// Cellwise BER ratio of a processed map against an input-only baseline:
/// rb = ber_in / ber_out. Both maps need metrics ber, ber_floor and
/// n_test_bits (floor cells already store the 1/M bound, never zero).
/// rb_floor marks cells where either side sits at its statistical floor,
/// so the ratio is only a bound. Axes must match exactly.
ResultMap compare_baseline(const ResultMap& map_out, const ResultMap& map_in);

/// Collapses the power axis by taking, for every remaining cell, the metric
/// minimum over power; ties resolve to the lowest power. The projected map
/// keeps all metric columns of the winning cell and appends power_at_best_w.
ResultMap best_power_projection(const ResultMap& m, const std::string& metric = "ber",
                                const std::string& power_axis = "power_w");

struct RunOptions {
    std::string out_dir;     // empty: config [experiment] output, else "out-<kind>"
    bool dump_traces = false;
    int n_workers = 0;       // 0: RINGRC_WORKERS env var, else 1
};

struct RunSummary {
    std::string kind;
    std::string out_dir;
    std::vector<std::string> outputs; // paths written, map.csv first
    double wall_seconds = 0.0;
};

/// Runs the experiment described by cfg and writes map.csv, manifest.json
/// and any kind-specific artifacts into the output directory. Configuration
/// problems (unknown kind, bad grid axis, missing keys) raise ParseError;
/// divergence inside a sweep cell marks that cell and continues.
RunSummary run_experiment(const Config& cfg, const RunOptions& opts = {});

std::vector<std::string> experiment_kinds();

} // namespace ringrc
