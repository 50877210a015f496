#include "ringrc/experiments.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ringrc/errors.hpp"

namespace ringrc {

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep))
        out.push_back(item);
    if (!s.empty() && s.back() == sep)
        out.push_back("");
    return out;
}

bool axes_equal(const std::vector<GridAxis>& a, const std::vector<GridAxis>& b) {
    if (a.size() != b.size())
        return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].name != b[k].name || a[k].values.size() != b[k].values.size())
            return false;
        for (Index i = 0; i < a[k].values.size(); ++i)
            if (a[k].values[i] != b[k].values[i])
                return false;
    }
    return true;
}

} // namespace

Index ResultMap::n_cells() const {
    Index n = 1;
    for (const auto& a : axes)
        n *= a.values.size();
    return n;
}

Index ResultMap::metric_index(const std::string& name) const {
    for (std::size_t i = 0; i < metric_names.size(); ++i)
        if (metric_names[i] == name)
            return static_cast<Index>(i);
    throw std::invalid_argument("ResultMap: no metric named '" + name + "'");
}

std::vector<Index> ResultMap::cell_coords(Index cell) const {
    std::vector<Index> idx(axes.size(), 0);
    for (std::size_t k = axes.size(); k-- > 0;) {
        const Index sz = axes[k].values.size();
        idx[k] = cell % sz;
        cell /= sz;
    }
    return idx;
}

void ResultMap::validate() const {
    for (const auto& a : axes) {
        if (a.name.empty())
            throw std::invalid_argument("ResultMap: axis with empty name");
        if (a.values.size() < 1)
            throw std::invalid_argument("ResultMap: axis '" + a.name + "' is empty");
    }
    const Index n = n_cells();
    if (metrics.rows() != n)
        throw std::invalid_argument("ResultMap: cell count does not match the grid product");
    if (metrics.cols() != static_cast<Index>(metric_names.size()))
        throw std::invalid_argument("ResultMap: metric column count mismatch");
    if (metric_names.empty())
        throw std::invalid_argument("ResultMap: no metrics");
    if (static_cast<Index>(diverged.size()) != n)
        throw std::invalid_argument("ResultMap: diverged flag count mismatch");
    if (static_cast<Index>(cell_seeds.size()) != n)
        throw std::invalid_argument("ResultMap: every cell must carry its seed");
}

void write_result_map_csv(const std::string& path, const ResultMap& m) {
    m.validate();
    std::ofstream f(path);
    if (!f)
        throw std::runtime_error("write_result_map_csv: cannot open " + path);
    f << "# ringrc result map\n";
    f << "# kind = " << m.kind << "\n";
    f << "# preset = " << m.preset << "\n";
    f << "# seed = " << m.seed << "\n";
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "0x%016" PRIx64, m.config_hash);
        f << "# config_hash = " << buf << "\n";
    }
    f << "# version = " << m.version << "\n";
    for (const auto& a : m.axes) {
        f << "# axis " << a.name << " =";
        for (Index i = 0; i < a.values.size(); ++i)
            f << (i ? "," : " ") << fmt17(a.values[i]);
        f << "\n";
    }
    f << "cell";
    for (const auto& a : m.axes)
        f << "," << a.name;
    f << ",cell_seed,diverged";
    for (const auto& name : m.metric_names)
        f << "," << name;
    f << "\n";
    const Index n = m.n_cells();
    for (Index c = 0; c < n; ++c) {
        f << c;
        const auto idx = m.cell_coords(c);
        for (std::size_t k = 0; k < m.axes.size(); ++k)
            f << "," << fmt17(m.axes[k].values[idx[k]]);
        f << "," << m.cell_seeds[c] << "," << m.diverged[c];
        for (Index j = 0; j < m.metrics.cols(); ++j)
            f << "," << fmt17(m.metrics(c, j));
        f << "\n";
    }
    if (!f)
        throw std::runtime_error("write_result_map_csv: write failed for " + path);
}

ResultMap read_result_map_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("read_result_map_csv: cannot open " + path);
    ResultMap m;
    std::string line;
    int lineno = 0;
    std::vector<std::string> header;
    // Provenance and axis comments; the first non-comment line is the header.
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty())
            continue;
        if (line[0] == '#') {
            const std::string body = trim(line.substr(1));
            const std::size_t eq = body.find('=');
            if (eq == std::string::npos)
                continue;
            const std::string key = trim(body.substr(0, eq));
            const std::string value = trim(body.substr(eq + 1));
            if (key == "kind") m.kind = value;
            else if (key == "preset") m.preset = value;
            else if (key == "seed") m.seed = std::strtoull(value.c_str(), nullptr, 10);
            else if (key == "config_hash")
                m.config_hash = std::strtoull(value.c_str(), nullptr, 16);
            else if (key == "version") m.version = value;
            else if (key.rfind("axis ", 0) == 0) {
                GridAxis a;
                a.name = trim(key.substr(5));
                const auto parts = split(value, ',');
                a.values.resize(static_cast<Index>(parts.size()));
                for (std::size_t i = 0; i < parts.size(); ++i)
                    a.values[static_cast<Index>(i)] = std::strtod(parts[i].c_str(), nullptr);
                m.axes.push_back(std::move(a));
            }
            continue;
        }
        header = split(line, ',');
        break;
    }
    const std::size_t n_axes = m.axes.size();
    const std::size_t fixed = 1 + n_axes + 2; // cell, axes..., cell_seed, diverged
    if (header.size() < fixed + 1)
        throw ParseError("read_result_map_csv: header too short in " + path, lineno);
    if (header[0] != "cell")
        throw ParseError("read_result_map_csv: expected 'cell' column in " + path, lineno);
    for (std::size_t k = 0; k < n_axes; ++k)
        if (header[1 + k] != m.axes[k].name)
            throw ParseError("read_result_map_csv: header axis order does not match the "
                             "# axis lines in " + path, lineno);
    if (header[1 + n_axes] != "cell_seed" || header[2 + n_axes] != "diverged")
        throw ParseError("read_result_map_csv: expected cell_seed,diverged columns in " + path,
                         lineno);
    for (std::size_t j = fixed; j < header.size(); ++j)
        m.metric_names.push_back(trim(header[j]));

    const Index n = m.n_cells();
    m.metrics.resize(n, static_cast<Index>(m.metric_names.size()));
    m.diverged.assign(static_cast<std::size_t>(n), 0);
    m.cell_seeds.assign(static_cast<std::size_t>(n), 0);
    Index row = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        if (row >= n)
            throw ParseError("read_result_map_csv: more rows than grid cells in " + path,
                             lineno);
        const auto parts = split(line, ',');
        if (parts.size() != header.size())
            throw ParseError("read_result_map_csv: wrong column count in " + path, lineno);
        const Index cell = static_cast<Index>(std::strtoll(parts[0].c_str(), nullptr, 10));
        if (cell != row)
            throw ParseError("read_result_map_csv: rows out of order in " + path, lineno);
        m.cell_seeds[static_cast<std::size_t>(row)] =
            std::strtoull(parts[1 + n_axes].c_str(), nullptr, 10);
        m.diverged[static_cast<std::size_t>(row)] =
            static_cast<int>(std::strtol(parts[2 + n_axes].c_str(), nullptr, 10));
        for (std::size_t j = fixed; j < parts.size(); ++j)
            m.metrics(row, static_cast<Index>(j - fixed)) =
                std::strtod(parts[j].c_str(), nullptr);
        ++row;
    }
    if (row != n)
        throw ParseError("read_result_map_csv: expected " + std::to_string(n) + " rows, got " +
                         std::to_string(row) + " in " + path);
    m.validate();
    return m;
}

ResultMap compare_baseline(const ResultMap& map_out, const ResultMap& map_in) {
    if (!axes_equal(map_out.axes, map_in.axes))
        throw std::invalid_argument("compare_baseline: maps have different axes");
    const Index i_ber_o = map_out.metric_index("ber");
    const Index i_flr_o = map_out.metric_index("ber_floor");
    const Index i_ber_i = map_in.metric_index("ber");
    const Index i_flr_i = map_in.metric_index("ber_floor");
    const Index i_n_o = map_out.metric_index("n_test_bits");

    ResultMap rb;
    rb.axes = map_out.axes;
    rb.kind = "compare";
    rb.preset = map_out.preset;
    rb.seed = map_out.seed;
    rb.config_hash = map_out.config_hash;
    rb.version = map_out.version;
    rb.metric_names = {"rb", "rb_floor", "n_test_bits"};
    const Index n = rb.n_cells();
    rb.metrics.resize(n, 3);
    rb.diverged.resize(static_cast<std::size_t>(n));
    rb.cell_seeds = map_out.cell_seeds;
    for (Index c = 0; c < n; ++c) {
        const bool bad = map_out.diverged[static_cast<std::size_t>(c)] ||
                         map_in.diverged[static_cast<std::size_t>(c)];
        rb.diverged[static_cast<std::size_t>(c)] = bad ? 1 : 0;
        const double bo = map_out.metrics(c, i_ber_o);
        const double bi = map_in.metrics(c, i_ber_i);
        rb.metrics(c, 0) = bad ? std::numeric_limits<double>::quiet_NaN() : bi / bo;
        rb.metrics(c, 1) = (map_out.metrics(c, i_flr_o) != 0.0 ||
                            map_in.metrics(c, i_flr_i) != 0.0)
                               ? 1.0
                               : 0.0;
        rb.metrics(c, 2) = map_out.metrics(c, i_n_o);
    }
    return rb;
}

ResultMap best_power_projection(const ResultMap& m, const std::string& metric,
                                const std::string& power_axis) {
    std::size_t pk = m.axes.size();
    for (std::size_t k = 0; k < m.axes.size(); ++k)
        if (m.axes[k].name == power_axis)
            pk = k;
    if (pk == m.axes.size())
        throw std::invalid_argument("best_power_projection: no axis named '" + power_axis +
                                    "'");
    const Index im = m.metric_index(metric);
    const VecR& pv = m.axes[pk].values;

    // Scan powers in ascending value order so ties resolve to the lowest power.
    std::vector<Index> order(static_cast<std::size_t>(pv.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(),
              [&](Index a, Index b) { return pv[a] < pv[b]; });

    ResultMap out;
    for (std::size_t k = 0; k < m.axes.size(); ++k)
        if (k != pk)
            out.axes.push_back(m.axes[k]);
    out.kind = m.kind;
    out.preset = m.preset;
    out.seed = m.seed;
    out.config_hash = m.config_hash;
    out.version = m.version;
    out.metric_names = m.metric_names;
    out.metric_names.push_back("power_at_best_w");
    const Index n = out.n_cells();
    out.metrics.resize(n, static_cast<Index>(out.metric_names.size()));
    out.diverged.resize(static_cast<std::size_t>(n));
    out.cell_seeds.resize(static_cast<std::size_t>(n));

    // Strides of the source map for coordinate arithmetic.
    std::vector<Index> stride(m.axes.size(), 1);
    for (std::size_t k = m.axes.size(); k-- > 1;)
        stride[k - 1] = stride[k] * m.axes[k].values.size();

    for (Index c = 0; c < n; ++c) {
        const auto rc = out.cell_coords(c);
        Index base = 0;
        std::size_t rk = 0;
        for (std::size_t k = 0; k < m.axes.size(); ++k)
            if (k != pk)
                base += rc[rk++] * stride[k];
        Index best = -1;
        for (const Index pi : order) {
            const Index src = base + pi * stride[pk];
            if (m.diverged[static_cast<std::size_t>(src)])
                continue;
            if (best < 0 || m.metrics(src, im) < m.metrics(best, im))
                best = src;
            else if (best >= 0 && m.metrics(src, im) == m.metrics(best, im)) {
                // Ascending scan: the earlier (lower-power) cell stays.
            }
        }
        if (best < 0) { // every power diverged
            out.diverged[static_cast<std::size_t>(c)] = 1;
            out.cell_seeds[static_cast<std::size_t>(c)] =
                m.cell_seeds[static_cast<std::size_t>(base + order[0] * stride[pk])];
            out.metrics.row(c).setConstant(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        out.diverged[static_cast<std::size_t>(c)] = 0;
        out.cell_seeds[static_cast<std::size_t>(c)] =
            m.cell_seeds[static_cast<std::size_t>(best)];
        out.metrics.row(c).head(m.metrics.cols()) = m.metrics.row(best);
        // Recover which power index produced `best`.
        const Index pi = (best - base) / stride[pk] % m.axes[pk].values.size();
        out.metrics(c, out.metrics.cols() - 1) = pv[pi];
    }
    return out;
}

} // namespace ringrc
