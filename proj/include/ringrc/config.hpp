#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ringrc/types.hpp"

namespace ringrc {

/// One swept parameter: either an explicit value list or a linear range.
struct GridAxis {
    std::string name;
    VecR values;
};

/// INI-style experiment description:
///   [section]
///   key = value   # comment (; also starts one)
/// Values may carry a unit suffix (5 mW, 12 ns, 1.55 um, 10 Gbps, -7 dBm);
/// bare numbers are base SI. [grid.<axis>] sections declare sweeps, either
/// values = a, b, c or min/max/steps.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text, const std::string& name);

    enum class Unit { None, Time, Frequency, Power, Length, Bitrate };

    bool has(const std::string& section, const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;

    /// Number with an optional unit suffix from the given family, scaled to
    /// the base SI unit. Throws ParseError (with the file line) for malformed
    /// numbers, unknown suffixes, or a suffix from the wrong family.
    double get_quantity(const std::string& section, const std::string& key,
                        Unit family) const;
    double get_quantity(const std::string& section, const std::string& key,
                        Unit family, double fallback) const;

    std::int64_t get_int(const std::string& section, const std::string& key) const;
    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& section, const std::string& key) const;
    bool get_bool(const std::string& section, const std::string& key,
                  bool fallback) const;

    std::vector<double> get_list(const std::string& section, const std::string& key,
                                 Unit family) const;

    /// All [grid.*] sections in file order.
    std::vector<GridAxis> grid_axes() const;

    /// FNV-1a 64 over the raw file bytes; stable config fingerprint.
    std::uint64_t content_hash() const;

    const std::string& source_name() const { return name_; }

    /// Sections seen, in file order (grid sections included as "grid.x").
    std::vector<std::string> section_names() const { return order_; }

private:
    struct Entry {
        std::string raw;
        int line = 0;
    };
    std::string name_;
    std::string raw_text_;
    std::map<std::string, std::map<std::string, Entry>> sections_;
    std::vector<std::string> order_;

    const Entry* find(const std::string& section, const std::string& key) const;
    const Entry& require(const std::string& section, const std::string& key) const;
    double parse_quantity(const Entry& e, const std::string& where, Unit family) const;
};

} // namespace ringrc
