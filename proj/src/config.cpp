#include "ringrc/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ringrc/errors.hpp"

namespace ringrc {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string strip_comment(const std::string& s) {
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] == '#' || s[i] == ';')
            return s.substr(0, i);
    return s;
}

struct Suffix {
    const char* text;
    double scale;
};

// Longest-match tables per family; bare numbers mean base SI.
const Suffix kTime[] = {{"fs", 1e-15}, {"ps", 1e-12}, {"ns", 1e-9},
                        {"us", 1e-6},  {"ms", 1e-3},  {"s", 1.0}};
const Suffix kFreq[] = {{"kHz", 1e3}, {"MHz", 1e6}, {"GHz", 1e9},
                        {"THz", 1e12}, {"Hz", 1.0}};
const Suffix kPower[] = {{"mW", 1e-3}, {"uW", 1e-6}, {"nW", 1e-9}, {"W", 1.0}};
const Suffix kLength[] = {{"pm", 1e-12}, {"nm", 1e-9}, {"um", 1e-6},
                          {"mm", 1e-3},  {"km", 1e3},  {"m", 1.0}};
const Suffix kBitrate[] = {{"kbps", 1e3}, {"Mbps", 1e6}, {"Gbps", 1e9}, {"bps", 1.0}};

double apply_suffix(double v, const std::string& suffix, Config::Unit family,
                    const std::string& where, int line) {
    if (suffix.empty())
        return v;
    auto match = [&](const Suffix* table, std::size_t n) -> const Suffix* {
        for (std::size_t i = 0; i < n; ++i)
            if (suffix == table[i].text)
                return &table[i];
        return nullptr;
    };
    const Suffix* hit = nullptr;
    switch (family) {
    case Config::Unit::None:
        hit = nullptr;
        break;
    case Config::Unit::Time:
        hit = match(kTime, std::size(kTime));
        break;
    case Config::Unit::Frequency:
        hit = match(kFreq, std::size(kFreq));
        break;
    case Config::Unit::Power:
        if (suffix == "dBm")
            return std::pow(10.0, (v - 30.0) / 10.0);
        hit = match(kPower, std::size(kPower));
        break;
    case Config::Unit::Length:
        hit = match(kLength, std::size(kLength));
        break;
    case Config::Unit::Bitrate:
        hit = match(kBitrate, std::size(kBitrate));
        break;
    }
    if (!hit)
        throw ParseError(where + ": unknown unit '" + suffix + "' (line " +
                         std::to_string(line) + ")");
    return v * hit->scale;
}

double parse_number_with_unit(const std::string& raw, Config::Unit family,
                              const std::string& where, int line) {
    const std::string s = trim(raw);
    if (s.empty())
        throw ParseError(where + ": empty value (line " + std::to_string(line) + ")");
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str())
        throw ParseError(where + ": not a number: '" + s + "' (line " +
                         std::to_string(line) + ")");
    const std::string suffix = trim(std::string(end));
    return apply_suffix(v, suffix, family, where, line);
}

} // namespace

Config Config::parse_string(const std::string& text, const std::string& name) {
    Config c;
    c.name_ = name;
    c.raw_text_ = text;

    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string body = trim(strip_comment(line));
        if (body.empty())
            continue;
        if (body.front() == '[') {
            if (body.back() != ']')
                throw ParseError(name + ": unterminated section header (line " +
                                 std::to_string(line_no) + ")");
            section = trim(body.substr(1, body.size() - 2));
            if (section.empty())
                throw ParseError(name + ": empty section name (line " +
                                 std::to_string(line_no) + ")");
            if (!c.sections_.count(section))
                c.order_.push_back(section);
            c.sections_[section]; // create
            continue;
        }
        const std::size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw ParseError(name + ": expected key = value (line " +
                             std::to_string(line_no) + ")");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty())
            throw ParseError(name + ": empty key (line " + std::to_string(line_no) + ")");
        if (section.empty())
            throw ParseError(name + ": key before any [section] (line " +
                             std::to_string(line_no) + ")");
        auto& sec = c.sections_[section];
        if (sec.count(key))
            throw ParseError(name + ": duplicate key '" + section + "." + key +
                             "' (line " + std::to_string(line_no) + ")");
        sec[key] = Entry{value, line_no};
    }
    return c;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw ParseError("cannot open config file: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse_string(os.str(), path);
}

const Config::Entry* Config::find(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end())
        return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
}

const Config::Entry& Config::require(const std::string& section,
                                     const std::string& key) const {
    const Entry* e = find(section, key);
    if (!e)
        throw ParseError(name_ + ": missing required key '" + section + "." + key + "'");
    return *e;
}

bool Config::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

std::string Config::get_string(const std::string& section, const std::string& key) const {
    return require(section, key).raw;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    const Entry* e = find(section, key);
    return e ? e->raw : fallback;
}

double Config::parse_quantity(const Entry& e, const std::string& where,
                              Unit family) const {
    return parse_number_with_unit(e.raw, family, name_ + ": " + where, e.line);
}

double Config::get_quantity(const std::string& section, const std::string& key,
                            Unit family) const {
    return parse_quantity(require(section, key), section + "." + key, family);
}

double Config::get_quantity(const std::string& section, const std::string& key,
                            Unit family, double fallback) const {
    const Entry* e = find(section, key);
    return e ? parse_quantity(*e, section + "." + key, family) : fallback;
}

std::int64_t Config::get_int(const std::string& section, const std::string& key) const {
    const Entry& e = require(section, key);
    const double v = parse_quantity(e, section + "." + key, Unit::None);
    const auto r = static_cast<std::int64_t>(std::llround(v));
    if (static_cast<double>(r) != v)
        throw ParseError(name_ + ": " + section + "." + key + ": expected an integer (line " +
                         std::to_string(e.line) + ")");
    return r;
}

std::int64_t Config::get_int(const std::string& section, const std::string& key,
                             std::int64_t fallback) const {
    return find(section, key) ? get_int(section, key) : fallback;
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key) const {
    const Entry& e = require(section, key);
    const std::string s = trim(e.raw);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 0);
    if (end == s.c_str() || *end != '\0')
        throw ParseError(name_ + ": " + section + "." + key +
                         ": expected an unsigned integer (line " +
                         std::to_string(e.line) + ")");
    return static_cast<std::uint64_t>(v);
}

bool Config::get_bool(const std::string& section, const std::string& key,
                      bool fallback) const {
    const Entry* e = find(section, key);
    if (!e)
        return fallback;
    std::string s = trim(e->raw);
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (s == "true" || s == "yes" || s == "on" || s == "1")
        return true;
    if (s == "false" || s == "no" || s == "off" || s == "0")
        return false;
    throw ParseError(name_ + ": " + section + "." + key + ": expected a boolean (line " +
                     std::to_string(e->line) + ")");
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key,
                                     Unit family) const {
    const Entry& e = require(section, key);
    std::vector<double> out;
    std::string item;
    std::istringstream in(e.raw);
    while (std::getline(in, item, ',')) {
        const std::string t = trim(item);
        if (t.empty())
            throw ParseError(name_ + ": " + section + "." + key +
                             ": empty list item (line " + std::to_string(e.line) + ")");
        out.push_back(parse_number_with_unit(t, family,
                                             name_ + ": " + section + "." + key, e.line));
    }
    if (out.empty())
        throw ParseError(name_ + ": " + section + "." + key + ": empty list (line " +
                         std::to_string(e.line) + ")");
    return out;
}

std::vector<GridAxis> Config::grid_axes() const {
    std::vector<GridAxis> axes;
    for (const auto& sec : order_) {
        if (sec.rfind("grid.", 0) != 0)
            continue;
        GridAxis a;
        a.name = sec.substr(5);
        if (a.name.empty())
            throw ParseError(name_ + ": grid section with empty axis name");
        // Axis entries accept a suffix from any family (the experiment knows
        // which physical quantity the axis is); bare numbers are base SI.
        const auto num_any = [&](const std::string& raw, const std::string& where,
                                 int line) -> double {
            for (Unit u : {Unit::None, Unit::Time, Unit::Frequency, Unit::Power,
                           Unit::Length, Unit::Bitrate}) {
                try {
                    return parse_number_with_unit(raw, u, where, line);
                } catch (const ParseError&) {
                }
            }
            throw ParseError(name_ + ": " + where + ": cannot parse '" + trim(raw) +
                             "' (line " + std::to_string(line) + ")");
        };

        if (has(sec, "values")) {
            std::vector<double> vals;
            const Entry& e = *find(sec, "values");
            std::string item;
            std::istringstream in(e.raw);
            while (std::getline(in, item, ',')) {
                const std::string t = trim(item);
                if (t.empty())
                    throw ParseError(name_ + ": " + sec + ".values: empty item (line " +
                                     std::to_string(e.line) + ")");
                vals.push_back(num_any(t, sec + ".values", e.line));
            }
            if (vals.empty())
                throw ParseError(name_ + ": " + sec + ".values: empty list (line " +
                                 std::to_string(e.line) + ")");
            a.values = Eigen::Map<const VecR>(vals.data(), static_cast<Index>(vals.size()));
        } else {
            auto num = [&](const char* key) {
                const Entry& e = require(sec, key);
                return num_any(e.raw, sec + std::string(".") + key, e.line);
            };
            const double lo = num("min");
            const double hi = num("max");
            const std::int64_t steps = get_int(sec, "steps");
            if (steps < 2)
                throw ParseError(name_ + ": " + sec + ".steps: need at least 2");
            if (!(hi > lo))
                throw ParseError(name_ + ": " + sec + ": need max > min");
            a.values.resize(steps);
            for (Index i = 0; i < steps; ++i)
                a.values[i] = lo + (hi - lo) * static_cast<double>(i) /
                                       static_cast<double>(steps - 1);
        }
        axes.push_back(std::move(a));
    }
    return axes;
}

std::uint64_t Config::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char ch : raw_text_) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace ringrc
