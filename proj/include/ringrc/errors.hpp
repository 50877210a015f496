#pragma once

#include <stdexcept>
#include <string>

namespace ringrc {

/// Thrown when an integrated trajectory leaves the finite domain.
/// Carries the simulation time at which the blow-up was detected.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, double t_fail)
        : std::runtime_error(what + " (at t = " + std::to_string(t_fail) + " s)"),
          t_fail_(t_fail) {}

    double time_of_failure() const { return t_fail_; }

private:
    double t_fail_;
};

/// Thrown when a linear solve cannot be completed (singular normal matrix).
class SolvabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown by file/config readers; carries a 1-based line number when known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what
                                      : what),
          line_(line) {}

    int line() const { return line_; }

private:
    int line_;
};

} // namespace ringrc
