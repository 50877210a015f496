#include "ringrc/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "ringrc/errors.hpp"

namespace ringrc {

LogicOp logic_op_from_string(const std::string& name) {
    std::string s;
    for (char c : name) s.push_back(static_cast<char>(std::tolower(c)));
    if (s == "and") return LogicOp::And;
    if (s == "or") return LogicOp::Or;
    if (s == "xor") return LogicOp::Xor;
    throw std::invalid_argument("unknown logic op: " + name);
}

std::string to_string(LogicOp op) {
    switch (op) {
        case LogicOp::And: return "AND";
        case LogicOp::Or: return "OR";
        case LogicOp::Xor: return "XOR";
    }
    return "?";
}

BitSequence delayed_logic_target(const BitSequence& bits, const LogicTaskSpec& spec) {
    bits.validate();
    if (spec.n1 < 0)
        throw std::invalid_argument("delayed_logic_target: n1 must be >= 0");
    if (spec.n2 < 1)
        throw std::invalid_argument("delayed_logic_target: n2 must be >= 1");
    const Index m = bits.size();
    if (m == 0)
        throw std::invalid_argument("delayed_logic_target: empty sequence");

    BitSequence out;
    out.bitrate = bits.bitrate;
    out.bits.resize(static_cast<std::size_t>(m));
    for (Index j = 0; j < m; ++j) {
        const int a = bits.bits[static_cast<std::size_t>(j)];
        const Index jd = ((j - spec.n1) % m + m) % m; // periodic wrap
        const int b = bits.bits[static_cast<std::size_t>(jd)];
        int r = 0;
        switch (spec.op) {
            case LogicOp::And: r = a & b; break;
            case LogicOp::Or: r = a | b; break;
            case LogicOp::Xor: r = a ^ b; break;
        }
        out.bits[static_cast<std::size_t>(j)] = r;
    }
    return out;
}

BitSequence one_bit_delayed_xor_target(const BitSequence& bits) {
    return delayed_logic_target(bits, LogicTaskSpec{LogicOp::Xor, 1, 1});
}

VecR narma10(const Eigen::Ref<const VecR>& u) {
    constexpr int order = 10;
    for (Index i = 0; i < u.size(); ++i)
        if (!(u[i] >= 0.0 && u[i] <= 0.5))
            throw std::invalid_argument("narma10: inputs must lie in [0, 0.5]");

    VecR y(u.size());
    VecR hist = VecR::Zero(order); // y(n), y(n-1), ..., y(n-9)
    for (Index n = 0; n < u.size(); ++n) {
        const double yn = hist[0];
        const double acc = hist.sum();
        const double u_old = (n >= order - 1) ? u[n - (order - 1)] : 0.0;
        const double ynext = 0.3 * yn + 0.05 * yn * acc + 1.5 * u_old * u[n] + 0.1;
        if (!(std::abs(ynext) <= 10.0))
            throw DivergenceError("narma10: recurrence diverged", static_cast<double>(n));
        y[n] = ynext;
        for (int k = order - 1; k > 0; --k) hist[k] = hist[k - 1];
        hist[0] = ynext;
    }
    return y;
}

VecR mackey_glass(double beta, double gamma, double n_exp, double tau_delay,
                  double dt, Index length, double x0) {
    if (!(dt > 0.0))
        throw std::invalid_argument("mackey_glass: dt must be > 0");
    if (!(x0 > 0.0))
        throw std::invalid_argument("mackey_glass: x0 must be > 0");
    if (tau_delay < 0.0)
        throw std::invalid_argument("mackey_glass: tau_delay must be >= 0");
    if (length < 1)
        throw std::invalid_argument("mackey_glass: length must be >= 1");
    const double steps_f = tau_delay / dt;
    const Index m = static_cast<Index>(std::llround(steps_f));
    if (std::abs(steps_f - static_cast<double>(m)) > 1e-9 * std::max(1.0, steps_f))
        throw std::invalid_argument("mackey_glass: tau_delay must be a multiple of dt");

    auto rhs = [&](double x, double xd) {
        return beta * xd / (1.0 + std::pow(xd, n_exp)) - gamma * x;
    };

    VecR x(length);
    x[0] = x0;
    if (length == 1) return x;

    // History of states and derivatives on the dt grid; index k holds t = k*dt.
    // Constant history x0 before t = 0 means delayed lookups at negative
    // indices return x0 with zero slope.
    std::vector<double> h(static_cast<std::size_t>(length));
    std::vector<double> hf(static_cast<std::size_t>(length));
    h[0] = x0;
    hf[0] = rhs(x0, x0);

    auto delayed_at = [&](Index k, double frac) -> double {
        // Value of x at t = (k - m + frac)*dt, frac in [0, 1].
        const Index j = k - m;
        if (j < 0) return x0;
        if (frac == 0.0) return h[static_cast<std::size_t>(j)];
        // Cubic Hermite between grid points j and j+1 (j+1 <= k for m >= 1).
        const double x_a = h[static_cast<std::size_t>(j)];
        const double x_b = h[static_cast<std::size_t>(j + 1)];
        const double f_a = hf[static_cast<std::size_t>(j)];
        const double f_b = hf[static_cast<std::size_t>(j + 1)];
        const double s = frac;
        const double s2 = s * s;
        const double s3 = s2 * s;
        return (2 * s3 - 3 * s2 + 1) * x_a + (s3 - 2 * s2 + s) * dt * f_a +
               (-2 * s3 + 3 * s2) * x_b + (s3 - s2) * dt * f_b;
    };

    for (Index k = 0; k + 1 < length; ++k) {
        const double xk = h[static_cast<std::size_t>(k)];
        double k1, k2, k3, k4;
        if (m == 0) {
            // Autonomous limit: the delayed argument is the running state.
            k1 = rhs(xk, xk);
            const double xa = xk + 0.5 * dt * k1;
            k2 = rhs(xa, xa);
            const double xb = xk + 0.5 * dt * k2;
            k3 = rhs(xb, xb);
            const double xc = xk + dt * k3;
            k4 = rhs(xc, xc);
        } else {
            const double d0 = delayed_at(k, 0.0);
            const double dh = delayed_at(k, 0.5);
            const double d1 = (k + 1 - m >= 0 && m >= 1)
                                  ? delayed_at(k + 1, 0.0)
                                  : x0;
            k1 = rhs(xk, d0);
            k2 = rhs(xk + 0.5 * dt * k1, dh);
            k3 = rhs(xk + 0.5 * dt * k2, dh);
            k4 = rhs(xk + dt * k3, d1);
        }
        const double xn = xk + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        if (!std::isfinite(xn))
            throw DivergenceError("mackey_glass: state became non-finite",
                                  static_cast<double>(k + 1) * dt);
        h[static_cast<std::size_t>(k + 1)] = xn;
        hf[static_cast<std::size_t>(k + 1)] = rhs(xn, delayed_at(k + 1, 0.0));
        x[k + 1] = xn;
    }
    return x;
}

IrisData iris_load(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("iris_load: cannot open " + path);

    std::vector<std::array<double, 4>> feats;
    std::vector<std::string> names;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        // Trim trailing CR and surrounding whitespace.
        while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
            line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::array<double, 4> row{};
        std::string tok;
        bool ok = true;
        for (int c = 0; c < 4; ++c) {
            if (!std::getline(ss, tok, ',')) { ok = false; break; }
            try {
                std::size_t used = 0;
                row[static_cast<std::size_t>(c)] = std::stod(tok, &used);
                while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
                if (used != tok.size()) { ok = false; break; }
            } catch (const std::exception&) {
                ok = false;
                break;
            }
        }
        std::string label;
        if (ok && !std::getline(ss, label)) ok = false;
        if (ok) {
            std::size_t b = label.find_first_not_of(" \t");
            std::size_t e = label.find_last_not_of(" \t");
            label = (b == std::string::npos) ? "" : label.substr(b, e - b + 1);
            if (label.empty()) ok = false;
        }
        if (!ok) {
            // A header row is tolerated only as the first line.
            if (lineno == 1) continue;
            throw ParseError("iris_load: malformed row", lineno);
        }
        feats.push_back(row);
        names.push_back(label);
    }
    if (feats.empty())
        throw ParseError("iris_load: no data rows");

    // Class index by sorted label so that row order is irrelevant.
    std::map<std::string, int> class_of;
    for (const auto& n : names) class_of.emplace(n, 0);
    if (class_of.size() != 3)
        throw std::invalid_argument("iris_load: expected exactly three classes, got " +
                                    std::to_string(class_of.size()));
    int ci = 0;
    for (auto& kv : class_of) kv.second = ci++;

    const Index M = static_cast<Index>(feats.size());
    IrisData d;
    d.features.resize(4, M);
    d.labels = MatR::Zero(3, M);
    d.klass.resize(static_cast<std::size_t>(M));
    for (Index j = 0; j < M; ++j) {
        for (int c = 0; c < 4; ++c)
            d.features(c, j) = feats[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        const int k = class_of[names[static_cast<std::size_t>(j)]];
        d.labels(k, j) = 1.0;
        d.klass[static_cast<std::size_t>(j)] = k;
    }
    for (int c = 0; c < 4; ++c) {
        const double lo = d.features.row(c).minCoeff();
        const double hi = d.features.row(c).maxCoeff();
        if (hi > lo)
            d.features.row(c) = (d.features.row(c).array() - lo) / (hi - lo);
        else
            d.features.row(c).setZero();
    }
    return d;
}

} // namespace ringrc
