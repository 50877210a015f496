#pragma once

#include <string>

#include "ringrc/signal.hpp"
#include "ringrc/types.hpp"

namespace ringrc {

enum class LogicOp { And, Or, Xor };

/// A delayed two-input logic task: target_j = op(x_j, x_{j-n1}).
/// n2 is the number of past bits whose virtual nodes feed the readout
/// (feature construction happens elsewhere; n2 rides along as task metadata).
struct LogicTaskSpec {
    LogicOp op = LogicOp::Xor;
    int n1 = 1;
    int n2 = 1;
};

LogicOp logic_op_from_string(const std::string& name);
std::string to_string(LogicOp op);

/// target_j = op(x_j, x_{j-n1}) with periodic wrap of the input sequence.
BitSequence delayed_logic_target(const BitSequence& bits, const LogicTaskSpec& spec);

/// Convenience specialization: XOR between the current and previous bit.
BitSequence one_bit_delayed_xor_target(const BitSequence& bits);

/// Tenth-order nonlinear auto-regressive moving average series.
/// Input u must lie in [0, 0.5]. Zero initial history; the returned array
/// starts with the first value the recurrence emits, so out[k] is the
/// response to inputs u[0..k].
VecR narma10(const Eigen::Ref<const VecR>& u);

/// Delay differential equation dx/dt = beta*x(t-tau)/(1 + x(t-tau)^n) - gamma*x,
/// integrated with fixed-step RK4 and cubic-Hermite history interpolation.
/// The history is the constant x0 for t <= 0; tau must be a multiple of dt.
/// Returns `length` samples on the dt grid starting at x(0) = x0.
VecR mackey_glass(double beta, double gamma, double n_exp, double tau_delay,
                  double dt, Index length, double x0);

struct IrisData {
    MatR features;          // 4 x M, each row scaled to [0, 1]
    MatR labels;            // 3 x M one-hot
    std::vector<int> klass; // class index per sample, aligned with columns
};

/// Reads a 5-column CSV (four real features, class label as text or integer).
/// Features are min-max scaled per column; classes are indexed by sorted
/// label name so row order does not matter.
IrisData iris_load(const std::string& path);

} // namespace ringrc
