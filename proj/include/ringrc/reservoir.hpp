#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ringrc/signal.hpp"
#include "ringrc/types.hpp"

namespace ringrc {

/// Input layer of the time-multiplexed reservoir: each input column x is
/// expanded to n_virtual values alpha * (w_in * x + u0), every value held
/// for node_spacing seconds.
struct EncodingConfig {
    MatR w_in;               // n_virtual x N
    double alpha = 1.0;      // scale
    double u0 = 0.0;         // offset removing negative drive values
    int n_virtual = 1;       // N_v
    double node_spacing = 0; // s per virtual node

    double bit_duration() const { return n_virtual * node_spacing; }
    void validate() const;
};

/// Periodic per-node modulation pattern, entries in [0, 1].
struct Mask {
    VecR values;
    std::uint64_t seed = 0;
};

/// Uniform random mask of n_virtual entries in [0, 1].
Mask random_mask(int n_virtual, std::uint64_t seed);

/// Virtual-node features, one column per evaluated sample (bit).
/// provenance labels each feature row (node index, bit offset, ...).
struct StateMatrix {
    MatR features; // N_features x M
    std::vector<std::string> provenance;
};

struct CvReport {
    VecR lambda_grid;
    VecR mean_error;  // mean validation MSE per grid point
    MatR fold_error;  // folds x grid
    double best_lambda = 0.0;
};

/// Linear readout. When intercept is set, the last weight column acts on an
/// implicit all-ones feature row (excluded from the ridge penalty).
struct RidgeReadout {
    MatR weights; // Q x (N_features + intercept)
    double lambda = 0.0;
    bool intercept = true;
    CvReport cv;

    /// Applies the readout to a feature matrix (N_features x M) -> Q x M.
    MatR predict(const Eigen::Ref<const MatR>& x) const;
};

/// Coefficients of the analytic probe response driven by a pump power trace
/// through the free-carrier population (exponential memory kernel tau_fc).
struct PumpProbeCoeffs {
    double c0 = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double tau_fc = 0.0; // s
};

/// Real nonnegative drive waveform on a uniform grid (dimensionless pump
/// units for the analytic reservoir path).
struct PowerTrace {
    VecR values;
    double sample_rate = 0.0;

    double dt() const { return 1.0 / sample_rate; }
};

/// Piecewise-constant pump waveform for input matrix x_in (N x M): column n
/// occupies [n*T, (n+1)*T) split into n_virtual node slots of node_spacing
/// seconds, each slot holding one entry of alpha*(w_in*x + u0).
/// Negative encoded power raises invalid-argument naming the entry.
PowerTrace encode(const Eigen::Ref<const MatR>& x_in, const EncodingConfig& cfg,
                  int samples_per_node = 1);

/// Masked field-amplitude input: value x_i in [0, 1] over bit slot i is
/// modulated by the periodic mask and emitted as amplitude
/// sqrt(p_max * x_i * m_j) on node slot (i, j); theta = b_w / mask size.
SampledSignal mask_encode(const Eigen::Ref<const VecR>& x, const Mask& mask,
                          double b_w, double p_max, int samples_per_node = 1);

/// Groups the samples of each bit into n_virtual node values:
/// more samples than nodes -> bin averages; equal -> identity;
/// fewer -> the samples verbatim followed by zero padding.
StateMatrix sample_virtual_nodes(const Eigen::Ref<const VecR>& power_trace, double bitrate,
                                 int n_virtual, double sample_rate);

/// Concatenates each column with the columns of the n2-1 preceding bits
/// (periodic wrap), growing the feature count n2-fold.
StateMatrix augment_rbits(const StateMatrix& state, int n2);

/// Closed-form Tikhonov solution of min ||y - W x||^2 + lambda^2 ||W||^2.
/// Columns of x/y are samples. The intercept row is appended internally and
/// never penalized. Singular systems at lambda = 0 raise SolvabilityError.
RidgeReadout ridge_fit(const Eigen::Ref<const MatR>& x, const Eigen::Ref<const MatR>& y,
                       double lambda, bool intercept = true);

/// Selects lambda by k-fold cross-validation over contiguous column blocks
/// (time-series friendly; no shuffling, so `seed` is accepted only for
/// interface stability), then refits on all data.
RidgeReadout ridge_cv(const Eigen::Ref<const MatR>& x, const Eigen::Ref<const MatR>& y,
                      const Eigen::Ref<const VecR>& lambda_grid, int folds = 5,
                      std::uint64_t seed = 0);

/// Causal discretization of
///   u_pr(t) = c0 + c1 * int e^{-(t-xi)/tau} u^2(xi) dxi
///            + c2 * int e^{-(t-xi)/tau} u^2(xi) u_pr(xi) dxi,
/// advanced with the exact one-pole recursion for piecewise-constant u and a
/// trapezoidal closure for the self-coupled term. Output sample k is the
/// response at the end of input sample k's hold interval.
VecR pump_probe_response(const Eigen::Ref<const VecR>& u, const PumpProbeCoeffs& coeffs,
                         double dt);

struct McOptions {
    Index n_samples = 3000;
    Index washout = 60;
    double train_fraction = 0.6;
    double ridge_lambda = 1e-6;
};

struct McResult {
    double mc = 0.0;
    VecR m; // m[l-1] is the capacity at delay l
};

/// Memory capacity: drives the supplied reservoir with a uniform random
/// sequence in [0, 1], trains one readout per delay l = 1..l_max on the
/// training block, and sums the squared normalized covariance between
/// held-out readout output and the delayed input.
McResult memory_capacity(const std::function<StateMatrix(const VecR&)>& reservoir_eval,
                         int l_max, std::uint64_t seed, const McOptions& opts = {});

// --- serialization ------------------------------------------------------

/// CSV with one header row of provenance labels; columns are samples.
void write_state_matrix_csv(const std::string& path, const StateMatrix& s);
StateMatrix read_state_matrix_csv(const std::string& path);

/// Readout weights as JSON (weights, lambda, intercept flag, CV summary).
void write_readout_json(const std::string& path, const RidgeReadout& r);
RidgeReadout read_readout_json(const std::string& path);

} // namespace ringrc
