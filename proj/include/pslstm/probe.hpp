#pragma once

// Empirical memory probes for the sLSTM Markov chain
//
//   y_t = g(W_eh h_t + b_e) + eps_t,   x_t = y_{t-1},   y_0 = 0, h_0 = 0,
//
// with g = tanh and eps_t ~ N(0, noise_std^2) i.i.d. The chain state is
// (y, h, c, n). When the forget gate satisfies ||exp(W_f u + R_f v + b_f)||_inf
// <= a < 1 over the unit box the chain is geometrically ergodic (short
// memory: acf(k) ~ rho^k). Forget pre-activations bounded below by a positive
// constant amplify c and n geometrically and overflow raw arithmetic while the
// ratio c/n stays bounded.

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "pslstm/slstm.hpp"

namespace pslstm {

enum class ChainMode { raw, stabilized };

struct ChainConfig {
    std::size_t p = 1;  // output / input dimension
    std::size_t q = 8;  // hidden dimension
    std::size_t heads = 1;
    double noise_std = 0.1;
    std::size_t horizon = 20000;
    std::uint64_t seed = 1;
    /// Negative: b_f = offset - rowsum, so sup over the box of the forget
    /// pre-activation is `offset` and ||f||_inf <= exp(offset) < 1.
    /// Non-negative: b_f = offset + rowsum, so the pre-activation never drops
    /// below `offset` and ||f||_inf >= exp(offset) >= 1.
    double forget_bias_offset = -0.10536051565782628;  // log(0.9)
    ChainMode mode = ChainMode::raw;
    double weight_scale = 1.0;         // multiplies the N(0, 1/sqrt(fan_in)) cell weights
    double forget_weight_scale = 1.0;  // extra factor on W_f and R_f; small values pin f near its bound
    double output_weight_scale = 1.0;  // multiplies W_eh ~ N(0, 1/sqrt(q))
    double output_bias = 0.0;          // b_e fill value
    /// When set, every x_t is clamped to [-1, 1]^p. Off by default.
    bool clamp_input = false;
    /// When set, W_eh(k, j) takes the sign of W_z(j, k) so every path
    /// y -> z -> c/n -> h -> y has positive gain (requires p == 1).
    bool aligned_feedback = false;

    void validate() const;
};

std::string to_string(ChainMode m);
ChainMode parse_chain_mode(const std::string& s);

/// Cell weights plus the output map of the chain.
struct ChainModel {
    SLSTMParams cell;
    Tensor W_eh;  // p x q
    Tensor b_e;   // p
};

ChainModel make_chain(const ChainConfig& config);

struct ChainState {
    Tensor y;  // p
    SLSTMState cell;
};

ChainState zero_chain_state(const ChainConfig& config);

struct ChainTrace {
    Tensor y_seq;  // horizon x p
    std::vector<double> f_norm;      // ||f_t||_inf of the actual (unscaled) forget gate
    std::vector<double> c_norm;      // ||c_t||_inf (stored, i.e. rescaled in stabilized mode)
    std::vector<double> n_norm;
    std::vector<double> ratio_norm;  // ||c_t / n_t||_inf
    std::vector<double> h_norm;
    std::vector<bool> finite;        // monotone: once false, stays false
    std::optional<std::size_t> first_nonfinite;  // 1-based step
    ChainState final_state;

    std::size_t length() const { return f_norm.size(); }
};

/// Iterates the chain for config.horizon steps. Raw mode records overflow
/// instead of throwing; stabilized mode throws NumericError on a non-finite h.
ChainTrace simulate_chain(const ChainModel& model, const ChainConfig& config,
                          const std::optional<ChainState>& initial = std::nullopt);
ChainTrace simulate_chain(const ChainConfig& config);

struct MemoryReport {
    std::size_t max_lag = 0;
    std::vector<std::vector<double>> acf;  // per output dim, lags 0..K
    std::vector<double> rho_hat;           // exp(slope) of log|acf(k)| ~ k
    std::vector<double> r_squared;
    std::vector<std::size_t> fit_points;   // lags with |acf| > 0.01 used by the fit
    /// Same fit on the upper envelope env(k) = max_{j >= k} |acf(j)|, which
    /// is insensitive to sign changes of oscillating autocorrelations.
    std::vector<double> envelope_rho_hat;
    std::vector<double> envelope_r_squared;
    double contraction_bound = 0.0;        // sup over the trace of ||f_t||_inf
};

/// Sample autocorrelation of each output dimension over trace steps
/// [burn_in, horizon) and a log-linear decay fit over lags 1..max_lag.
MemoryReport memory_report(const ChainTrace& trace, std::size_t max_lag, std::size_t burn_in = 0);
/// Same analysis for an arbitrary series (rows = time).
MemoryReport memory_report(const Tensor& series, std::size_t max_lag, std::size_t burn_in = 0);

struct ContractionCheck {
    double analytic_sup = 0.0;  // max_j exp(b_f + r_u*sum|W_f row| + r_v*sum|R_f row|)
    double grid_sup = 0.0;      // max over enumerated corners and sampled interior points
    double threshold = 0.0;
    bool satisfied = false;     // analytic_sup <= threshold up to 1e-12 relative rounding
    std::size_t grid_points = 0;
};

/// Bounds ||exp(W_f u + R_f v + b_f)||_inf over u in [-r_u, r_u]^p and
/// v in [-r_v, r_v]^q. Exp is monotone, so the bound is attained at the box
/// corner sign(row); the grid is a cross-check only.
ContractionCheck check_contraction(const SLSTMParams& cell, double threshold, std::uint64_t grid_seed = 0,
                                   std::size_t interior_samples = 256, double u_radius = 1.0,
                                   double v_radius = 1.0);

struct CouplingReport {
    std::vector<double> gap;  // sup-norm distance of (y, h, c, n) per step
    bool contraction_satisfied = false;
    double analytic_sup = 0.0;
    std::optional<std::size_t> first_below;  // 1-based step where gap < threshold
    double threshold = 1e-6;
    double decay_rate = 0.0;  // exp(slope) of log gap ~ t
    double r_squared = 0.0;
    bool overflowed = false;
};

/// Runs two chains with the same noise stream, one from the zero state and
/// one from a random state (or the same zero state when `identical_start`).
CouplingReport two_trajectory_coupling(const ChainConfig& config, std::size_t horizon, bool identical_start = false,
                                       double threshold = 1e-6, std::size_t burn_in = 10);

struct RatioReport {
    double max_ratio_while_finite = 0.0;
    double max_c_norm_while_finite = 0.0;
    std::size_t finite_steps = 0;
    std::optional<std::size_t> first_nonfinite;
};

RatioReport ratio_stability_report(const ChainTrace& trace);

/// Least-squares fit y = a + b x. Returns {b, a, r_squared}.
struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

nlohmann::json to_json(const ChainConfig& config);
ChainConfig chain_config_from_json(const nlohmann::json& j, ChainConfig base = {});

}  // namespace pslstm
