#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "pslstm/rng.hpp"
#include "pslstm/tensor.hpp"

namespace pslstm {

/// Gate order used by every per-gate array: cell input z, input i, forget f, output o.
enum class Gate : std::size_t { z = 0, i = 1, f = 2, o = 3 };
inline constexpr std::size_t kGates = 4;
inline constexpr std::array<const char*, kGates> kGateNames = {"z", "i", "f", "o"};

enum class GateActivation { exponential, sigmoid };

/// How the hidden state is read out of the cell state.
///   normalized: h = o * c / n   (sLSTM)
///   tanh_cell:  h = o * tanh(c), normalizer pinned to 1 (classic LSTM readout)
enum class HiddenMap { normalized, tanh_cell };

struct GateMode {
    GateActivation forget_activation = GateActivation::exponential;
    GateActivation input_activation = GateActivation::exponential;
    bool stabilized = true;
    /// When false the recurrent matrices are ignored (treated as zero) and
    /// receive no gradient: gates only see x_t.
    bool memory_mixing = true;
    HiddenMap hidden_map = HiddenMap::normalized;

    /// The configuration that reproduces the classic LSTM cell.
    static GateMode classic_lstm() {
        return {GateActivation::sigmoid, GateActivation::sigmoid, false, true, HiddenMap::tanh_cell};
    }
};

std::string to_string(GateActivation a);
GateActivation parse_gate_activation(const std::string& s);

/// Weights of one sLSTM layer. W[g] is hidden x input, R[g] is hidden x hidden
/// and block-diagonal with `heads` equal blocks, b[g] has `hidden` entries.
struct SLSTMParams {
    std::size_t input_size = 0;
    std::size_t hidden_size = 0;
    std::size_t heads = 1;
    std::array<Tensor, kGates> W;
    std::array<Tensor, kGates> R;
    std::array<Tensor, kGates> b;

    std::size_t head_size() const { return hidden_size / heads; }
    bool in_block(std::size_t row, std::size_t col) const { return row / head_size() == col / head_size(); }

    /// All-zero parameters of the given dimensions.
    static SLSTMParams zeros(std::size_t input_size, std::size_t hidden_size, std::size_t heads);
    /// W ~ N(0, 1/sqrt(input)), R ~ N(0, 1/sqrt(head_size)) inside the blocks,
    /// b_f = forget_bias, every other bias 0.
    static SLSTMParams init(std::size_t input_size, std::size_t hidden_size, std::size_t heads, Rng& rng,
                            double forget_bias = -1.0);

    /// 1 inside the diagonal blocks, 0 outside.
    Tensor block_mask() const;
    void zero_off_block();
    bool off_block_is_zero() const;
    /// Trainable scalars: off-block recurrent entries are not counted.
    std::size_t trainable_count() const;
    void set_zero();
    void validate() const;
};

/// Recurrent state for a batch of independent sequences; every tensor is batch x hidden.
///
/// `m` is the log-space stabilizer. When `has_m` is false the stabilizer is
/// the -inf sentinel: the first stabilized step takes m_1 = log i_1 for units
/// whose c and n are zero, and m_0 = 0 (raw scale) for units that carry a
/// nonzero initial c or n.
struct SLSTMState {
    Tensor h, c, n, m;
    bool has_m = false;

    static SLSTMState zeros(std::size_t batch, std::size_t hidden);
    std::size_t batch() const { return h.dim(0); }
    bool finite() const;
};

/// Everything one time step needs for the exact backward pass.
struct StepCache {
    Tensor x;                 // batch x input
    Tensor h_prev, c_prev, n_prev;
    std::array<Tensor, kGates> pre;  // gate pre-activations
    Tensor z, i, f, o;        // activations; i and f are the (possibly rescaled) effective gates
    Tensor dlog_i, dlog_f;    // d log(gate) / d pre-activation
    Tensor c, n, h_tilde;
};

/// Per-step caches of a forward pass, in time order.
struct CellTape {
    GateMode mode;
    Shape input_shape;
    std::vector<StepCache> steps;
    std::size_t size() const { return steps.size(); }
};

struct StepResult {
    SLSTMState state;
    StepCache cache;
};

/// One cell update. x_t is batch x input (or a plain input vector for batch 1).
/// Raw mode never throws on overflow: non-finite values propagate and are
/// visible through SLSTMState::finite(). Stabilized mode throws NumericError
/// if h ever becomes non-finite.
StepResult slstm_step(const SLSTMParams& params, const Tensor& x_t, const SLSTMState& prev, const GateMode& mode);

struct SequenceResult {
    Tensor h_seq;  // batch x seq_len x hidden (seq_len x hidden for 2-D input)
    CellTape tape;
    SLSTMState final_state;
};

/// Runs the cell over x_seq, which is batch x seq_len x input or seq_len x input.
SequenceResult slstm_forward(const SLSTMParams& params, const Tensor& x_seq, const SLSTMState& init,
                             const GateMode& mode);
SequenceResult slstm_forward(const SLSTMParams& params, const Tensor& x_seq, const GateMode& mode);

struct SLSTMGradients {
    SLSTMParams params;  // same layout as the weights; off-block R entries are exactly 0
    Tensor x_seq;        // same shape as the forward input
};

/// Exact gradients of sum_t <grad_h_seq[t], h_t> with respect to every weight
/// and every input, by backpropagation through time over the tape.
SLSTMGradients slstm_backward(const SLSTMParams& params, const CellTape& tape, const Tensor& grad_h_seq);

}  // namespace pslstm
