#pragma once

#include "pslstm/slstm.hpp"

namespace pslstm {

/// Classic LSTM: sigmoid gates, tanh cell input, h = o * tanh(c). Weights use
/// the sLSTM layout with a single dense head.
using LSTMParams = SLSTMParams;

struct LSTMState {
    Tensor h, c;  // hidden vectors
    static LSTMState zeros(std::size_t hidden);
};

struct LSTMStepCache {
    Tensor x, h_prev, c_prev;
    Tensor z, i, f, o, c, tanh_c;
};

struct LSTMStepResult {
    LSTMState state;
    LSTMStepCache cache;
};

LSTMStepResult lstm_step(const LSTMParams& params, const Tensor& x_t, const LSTMState& prev);

struct LSTMSequenceResult {
    Tensor h_seq;  // seq_len x hidden
    std::vector<LSTMStepCache> tape;
    LSTMState final_state;
};

LSTMSequenceResult lstm_forward(const LSTMParams& params, const Tensor& x_seq, const LSTMState& init);
LSTMSequenceResult lstm_forward(const LSTMParams& params, const Tensor& x_seq);

struct LSTMGradients {
    LSTMParams params;
    Tensor x_seq;
};

LSTMGradients lstm_backward(const LSTMParams& params, const std::vector<LSTMStepCache>& tape,
                            const Tensor& grad_h_seq);

}  // namespace pslstm
