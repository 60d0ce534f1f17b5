#include "pslstm/lstm.hpp"

#include <cmath>

namespace pslstm {

namespace {

Tensor row(const Tensor& m, std::size_t r) {
    const std::size_t n = m.dim(1);
    return Tensor({n}, std::vector<double>(m.raw() + r * n, m.raw() + (r + 1) * n));
}

// y = A v for a matrix A and vector v.
Tensor apply(const Tensor& A, const Tensor& v) { return matmul(A, v.reshape({v.size(), 1})).reshape({A.dim(0)}); }

// y = A^T v.
Tensor apply_transposed(const Tensor& A, const Tensor& v) {
    return matmul(v.reshape({1, v.size()}), A).reshape({A.dim(1)});
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }

Tensor one_minus(const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.data()) v = 1.0 - v;
    return out;
}

void add_outer(Tensor& acc, const Tensor& u, const Tensor& v) {
    for (std::size_t r = 0; r < u.size(); ++r)
        for (std::size_t c = 0; c < v.size(); ++c) acc(r, c) += u[r] * v[c];
}

void add_into(Tensor& acc, const Tensor& v) {
    for (std::size_t r = 0; r < v.size(); ++r) acc[r] += v[r];
}

}  // namespace

LSTMState LSTMState::zeros(std::size_t hidden) { return {Tensor({hidden}), Tensor({hidden})}; }

LSTMStepResult lstm_step(const LSTMParams& p, const Tensor& x_t, const LSTMState& prev) {
    if (x_t.shape() != Shape{p.input_size}) {
        throw ShapeError("LSTM step input has shape " + to_string(x_t.shape()) + ", expected [" +
                         std::to_string(p.input_size) + "]");
    }
    auto preact = [&](std::size_t g) { return add(add(apply(p.W[g], x_t), apply(p.R[g], prev.h)), p.b[g]); };

    LSTMStepResult r;
    auto& k = r.cache;
    k.x = x_t;
    k.h_prev = prev.h;
    k.c_prev = prev.c;
    k.z = elementwise(UnaryOp::tanh, preact(0));
    k.i = elementwise(UnaryOp::sigmoid, preact(1));
    k.f = elementwise(UnaryOp::sigmoid, preact(2));
    k.o = elementwise(UnaryOp::sigmoid, preact(3));
    k.c = add(mul(k.f, prev.c), mul(k.i, k.z));
    k.tanh_c = elementwise(UnaryOp::tanh, k.c);
    r.state.c = k.c;
    r.state.h = mul(k.o, k.tanh_c);
    return r;
}

LSTMSequenceResult lstm_forward(const LSTMParams& p, const Tensor& x_seq, const LSTMState& init) {
    if (x_seq.rank() != 2 || x_seq.dim(1) != p.input_size) {
        throw ShapeError("LSTM input must be [seq x " + std::to_string(p.input_size) + "], got " +
                         to_string(x_seq.shape()));
    }
    const std::size_t S = x_seq.dim(0);
    LSTMSequenceResult res;
    res.h_seq = Tensor({S, p.hidden_size});
    LSTMState state = init;
    for (std::size_t t = 0; t < S; ++t) {
        auto step = lstm_step(p, row(x_seq, t), state);
        for (std::size_t j = 0; j < p.hidden_size; ++j) res.h_seq(t, j) = step.state.h[j];
        state = std::move(step.state);
        res.tape.push_back(std::move(step.cache));
    }
    res.final_state = std::move(state);
    return res;
}

LSTMSequenceResult lstm_forward(const LSTMParams& p, const Tensor& x_seq) {
    return lstm_forward(p, x_seq, LSTMState::zeros(p.hidden_size));
}

LSTMGradients lstm_backward(const LSTMParams& p, const std::vector<LSTMStepCache>& tape, const Tensor& grad_h_seq) {
    const std::size_t S = tape.size();
    const std::size_t H = p.hidden_size;
    if (S == 0) throw std::invalid_argument("LSTM backward on an empty tape");
    if (grad_h_seq.shape() != Shape{S, H}) {
        throw ShapeError("LSTM backward: gradient shape " + to_string(grad_h_seq.shape()) + " does not match [" +
                         std::to_string(S) + "x" + std::to_string(H) + "]");
    }
    LSTMGradients g;
    g.params = LSTMParams::zeros(p.input_size, H, p.heads);
    g.x_seq = Tensor({S, p.input_size});

    Tensor dh_next({H}), dc_next({H});
    for (std::size_t t = S; t-- > 0;) {
        const auto& k = tape[t];
        Tensor dh = add(row(grad_h_seq, t), dh_next);
        Tensor dc = add(dc_next, mul(mul(dh, k.o), one_minus(mul(k.tanh_c, k.tanh_c))));
        std::array<Tensor, kGates> d;
        d[0] = mul(mul(dc, k.i), one_minus(mul(k.z, k.z)));
        d[1] = mul(mul(dc, k.z), mul(k.i, one_minus(k.i)));
        d[2] = mul(mul(dc, k.c_prev), mul(k.f, one_minus(k.f)));
        d[3] = mul(mul(dh, k.tanh_c), mul(k.o, one_minus(k.o)));
        dc_next = mul(dc, k.f);
        dh_next = Tensor({H});
        Tensor dx({p.input_size});
        for (std::size_t gi = 0; gi < kGates; ++gi) {
            add_outer(g.params.W[gi], d[gi], k.x);
            add_outer(g.params.R[gi], d[gi], k.h_prev);
            add_into(g.params.b[gi], d[gi]);
            add_into(dx, apply_transposed(p.W[gi], d[gi]));
            add_into(dh_next, apply_transposed(p.R[gi], d[gi]));
        }
        for (std::size_t q = 0; q < p.input_size; ++q) g.x_seq(t, q) = dx[q];
    }
    return g;
}

}  // namespace pslstm
