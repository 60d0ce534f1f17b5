#include "pslstm/slstm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pslstm {

std::string to_string(GateActivation a) { return a == GateActivation::exponential ? "exponential" : "sigmoid"; }

GateActivation parse_gate_activation(const std::string& s) {
    if (s == "exponential" || s == "exp") return GateActivation::exponential;
    if (s == "sigmoid") return GateActivation::sigmoid;
    throw std::invalid_argument("unknown gate activation '" + s + "' (expected exponential|sigmoid)");
}

SLSTMParams SLSTMParams::zeros(std::size_t input_size, std::size_t hidden_size, std::size_t heads) {
    SLSTMParams p;
    p.input_size = input_size;
    p.hidden_size = hidden_size;
    p.heads = heads;
    p.validate();
    for (std::size_t g = 0; g < kGates; ++g) {
        p.W[g] = Tensor({hidden_size, input_size});
        p.R[g] = Tensor({hidden_size, hidden_size});
        p.b[g] = Tensor({hidden_size});
    }
    return p;
}

SLSTMParams SLSTMParams::init(std::size_t input_size, std::size_t hidden_size, std::size_t heads, Rng& rng,
                              double forget_bias) {
    SLSTMParams p = zeros(input_size, hidden_size, heads);
    const double w_std = 1.0 / std::sqrt(static_cast<double>(input_size));
    const double r_std = 1.0 / std::sqrt(static_cast<double>(p.head_size()));
    for (std::size_t g = 0; g < kGates; ++g) {
        p.W[g] = rand_normal(rng, {hidden_size, input_size}, 0.0, w_std);
    }
    for (std::size_t g = 0; g < kGates; ++g) {
        for (std::size_t r = 0; r < hidden_size; ++r)
            for (std::size_t c = 0; c < hidden_size; ++c)
                if (p.in_block(r, c)) p.R[g](r, c) = r_std * rng.normal();
    }
    p.b[static_cast<std::size_t>(Gate::f)].fill(forget_bias);
    return p;
}

void SLSTMParams::validate() const {
    if (input_size == 0 || hidden_size == 0 || heads == 0) {
        throw std::invalid_argument("sLSTM dimensions must be positive");
    }
    if (hidden_size % heads != 0) {
        throw std::invalid_argument("hidden size " + std::to_string(hidden_size) + " is not divisible by " +
                                    std::to_string(heads) + " heads");
    }
    for (std::size_t g = 0; g < kGates; ++g) {
        if (W[g].empty()) continue;
        if (W[g].shape() != Shape{hidden_size, input_size} || R[g].shape() != Shape{hidden_size, hidden_size} ||
            b[g].shape() != Shape{hidden_size}) {
            throw ShapeError(std::string("sLSTM gate ") + kGateNames[g] + " has inconsistent weight shapes");
        }
    }
}

Tensor SLSTMParams::block_mask() const {
    Tensor mask({hidden_size, hidden_size});
    for (std::size_t r = 0; r < hidden_size; ++r)
        for (std::size_t c = 0; c < hidden_size; ++c) mask(r, c) = in_block(r, c) ? 1.0 : 0.0;
    return mask;
}

void SLSTMParams::zero_off_block() {
    for (auto& R_g : R)
        for (std::size_t r = 0; r < hidden_size; ++r)
            for (std::size_t c = 0; c < hidden_size; ++c)
                if (!in_block(r, c)) R_g(r, c) = 0.0;
}

bool SLSTMParams::off_block_is_zero() const {
    for (const auto& R_g : R)
        for (std::size_t r = 0; r < hidden_size; ++r)
            for (std::size_t c = 0; c < hidden_size; ++c)
                if (!in_block(r, c) && R_g(r, c) != 0.0) return false;
    return true;
}

std::size_t SLSTMParams::trainable_count() const {
    const std::size_t per_gate = hidden_size * input_size + hidden_size * head_size() + hidden_size;
    return kGates * per_gate;
}

void SLSTMParams::set_zero() {
    for (std::size_t g = 0; g < kGates; ++g) {
        W[g].fill(0.0);
        R[g].fill(0.0);
        b[g].fill(0.0);
    }
}

SLSTMState SLSTMState::zeros(std::size_t batch, std::size_t hidden) {
    SLSTMState s;
    s.h = Tensor({batch, hidden});
    s.c = Tensor({batch, hidden});
    s.n = Tensor({batch, hidden});
    s.m = Tensor({batch, hidden});
    s.has_m = false;
    return s;
}

bool SLSTMState::finite() const { return h.all_finite() && c.all_finite() && n.all_finite(); }

namespace {

struct GateValue {
    double log_value;  // log of the gate
    double dlog;       // d log(gate) / d pre-activation
};

GateValue gate_log(GateActivation act, double pre) {
    if (act == GateActivation::exponential) return {pre, 1.0};
    return {log_sigmoid(pre), 1.0 - sigmoid(pre)};
}

double gate_raw(GateActivation act, double pre) {
    return act == GateActivation::exponential ? std::exp(pre) : sigmoid(pre);
}

Tensor as_batch(const Tensor& x, std::size_t width, const char* what) {
    if (x.rank() == 1) {
        if (x.dim(0) != width) {
            throw ShapeError(std::string(what) + " has shape " + to_string(x.shape()) + ", expected [" +
                             std::to_string(width) + "]");
        }
        return x.reshape({1, width});
    }
    if (x.rank() != 2 || x.dim(1) != width) {
        throw ShapeError(std::string(what) + " has shape " + to_string(x.shape()) + ", expected [batch x " +
                         std::to_string(width) + "]");
    }
    return x;
}

}  // namespace

StepResult slstm_step(const SLSTMParams& params, const Tensor& x_t, const SLSTMState& prev, const GateMode& mode) {
    if (mode.stabilized && mode.hidden_map == HiddenMap::tanh_cell) {
        throw std::invalid_argument("the log-space stabilizer requires the normalized hidden map");
    }
    const std::size_t D = params.input_size;
    const std::size_t H = params.hidden_size;
    const std::size_t hs = params.head_size();

    StepResult out;
    StepCache& k = out.cache;
    k.x = as_batch(x_t, D, "sLSTM step input");
    const std::size_t B = k.x.dim(0);
    k.h_prev = as_batch(prev.h, H, "previous h");
    k.c_prev = as_batch(prev.c, H, "previous c");
    k.n_prev = as_batch(prev.n, H, "previous n");
    if (k.h_prev.dim(0) != B || k.c_prev.dim(0) != B || k.n_prev.dim(0) != B) {
        throw ShapeError("sLSTM state batch does not match input batch of " + std::to_string(B));
    }

    for (std::size_t g = 0; g < kGates; ++g) {
        Tensor& pre = k.pre[g];
        pre = Tensor({B, H});
        const double* W = params.W[g].raw();
        const double* R = params.R[g].raw();
        const double* bias = params.b[g].raw();
        for (std::size_t bi = 0; bi < B; ++bi) {
            const double* x = k.x.raw() + bi * D;
            const double* hp = k.h_prev.raw() + bi * H;
            double* out_row = pre.raw() + bi * H;
            for (std::size_t j = 0; j < H; ++j) {
                double acc = bias[j];
                const double* wrow = W + j * D;
                for (std::size_t q = 0; q < D; ++q) acc += wrow[q] * x[q];
                if (mode.memory_mixing) {
                    const std::size_t lo = (j / hs) * hs;
                    const double* rrow = R + j * H;
                    for (std::size_t q = lo; q < lo + hs; ++q) acc += rrow[q] * hp[q];
                }
                out_row[j] = acc;
            }
        }
    }

    k.z = Tensor({B, H});
    k.i = Tensor({B, H});
    k.f = Tensor({B, H});
    k.o = Tensor({B, H});
    k.dlog_i = Tensor({B, H});
    k.dlog_f = Tensor({B, H});
    k.c = Tensor({B, H});
    k.n = Tensor({B, H});
    k.h_tilde = Tensor({B, H});

    SLSTMState& s = out.state;
    s.h = Tensor({B, H});
    s.m = Tensor({B, H});
    s.has_m = mode.stabilized;

    const Tensor* m_prev = (prev.has_m && !prev.m.empty()) ? &prev.m : nullptr;
    if (m_prev != nullptr && m_prev->size() != B * H) throw ShapeError("previous stabilizer state has wrong shape");

    const auto& pz = k.pre[0];
    const auto& pi = k.pre[1];
    const auto& pf = k.pre[2];
    const auto& po = k.pre[3];
    for (std::size_t e = 0; e < B * H; ++e) {
        const double z = std::tanh(pz[e]);
        const double o = sigmoid(po[e]);
        const GateValue li = gate_log(mode.input_activation, pi[e]);
        const GateValue lf = gate_log(mode.forget_activation, pf[e]);
        double i_gate, f_gate, m = 0.0;
        if (mode.stabilized) {
            const double cp = k.c_prev[e], np = k.n_prev[e];
            if (m_prev == nullptr && cp == 0.0 && np == 0.0) {
                // m_0 = -inf: nothing to forget, the stabilizer starts at log i.
                m = li.log_value;
                f_gate = 0.0;
            } else {
                const double mp = m_prev != nullptr ? (*m_prev)[e] : 0.0;
                m = std::max(lf.log_value + mp, li.log_value);
                f_gate = std::exp(lf.log_value + mp - m);
            }
            i_gate = std::exp(li.log_value - m);
        } else {
            i_gate = gate_raw(mode.input_activation, pi[e]);
            f_gate = gate_raw(mode.forget_activation, pf[e]);
        }
        const double c = f_gate * k.c_prev[e] + i_gate * z;
        double n, h_tilde;
        if (mode.hidden_map == HiddenMap::normalized) {
            n = f_gate * k.n_prev[e] + i_gate;
            h_tilde = c / n;
        } else {
            n = 1.0;
            h_tilde = std::tanh(c);
        }
        k.z[e] = z;
        k.o[e] = o;
        k.i[e] = i_gate;
        k.f[e] = f_gate;
        k.dlog_i[e] = li.dlog;
        k.dlog_f[e] = lf.dlog;
        k.c[e] = c;
        k.n[e] = n;
        k.h_tilde[e] = h_tilde;
        s.h[e] = o * h_tilde;
        s.m[e] = m;
    }
    s.c = k.c;
    s.n = k.n;
    if (mode.stabilized && !s.h.all_finite()) {
        throw NumericError("stabilized sLSTM produced a non-finite hidden state");
    }
    return out;
}

SequenceResult slstm_forward(const SLSTMParams& params, const Tensor& x_seq, const SLSTMState& init,
                             const GateMode& mode) {
    params.validate();
    const bool unbatched = x_seq.rank() == 2;
    if (!unbatched && x_seq.rank() != 3) {
        throw ShapeError("sLSTM input must be [seq x input] or [batch x seq x input], got " +
                         to_string(x_seq.shape()));
    }
    const std::size_t B = unbatched ? 1 : x_seq.dim(0);
    const std::size_t S = unbatched ? x_seq.dim(0) : x_seq.dim(1);
    const std::size_t D = x_seq.shape().back();
    const std::size_t H = params.hidden_size;
    if (D != params.input_size) {
        throw ShapeError("sLSTM input width " + std::to_string(D) + " does not match weights expecting " +
                         std::to_string(params.input_size));
    }

    SequenceResult result;
    result.tape.mode = mode;
    result.tape.input_shape = x_seq.shape();
    result.tape.steps.reserve(S);
    result.h_seq = unbatched ? Tensor({S, H}) : Tensor({B, S, H});

    SLSTMState state = init;
    Tensor x_t({B, D});
    for (std::size_t t = 0; t < S; ++t) {
        for (std::size_t bi = 0; bi < B; ++bi)
            std::copy_n(x_seq.raw() + (bi * S + t) * D, D, x_t.raw() + bi * D);
        StepResult step = slstm_step(params, x_t, state, mode);
        for (std::size_t bi = 0; bi < B; ++bi)
            std::copy_n(step.state.h.raw() + bi * H, H, result.h_seq.raw() + (bi * S + t) * H);
        state = std::move(step.state);
        result.tape.steps.push_back(std::move(step.cache));
    }
    result.final_state = std::move(state);
    return result;
}

SequenceResult slstm_forward(const SLSTMParams& params, const Tensor& x_seq, const GateMode& mode) {
    const std::size_t B = x_seq.rank() == 3 ? x_seq.dim(0) : 1;
    return slstm_forward(params, x_seq, SLSTMState::zeros(B, params.hidden_size), mode);
}

SLSTMGradients slstm_backward(const SLSTMParams& params, const CellTape& tape, const Tensor& grad_h_seq) {
    const std::size_t S = tape.size();
    if (S == 0) throw std::invalid_argument("sLSTM backward on an empty tape");
    const bool unbatched = tape.input_shape.size() == 2;
    const std::size_t B = tape.steps.front().x.dim(0);
    const std::size_t D = params.input_size;
    const std::size_t H = params.hidden_size;
    const std::size_t hs = params.head_size();
    const Shape expected = unbatched ? Shape{S, H} : Shape{B, S, H};
    if (grad_h_seq.shape() != expected) {
        throw ShapeError("sLSTM backward: gradient shape " + to_string(grad_h_seq.shape()) +
                         " does not match tape " + to_string(expected));
    }
    const GateMode& mode = tape.mode;
    const bool normalized = mode.hidden_map == HiddenMap::normalized;

    SLSTMGradients grads;
    grads.params = SLSTMParams::zeros(D, H, params.heads);
    grads.x_seq = Tensor(tape.input_shape);

    Tensor dh_rec({B, H}), dc_next({B, H}), dn_next({B, H});
    std::array<Tensor, kGates> G;
    for (auto& g : G) g = Tensor({B, H});

    for (std::size_t t = S; t-- > 0;) {
        const StepCache& k = tape.steps[t];
        for (std::size_t bi = 0; bi < B; ++bi) {
            for (std::size_t j = 0; j < H; ++j) {
                const std::size_t e = bi * H + j;
                const double dh = grad_h_seq[(bi * S + t) * H + j] + dh_rec[e];
                const double o = k.o[e], z = k.z[e], ig = k.i[e], fg = k.f[e];
                const double ht = k.h_tilde[e];
                const double dht = dh * o;
                double dc = dc_next[e], dn = dn_next[e];
                if (normalized) {
                    dc += dht / k.n[e];
                    dn -= dht * ht / k.n[e];
                } else {
                    dc += dht * (1.0 - ht * ht);
                    dn = 0.0;
                }
                G[0][e] = dc * ig * (1.0 - z * z);
                G[1][e] = (dc * z + dn) * ig * k.dlog_i[e];
                G[2][e] = (dc * k.c_prev[e] + dn * k.n_prev[e]) * fg * k.dlog_f[e];
                G[3][e] = dh * ht * o * (1.0 - o);
                dc_next[e] = dc * fg;
                dn_next[e] = dn * fg;
            }
        }

        dh_rec.fill(0.0);
        for (std::size_t g = 0; g < kGates; ++g) {
            const double* W = params.W[g].raw();
            const double* R = params.R[g].raw();
            double* dW = grads.params.W[g].raw();
            double* dR = grads.params.R[g].raw();
            double* db = grads.params.b[g].raw();
            for (std::size_t bi = 0; bi < B; ++bi) {
                const double* x = k.x.raw() + bi * D;
                const double* hp = k.h_prev.raw() + bi * H;
                const double* gr = G[g].raw() + bi * H;
                double* dx = unbatched ? grads.x_seq.raw() + t * D : grads.x_seq.raw() + (bi * S + t) * D;
                double* dhp = dh_rec.raw() + bi * H;
                for (std::size_t j = 0; j < H; ++j) {
                    const double gj = gr[j];
                    db[j] += gj;
                    double* dwrow = dW + j * D;
                    const double* wrow = W + j * D;
                    for (std::size_t q = 0; q < D; ++q) {
                        dwrow[q] += gj * x[q];
                        dx[q] += gj * wrow[q];
                    }
                    if (mode.memory_mixing) {
                        const std::size_t lo = (j / hs) * hs;
                        double* drrow = dR + j * H;
                        const double* rrow = R + j * H;
                        for (std::size_t q = lo; q < lo + hs; ++q) {
                            drrow[q] += gj * hp[q];
                            dhp[q] += gj * rrow[q];
                        }
                    }
                }
            }
        }
    }
    return grads;
}

}  // namespace pslstm
