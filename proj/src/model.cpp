#include "pslstm/model.hpp"

#include <cmath>

namespace pslstm {

std::string to_string(ChannelStrategy s) { return s == ChannelStrategy::independent ? "independent" : "mixed"; }

ChannelStrategy parse_channel_strategy(const std::string& s) {
    if (s == "independent" || s == "ci") return ChannelStrategy::independent;
    if (s == "mixed" || s == "cm") return ChannelStrategy::mixed;
    throw std::invalid_argument("unknown channel strategy '" + s + "' (expected independent|mixed)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (lookback == 0 || horizon == 0 || n_channels == 0) fail("lookback, horizon and n_channels must be positive");
    if (patch_size == 0 || patch_stride == 0) fail("patch_size and patch_stride must be positive");
    if (patch_size > lookback) {
        fail("patch_size " + std::to_string(patch_size) + " exceeds lookback " + std::to_string(lookback));
    }
    if (embed_dim == 0 || n_heads == 0) fail("embed_dim and n_heads must be positive");
    if (embed_dim % n_heads != 0) {
        fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by n_heads " + std::to_string(n_heads));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (gate_mode.stabilized && gate_mode.hidden_map != HiddenMap::normalized) {
        fail("stabilized mode requires the normalized hidden map");
    }
}

Tensor patchify(const Tensor& x, const ModelConfig& config) {
    config.validate();
    const std::size_t L = config.lookback, M = config.n_channels;
    if (x.rank() != 3 || x.dim(1) != L || x.dim(2) != M) {
        throw ShapeError("patchify: input " + to_string(x.shape()) + " does not match [B x " + std::to_string(L) +
                         " x " + std::to_string(M) + "]");
    }
    const std::size_t B = x.dim(0), N = config.n_patches(), P = config.patch_size;
    const std::size_t S = config.patch_stride, off = config.patch_offset();
    Tensor out({B * M, N, P});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t j = 0; j < N; ++j)
                for (std::size_t p = 0; p < P; ++p) out(b * M + m, j, p) = x(b, off + j * S + p, m);
    return out;
}

PSLSTMModel::PSLSTMModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
    Rng rng(seed);
    const std::size_t k = config_.channel_group();
    const std::size_t width = config_.hidden_width();
    embed = Linear::init(config_.patch_size * k, width, rng);
    for (std::size_t i = 0; i < config_.n_blocks; ++i) {
        SLSTMBlock block;
        block.params = SLSTMParams::init(width, width, config_.n_heads, rng, config_.forget_bias_init);
        block.grads = SLSTMParams::zeros(width, width, config_.n_heads);
        if (config_.gate_mode.memory_mixing) {
            block.recurrent_mask = block.params.block_mask();
        } else {
            block.recurrent_mask = Tensor({width, width});
            for (auto& R : block.params.R) R.fill(0.0);
        }
        block.norm = LayerNorm(width);
        blocks.push_back(std::move(block));
    }
    head = Linear::init(config_.n_patches() * width, config_.horizon * k, rng);
}

Tensor PSLSTMModel::make_tokens(const Tensor& x, Tensor& mean, Tensor& scale) const {
    const std::size_t L = config_.lookback, M = config_.n_channels;
    const std::size_t B = x.dim(0);
    Tensor normalized = x;
    mean = Tensor({B, M});
    scale = Tensor({B, M}, 1.0);
    if (config_.instance_norm) {
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t m = 0; m < M; ++m) {
                double mu = 0.0;
                for (std::size_t l = 0; l < L; ++l) mu += x(b, l, m);
                mu /= static_cast<double>(L);
                double var = 0.0;
                for (std::size_t l = 0; l < L; ++l) var += (x(b, l, m) - mu) * (x(b, l, m) - mu);
                var /= static_cast<double>(L);
                const double sigma = std::sqrt(var + 1e-5);
                mean(b, m) = mu;
                scale(b, m) = sigma;
                for (std::size_t l = 0; l < L; ++l) normalized(b, l, m) = (x(b, l, m) - mu) / sigma;
            }
        }
    }
    Tensor patches = patchify(normalized, config_);  // (B*M) x N x P
    if (config_.channel_strategy == ChannelStrategy::independent) return patches;

    // Mixed: token j of sample b concatenates patch j of every channel.
    const std::size_t N = config_.n_patches(), P = config_.patch_size;
    Tensor tokens({B, N, P * M});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t j = 0; j < N; ++j)
                for (std::size_t p = 0; p < P; ++p) tokens(b, j, m * P + p) = patches(b * M + m, j, p);
    return tokens;
}

PSLSTMModel::Output PSLSTMModel::forward(const Tensor& x, Rng* dropout_rng) const {
    const std::size_t L = config_.lookback, M = config_.n_channels, T = config_.horizon;
    if (x.rank() != 3 || x.dim(1) != L || x.dim(2) != M) {
        throw ShapeError("model input: got " + to_string(x.shape()) + ", expected [B x " + std::to_string(L) +
                         " x " + std::to_string(M) + "]");
    }
    if (!x.all_finite()) throw NumericError("model input contains non-finite values");
    const std::size_t B = x.dim(0);
    const std::size_t N = config_.n_patches();
    const std::size_t k = config_.channel_group();
    const std::size_t width = config_.hidden_width();
    const bool training = dropout_rng != nullptr && config_.dropout > 0.0;

    Output out;
    Tape& tape = out.tape;
    tape.batch = B;
    Tensor tokens = make_tokens(x, tape.mean, tape.scale);
    const std::size_t rows = tokens.dim(0);
    tape.tokens = tokens.reshape({rows * N, config_.patch_size * k});

    Tensor u = embed.forward(tape.tokens);  // (rows*N) x width
    if (training) {
        tape.embed_dropout = dropout_mask(*dropout_rng, u.shape(), config_.dropout);
        u = elementwise(BinaryOp::mul, u, tape.embed_dropout);
    }
    for (const auto& block : blocks) {
        BlockTape bt;
        bt.input = u.reshape({rows, N, width});
        SequenceResult seq = slstm_forward(block.params, bt.input, config_.gate_mode);
        Tensor v = elementwise(BinaryOp::add, bt.input, seq.h_seq).reshape({rows * N, width});
        bt.cell = std::move(seq.tape);
        u = block.norm.forward(v, &bt.norm);
        if (training) {
            bt.dropout = dropout_mask(*dropout_rng, u.shape(), config_.dropout);
            u = elementwise(BinaryOp::mul, u, bt.dropout);
        }
        tape.blocks.push_back(std::move(bt));
    }
    tape.head_input = u.reshape({rows, N * width});
    const Tensor y = head.forward(tape.head_input);  // rows x (T*k)

    out.yhat = Tensor({B, T, M});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t m = 0; m < M; ++m) {
            const std::size_t row = k == 1 ? b * M + m : b;
            const std::size_t col0 = k == 1 ? 0 : m * T;
            for (std::size_t t = 0; t < T; ++t) {
                out.yhat(b, t, m) = y(row, col0 + t) * tape.scale(b, m) + tape.mean(b, m);
            }
        }
    }
    return out;
}

void PSLSTMModel::backward(const Tape& tape, const Tensor& grad_yhat) {
    const std::size_t M = config_.n_channels, T = config_.horizon;
    const std::size_t B = tape.batch;
    if (grad_yhat.shape() != Shape{B, T, M}) {
        throw ShapeError("model backward: gradient " + to_string(grad_yhat.shape()) + " does not match output [" +
                         std::to_string(B) + "x" + std::to_string(T) + "x" + std::to_string(M) + "]");
    }
    const std::size_t N = config_.n_patches();
    const std::size_t k = config_.channel_group();
    const std::size_t width = config_.hidden_width();
    const std::size_t rows = tape.head_input.dim(0);

    Tensor dy({rows, T * k});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t m = 0; m < M; ++m) {
            const std::size_t row = k == 1 ? b * M + m : b;
            const std::size_t col0 = k == 1 ? 0 : m * T;
            for (std::size_t t = 0; t < T; ++t) dy(row, col0 + t) = grad_yhat(b, t, m) * tape.scale(b, m);
        }
    }
    Tensor du = head.backward(tape.head_input, dy).reshape({rows * N, width});

    for (std::size_t bi = blocks.size(); bi-- > 0;) {
        SLSTMBlock& block = blocks[bi];
        const BlockTape& bt = tape.blocks[bi];
        if (!bt.dropout.empty()) du = elementwise(BinaryOp::mul, du, bt.dropout);
        Tensor dv = block.norm.backward(bt.norm, du);
        SLSTMGradients g = slstm_backward(block.params, bt.cell, dv.reshape({rows, N, width}));
        for (std::size_t gi = 0; gi < kGates; ++gi) {
            auto acc = [](Tensor& into, const Tensor& add) {
                for (std::size_t e = 0; e < into.size(); ++e) into[e] += add[e];
            };
            acc(block.grads.W[gi], g.params.W[gi]);
            acc(block.grads.b[gi], g.params.b[gi]);
            if (config_.gate_mode.memory_mixing) acc(block.grads.R[gi], g.params.R[gi]);
        }
        du = elementwise(BinaryOp::add, dv, g.x_seq.reshape({rows * N, width}));
    }
    if (!tape.embed_dropout.empty()) du = elementwise(BinaryOp::mul, du, tape.embed_dropout);
    embed.backward(tape.tokens, du, false);
}

ParamList PSLSTMModel::parameters() {
    ParamList list;
    embed.append_params(list, "embed");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto& block = blocks[i];
        const std::string prefix = "blocks." + std::to_string(i) + ".";
        for (std::size_t g = 0; g < kGates; ++g) {
            const std::string gate = kGateNames[g];
            list.push_back({prefix + "W_" + gate, &block.params.W[g], &block.grads.W[g], nullptr});
            list.push_back({prefix + "R_" + gate, &block.params.R[g], &block.grads.R[g], &block.recurrent_mask});
            list.push_back({prefix + "b_" + gate, &block.params.b[g], &block.grads.b[g], nullptr});
        }
        block.norm.append_params(list, prefix + "norm");
    }
    head.append_params(list, "head");
    return list;
}

std::size_t PSLSTMModel::count_params() const {
    std::size_t n = embed.param_count() + head.param_count();
    for (const auto& block : blocks) {
        const auto& p = block.params;
        n += p.trainable_count() + 2 * p.hidden_size;
        if (!config_.gate_mode.memory_mixing) n -= kGates * p.hidden_size * p.head_size();
    }
    return n;
}

void PSLSTMModel::zero_grad() { zero_grads(parameters()); }

bool PSLSTMModel::block_structure_intact() const {
    for (const auto& block : blocks) {
        if (!block.params.off_block_is_zero()) return false;
        if (!config_.gate_mode.memory_mixing) {
            for (const auto& R : block.params.R)
                if (max_abs(R) != 0.0) return false;
        }
    }
    return true;
}

Tensor channel_mixed_forward(const PSLSTMModel& model, const Tensor& x) {
    if (model.config().channel_strategy != ChannelStrategy::mixed) {
        throw std::invalid_argument("channel_mixed_forward requires channel_strategy=mixed");
    }
    return model.forward(x).yhat;
}

GradCheckResult grad_check_model(const ModelConfig& config, std::size_t batch, std::uint64_t seed, double epsilon) {
    PSLSTMModel model(config, seed);
    Rng rng(seed ^ 0x5eedULL);
    // Nonzero LayerNorm and bias parameters so every path carries gradient.
    for (auto& p : model.parameters()) {
        if (p.name.ends_with("bias") || p.name.ends_with("beta") || p.name.ends_with("gamma")) {
            for (auto& v : p.value->data()) v += rng.uniform(-0.3, 0.3);
        }
    }
    const Tensor x = rand_normal(rng, {batch, config.lookback, config.n_channels}, 0.0, 1.0);
    const Tensor readout = rand_normal(rng, {batch, config.horizon, config.n_channels}, 0.0, 1.0);
    auto loss = [&] {
        const Tensor y = model.predict(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * readout[i];
        return s;
    };
    auto compute = [&] {
        auto out = model.forward(x);
        model.backward(out.tape, readout);
    };
    return grad_check(model.parameters(), loss, compute, epsilon);
}

}  // namespace pslstm
