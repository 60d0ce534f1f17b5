#include "pslstm/gradcheck.hpp"

#include <cfloat>
#include <cmath>

#include "pslstm/layers.hpp"
#include "pslstm/lstm.hpp"

namespace pslstm {

namespace {
constexpr double kResolutionUlps = 32.0;
}

GradCheckResult grad_check(const ParamList& params, const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
        throw std::invalid_argument("grad_check epsilon must lie in [1e-7, 1e-3], got " + std::to_string(epsilon));
    }
    zero_grads(params);
    compute_grads();
    GradCheckResult result;
    for (const auto& p : params) {
        for (std::size_t idx = 0; idx < p.value->size(); ++idx) {
            if (!p.trainable(idx)) continue;
            double& v = (*p.value)[idx];
            const double saved = v;
            v = saved + epsilon;
            const double up = loss();
            v = saved - epsilon;
            const double down = loss();
            v = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("grad_check: non-finite loss while perturbing " + p.name);
            }
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic = (*p.grad)[idx];
            const double resolution =
                kResolutionUlps * DBL_EPSILON * std::max(std::abs(up), std::abs(down)) / (2.0 * epsilon);
            double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
            if (std::abs(analytic) <= resolution && std::abs(numeric) <= resolution) {
                rel = 0.0;
                ++result.below_resolution;
            }
            ++result.coordinates;
            if (rel > result.max_relative_error || result.coordinates == 1) {
                result.max_relative_error = rel;
                result.worst_param = p.name;
                result.worst_index = idx;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

namespace {

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void randomize_biases(SLSTMParams& p, Rng& rng) {
    for (auto& b : p.b)
        for (auto& v : b.data()) v += rng.uniform(-0.5, 0.5);
}

}  // namespace

GradCheckResult grad_check_slstm(const GateMode& mode, std::size_t input, std::size_t hidden, std::size_t heads,
                                 std::size_t seq_len, std::size_t batch, std::uint64_t seed, double epsilon) {
    Rng rng(seed);
    SLSTMParams params = SLSTMParams::init(input, hidden, heads, rng);
    randomize_biases(params, rng);
    const Tensor x = rand_uniform(rng, {batch, seq_len, input}, -1.0, 1.0);
    const Tensor readout = rand_normal(rng, {batch, seq_len, hidden}, 0.0, 1.0);

    SLSTMParams grads = SLSTMParams::zeros(input, hidden, heads);
    const Tensor mask = params.block_mask();
    const Tensor no_mask = Tensor({hidden, hidden});  // R frozen when mixing is off
    ParamList list;
    for (std::size_t g = 0; g < kGates; ++g) {
        const std::string gate = kGateNames[g];
        list.push_back({"W_" + gate, &params.W[g], &grads.W[g], nullptr});
        list.push_back({"R_" + gate, &params.R[g], &grads.R[g], mode.memory_mixing ? &mask : &no_mask});
        list.push_back({"b_" + gate, &params.b[g], &grads.b[g], nullptr});
    }
    auto loss = [&] { return dot(slstm_forward(params, x, mode).h_seq, readout); };
    auto compute = [&] {
        auto fwd = slstm_forward(params, x, mode);
        grads = slstm_backward(params, fwd.tape, readout).params;
    };
    return grad_check(list, loss, compute, epsilon);
}

GradCheckResult grad_check_lstm(std::size_t input, std::size_t hidden, std::size_t seq_len, std::uint64_t seed,
                                double epsilon) {
    Rng rng(seed);
    LSTMParams params = SLSTMParams::init(input, hidden, 1, rng);
    randomize_biases(params, rng);
    const Tensor x = rand_uniform(rng, {seq_len, input}, -1.0, 1.0);
    const Tensor readout = rand_normal(rng, {seq_len, hidden}, 0.0, 1.0);

    LSTMParams grads = LSTMParams::zeros(input, hidden, 1);
    ParamList list;
    for (std::size_t g = 0; g < kGates; ++g) {
        const std::string gate = kGateNames[g];
        list.push_back({"W_" + gate, &params.W[g], &grads.W[g], nullptr});
        list.push_back({"R_" + gate, &params.R[g], &grads.R[g], nullptr});
        list.push_back({"b_" + gate, &params.b[g], &grads.b[g], nullptr});
    }
    auto loss = [&] { return dot(lstm_forward(params, x).h_seq, readout); };
    auto compute = [&] {
        auto fwd = lstm_forward(params, x);
        grads = lstm_backward(params, fwd.tape, readout).params;
    };
    return grad_check(list, loss, compute, epsilon);
}

GradCheckResult grad_check_linear(std::size_t input, std::size_t output, std::size_t rows, std::uint64_t seed,
                                  double epsilon) {
    Rng rng(seed);
    Linear layer = Linear::init(input, output, rng);
    for (auto& v : layer.bias.data()) v = rng.normal();
    const Tensor x = rand_normal(rng, {rows, input}, 0.0, 1.0);
    const Tensor readout = rand_normal(rng, {rows, output}, 0.0, 1.0);
    ParamList list;
    layer.append_params(list, "linear");
    auto loss = [&] { return dot(layer.forward(x), readout); };
    auto compute = [&] { layer.backward(x, readout, false); };
    return grad_check(list, loss, compute, epsilon);
}

}  // namespace pslstm
