#include "pslstm/probe.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace pslstm {

void ChainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("probe config: " + msg); };
    if (p == 0 || q == 0 || heads == 0) fail("p, q and heads must be positive");
    if (q % heads != 0) fail("q must be divisible by heads");
    if (horizon < 2) fail("horizon must be at least 2");
    if (aligned_feedback && p != 1) fail("aligned_feedback needs p == 1");
    if (!(noise_std >= 0.0)) fail("noise_std must be non-negative");
    if (!(weight_scale >= 0.0) || !(forget_weight_scale >= 0.0) || !(output_weight_scale >= 0.0)) {
        fail("weight scales must be non-negative");
    }
}

std::string to_string(ChainMode m) { return m == ChainMode::raw ? "raw" : "stabilized"; }

ChainMode parse_chain_mode(const std::string& s) {
    if (s == "raw") return ChainMode::raw;
    if (s == "stabilized") return ChainMode::stabilized;
    throw std::invalid_argument("unknown chain mode '" + s + "' (expected raw|stabilized)");
}

ChainModel make_chain(const ChainConfig& config) {
    config.validate();
    Rng rng = Rng(config.seed).fork(0);
    ChainModel model;
    model.cell = SLSTMParams::init(config.p, config.q, config.heads, rng, 0.0);
    for (std::size_t g = 0; g < kGates; ++g) {
        const double scale = config.weight_scale * (g == static_cast<std::size_t>(Gate::f) ? config.forget_weight_scale : 1.0);
        for (auto& v : model.cell.W[g].data()) v *= scale;
        for (auto& v : model.cell.R[g].data()) v *= scale;
    }
    model.W_eh = rand_normal(rng, {config.p, config.q}, 0.0,
                             config.output_weight_scale / std::sqrt(static_cast<double>(config.q)));
    model.b_e = Tensor({config.p}, config.output_bias);
    if (config.aligned_feedback) {
        const auto z = static_cast<std::size_t>(Gate::z);
        for (std::size_t j = 0; j < config.q; ++j) {
            const double a = std::abs(model.W_eh(0, j));
            model.W_eh(0, j) = model.cell.W[z](j, 0) >= 0.0 ? a : -a;
        }
    }

    const auto f = static_cast<std::size_t>(Gate::f);
    for (std::size_t j = 0; j < config.q; ++j) {
        double rowsum = 0.0;
        for (std::size_t k = 0; k < config.p; ++k) rowsum += std::abs(model.cell.W[f](j, k));
        for (std::size_t k = 0; k < config.q; ++k) rowsum += std::abs(model.cell.R[f](j, k));
        model.cell.b[f][j] = config.forget_bias_offset < 0.0 ? config.forget_bias_offset - rowsum
                                                             : config.forget_bias_offset + rowsum;
    }
    return model;
}

ChainState zero_chain_state(const ChainConfig& config) {
    return {Tensor({config.p}), SLSTMState::zeros(1, config.q)};
}

namespace {

GateMode chain_gate_mode(ChainMode mode) {
    GateMode g;
    g.stabilized = mode == ChainMode::stabilized;
    return g;
}

}  // namespace

ChainTrace simulate_chain(const ChainModel& model, const ChainConfig& config,
                          const std::optional<ChainState>& initial) {
    config.validate();
    const std::size_t p = config.p, q = config.q, horizon = config.horizon;
    Rng noise = Rng(config.seed).fork(1);
    const GateMode mode = chain_gate_mode(config.mode);

    ChainState state = initial.value_or(zero_chain_state(config));
    ChainTrace trace;
    trace.y_seq = Tensor({horizon, p});
    trace.f_norm.reserve(horizon);
    bool finite = true;
    Tensor x({1, p});
    for (std::size_t t = 1; t <= horizon; ++t) {
        for (std::size_t k = 0; k < p; ++k) {
            const double u = state.y[k];
            x[k] = config.clamp_input ? std::clamp(u, -1.0, 1.0) : u;
        }
        // Noise is drawn every step, overflow or not, so coupled chains stay aligned.
        std::vector<double> eps(p);
        for (auto& e : eps) e = config.noise_std * noise.normal();

        if (!finite) {
            for (std::size_t k = 0; k < p; ++k) trace.y_seq(t - 1, k) = std::nan("");
            const double nan = std::nan("");
            trace.f_norm.push_back(nan);
            trace.c_norm.push_back(nan);
            trace.n_norm.push_back(nan);
            trace.ratio_norm.push_back(nan);
            trace.h_norm.push_back(nan);
            trace.finite.push_back(false);
            continue;
        }
        StepResult step = slstm_step(model.cell, x, state.cell, mode);
        const Tensor& f_pre = step.cache.pre[static_cast<std::size_t>(Gate::f)];
        double f_norm = 0.0, c_norm = 0.0, n_norm = 0.0, ratio = 0.0, h_norm = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            f_norm = std::max(f_norm, std::exp(f_pre[j]));
            c_norm = std::max(c_norm, std::abs(step.state.c[j]));
            n_norm = std::max(n_norm, std::abs(step.state.n[j]));
            ratio = std::max(ratio, std::abs(step.state.c[j] / step.state.n[j]));
            h_norm = std::max(h_norm, std::abs(step.state.h[j]));
        }
        for (std::size_t k = 0; k < p; ++k) {
            double a = model.b_e[k];
            for (std::size_t j = 0; j < q; ++j) a += model.W_eh(k, j) * step.state.h[j];
            state.y[k] = std::tanh(a) + eps[k];
            trace.y_seq(t - 1, k) = state.y[k];
        }
        state.cell = std::move(step.state);
        const bool now_finite = state.cell.finite() && state.y.all_finite() && std::isfinite(c_norm) &&
                                std::isfinite(n_norm) && std::isfinite(ratio);
        finite = finite && now_finite;
        if (!finite && !trace.first_nonfinite) trace.first_nonfinite = t;
        trace.f_norm.push_back(f_norm);
        trace.c_norm.push_back(c_norm);
        trace.n_norm.push_back(n_norm);
        trace.ratio_norm.push_back(ratio);
        trace.h_norm.push_back(h_norm);
        trace.finite.push_back(finite);
    }
    trace.final_state = std::move(state);
    return trace;
}

ChainTrace simulate_chain(const ChainConfig& config) { return simulate_chain(make_chain(config), config); }

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) return {};
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) return {};
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return fit;
}

MemoryReport memory_report(const Tensor& series, std::size_t max_lag, std::size_t burn_in) {
    if (series.rank() != 2) throw ShapeError("memory_report expects a [time x dims] series");
    if (max_lag == 0) throw std::invalid_argument("memory_report: max_lag must be positive");
    const std::size_t total = series.dim(0), dims = series.dim(1);
    if (burn_in >= total) throw std::invalid_argument("memory_report: burn-in covers the whole trace");
    const std::size_t n = total - burn_in;
    if (n < 10 * max_lag) {
        throw std::invalid_argument("memory_report: need at least " + std::to_string(10 * max_lag) +
                                    " steps for max_lag " + std::to_string(max_lag));
    }
    MemoryReport report;
    report.max_lag = max_lag;
    for (std::size_t d = 0; d < dims; ++d) {
        std::vector<double> v(n);
        for (std::size_t t = 0; t < n; ++t) v[t] = series(burn_in + t, d);
        if (!std::all_of(v.begin(), v.end(), [](double a) { return std::isfinite(a); })) {
            throw NumericError("memory_report: trace is not finite over the analysis window");
        }
        double mu = 0.0;
        for (double a : v) mu += a;
        mu /= static_cast<double>(n);
        double c0 = 0.0;
        for (double a : v) c0 += (a - mu) * (a - mu);
        if (c0 <= 0.0) throw NumericError("memory_report: series has zero variance");

        std::vector<double> acf(max_lag + 1);
        acf[0] = 1.0;
        for (std::size_t k = 1; k <= max_lag; ++k) {
            double ck = 0.0;
            for (std::size_t t = 0; t + k < n; ++t) ck += (v[t] - mu) * (v[t + k] - mu);
            acf[k] = ck / c0;
        }
        std::vector<double> lags, logs;
        for (std::size_t k = 1; k <= max_lag; ++k) {
            if (std::abs(acf[k]) > 0.01) {
                lags.push_back(static_cast<double>(k));
                logs.push_back(std::log(std::abs(acf[k])));
            }
        }
        const LinearFit fit = fit_line(lags, logs);

        std::vector<double> env(max_lag + 1, 0.0);
        for (std::size_t k = max_lag; k >= 1; --k) env[k] = std::max(std::abs(acf[k]), k < max_lag ? env[k + 1] : 0.0);
        std::vector<double> env_lags, env_logs;
        for (std::size_t k = 1; k <= max_lag; ++k) {
            if (env[k] > 0.01) {
                env_lags.push_back(static_cast<double>(k));
                env_logs.push_back(std::log(env[k]));
            }
        }
        const LinearFit env_fit = fit_line(env_lags, env_logs);
        report.envelope_rho_hat.push_back(env_lags.size() >= 2 ? std::exp(env_fit.slope) : 0.0);
        report.envelope_r_squared.push_back(env_lags.size() >= 2 ? env_fit.r_squared : 0.0);

        report.acf.push_back(std::move(acf));
        report.fit_points.push_back(lags.size());
        report.rho_hat.push_back(lags.size() >= 2 ? std::exp(fit.slope) : 0.0);
        report.r_squared.push_back(lags.size() >= 2 ? fit.r_squared : 0.0);
    }
    return report;
}

MemoryReport memory_report(const ChainTrace& trace, std::size_t max_lag, std::size_t burn_in) {
    MemoryReport report = memory_report(trace.y_seq, max_lag, burn_in);
    double sup = 0.0;
    for (std::size_t t = burn_in; t < trace.length(); ++t) sup = std::max(sup, trace.f_norm[t]);
    report.contraction_bound = sup;
    return report;
}

ContractionCheck check_contraction(const SLSTMParams& cell, double threshold, std::uint64_t grid_seed,
                                   std::size_t interior_samples, double u_radius, double v_radius) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("contraction threshold must lie in (0, 1)");
    const std::size_t p = cell.input_size, q = cell.hidden_size;
    const auto f = static_cast<std::size_t>(Gate::f);
    const Tensor& W = cell.W[f];
    const Tensor& R = cell.R[f];
    const Tensor& b = cell.b[f];

    ContractionCheck out;
    out.threshold = threshold;
    double max_pre = -INFINITY;
    for (std::size_t j = 0; j < q; ++j) {
        double a = b[j];
        for (std::size_t k = 0; k < p; ++k) a += u_radius * std::abs(W(j, k));
        for (std::size_t k = 0; k < q; ++k) a += v_radius * std::abs(R(j, k));
        max_pre = std::max(max_pre, a);
    }
    out.analytic_sup = std::exp(max_pre);
    out.satisfied = out.analytic_sup <= threshold * (1.0 + 1e-12);

    auto gate_sup = [&](const std::vector<double>& u, const std::vector<double>& v) {
        double m = -INFINITY;
        for (std::size_t j = 0; j < q; ++j) {
            double a = b[j];
            for (std::size_t k = 0; k < p; ++k) a += W(j, k) * u[k];
            for (std::size_t k = 0; k < q; ++k) a += R(j, k) * v[k];
            m = std::max(m, a);
        }
        return std::exp(m);
    };
    std::vector<double> u(p), v(q);
    double grid_max = 0.0;
    const std::size_t dims = p + q;
    if (dims <= 20) {
        for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << dims); ++mask) {
            for (std::size_t k = 0; k < p; ++k) u[k] = (mask >> k) & 1 ? u_radius : -u_radius;
            for (std::size_t k = 0; k < q; ++k) v[k] = (mask >> (p + k)) & 1 ? v_radius : -v_radius;
            grid_max = std::max(grid_max, gate_sup(u, v));
            ++out.grid_points;
        }
    } else {
        // Sign-aligned corner of every row plus random corners.
        for (std::size_t j = 0; j < q; ++j) {
            for (std::size_t k = 0; k < p; ++k) u[k] = W(j, k) >= 0.0 ? u_radius : -u_radius;
            for (std::size_t k = 0; k < q; ++k) v[k] = R(j, k) >= 0.0 ? v_radius : -v_radius;
            grid_max = std::max(grid_max, gate_sup(u, v));
            ++out.grid_points;
        }
    }
    Rng rng(grid_seed);
    for (std::size_t s = 0; s < interior_samples; ++s) {
        for (auto& a : u) a = rng.uniform(-u_radius, u_radius);
        for (auto& a : v) a = rng.uniform(-v_radius, v_radius);
        grid_max = std::max(grid_max, gate_sup(u, v));
        ++out.grid_points;
    }
    out.grid_sup = grid_max;
    return out;
}

namespace {

double state_gap(const ChainState& a, const ChainState& b) {
    double g = max_abs_diff(a.y, b.y);
    g = std::max(g, max_abs_diff(a.cell.h, b.cell.h));
    g = std::max(g, max_abs_diff(a.cell.c, b.cell.c));
    g = std::max(g, max_abs_diff(a.cell.n, b.cell.n));
    return g;
}

ChainState random_chain_state(const ChainConfig& config, Rng& rng) {
    ChainState s = zero_chain_state(config);
    for (auto& v : s.y.data()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : s.cell.h.data()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : s.cell.n.data()) v = rng.uniform(0.5, 2.0);
    for (std::size_t j = 0; j < s.cell.c.size(); ++j) s.cell.c[j] = s.cell.n[j] * rng.uniform(-1.0, 1.0);
    return s;
}

}  // namespace

CouplingReport two_trajectory_coupling(const ChainConfig& config, std::size_t horizon, bool identical_start,
                                       double threshold, std::size_t burn_in) {
    ChainConfig cfg = config;
    cfg.horizon = horizon;
    cfg.validate();
    if (cfg.mode == ChainMode::stabilized) {
        // Rescaled internals of two chains are not comparable; couple in raw arithmetic.
        cfg.mode = ChainMode::raw;
    }
    const ChainModel model = make_chain(cfg);
    const ContractionCheck check = check_contraction(model.cell, 0.999999);

    CouplingReport report;
    report.threshold = threshold;
    report.analytic_sup = check.analytic_sup;
    report.contraction_satisfied = check.analytic_sup < 1.0;

    Rng init_rng = Rng(cfg.seed).fork(2);
    ChainState a = zero_chain_state(cfg);
    ChainState b = identical_start ? a : random_chain_state(cfg, init_rng);

    // Step both chains in lockstep with a shared noise stream.
    Rng noise = Rng(cfg.seed).fork(1);
    const GateMode mode = chain_gate_mode(ChainMode::raw);
    Tensor xa({1, cfg.p}), xb({1, cfg.p});
    auto advance = [&](ChainState& s, Tensor& x, const std::vector<double>& eps) {
        for (std::size_t k = 0; k < cfg.p; ++k) x[k] = cfg.clamp_input ? std::clamp(s.y[k], -1.0, 1.0) : s.y[k];
        StepResult step = slstm_step(model.cell, x, s.cell, mode);
        for (std::size_t k = 0; k < cfg.p; ++k) {
            double acc = model.b_e[k];
            for (std::size_t j = 0; j < cfg.q; ++j) acc += model.W_eh(k, j) * step.state.h[j];
            s.y[k] = std::tanh(acc) + eps[k];
        }
        s.cell = std::move(step.state);
    };
    std::vector<double> eps(cfg.p);
    for (std::size_t t = 1; t <= horizon; ++t) {
        for (auto& e : eps) e = cfg.noise_std * noise.normal();
        advance(a, xa, eps);
        advance(b, xb, eps);
        const double g = state_gap(a, b);
        if (!std::isfinite(g)) {
            report.overflowed = true;
            report.gap.push_back(g);
            break;
        }
        report.gap.push_back(g);
        if (!report.first_below && g < threshold) report.first_below = t;
    }

    std::vector<double> ts, logs;
    for (std::size_t t = burn_in; t < report.gap.size(); ++t) {
        const double g = report.gap[t];
        if (!(g > 1e-13) || !std::isfinite(g)) break;
        ts.push_back(static_cast<double>(t + 1));
        logs.push_back(std::log(g));
    }
    const LinearFit fit = fit_line(ts, logs);
    report.decay_rate = ts.size() >= 2 ? std::exp(fit.slope) : 0.0;
    report.r_squared = ts.size() >= 2 ? fit.r_squared : 0.0;
    return report;
}

RatioReport ratio_stability_report(const ChainTrace& trace) {
    RatioReport r;
    r.first_nonfinite = trace.first_nonfinite;
    for (std::size_t t = 0; t < trace.length(); ++t) {
        if (!trace.finite[t]) break;
        r.max_ratio_while_finite = std::max(r.max_ratio_while_finite, trace.ratio_norm[t]);
        r.max_c_norm_while_finite = std::max(r.max_c_norm_while_finite, trace.c_norm[t]);
        ++r.finite_steps;
    }
    return r;
}

nlohmann::json to_json(const ChainConfig& c) {
    return {{"p", c.p},
            {"q", c.q},
            {"heads", c.heads},
            {"noise_std", c.noise_std},
            {"horizon", c.horizon},
            {"seed", c.seed},
            {"forget_bias_offset", c.forget_bias_offset},
            {"mode", to_string(c.mode)},
            {"weight_scale", c.weight_scale},
            {"forget_weight_scale", c.forget_weight_scale},
            {"output_weight_scale", c.output_weight_scale},
            {"output_bias", c.output_bias},
            {"clamp_input", c.clamp_input},
            {"aligned_feedback", c.aligned_feedback}};
}

ChainConfig chain_config_from_json(const nlohmann::json& j, ChainConfig c) {
    static const std::set<std::string> allowed = {"p", "q", "heads", "noise_std", "horizon", "seed",
                                                  "forget_bias_offset", "mode", "weight_scale",
                                                  "forget_weight_scale", "output_weight_scale", "output_bias", "clamp_input",
                                                  "aligned_feedback"};
    if (!j.is_object()) throw std::invalid_argument("probe: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) throw std::invalid_argument("probe: unknown key '" + key + "'");
    }
    if (j.contains("p")) c.p = j["p"].get<std::size_t>();
    if (j.contains("q")) c.q = j["q"].get<std::size_t>();
    if (j.contains("heads")) c.heads = j["heads"].get<std::size_t>();
    if (j.contains("noise_std")) c.noise_std = j["noise_std"].get<double>();
    if (j.contains("horizon")) c.horizon = j["horizon"].get<std::size_t>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("forget_bias_offset")) c.forget_bias_offset = j["forget_bias_offset"].get<double>();
    if (j.contains("mode")) c.mode = parse_chain_mode(j["mode"]);
    if (j.contains("weight_scale")) c.weight_scale = j["weight_scale"].get<double>();
    if (j.contains("forget_weight_scale")) c.forget_weight_scale = j["forget_weight_scale"].get<double>();
    if (j.contains("output_weight_scale")) c.output_weight_scale = j["output_weight_scale"].get<double>();
    if (j.contains("output_bias")) c.output_bias = j["output_bias"].get<double>();
    if (j.contains("clamp_input")) c.clamp_input = j["clamp_input"].get<bool>();
    if (j.contains("aligned_feedback")) c.aligned_feedback = j["aligned_feedback"].get<bool>();
    c.validate();
    return c;
}

}  // namespace pslstm
