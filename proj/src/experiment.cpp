#include "pslstm/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "pslstm/checkpoint.hpp"

#ifndef PSLSTM_VERSION
#define PSLSTM_VERSION "0.1.0-unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace pslstm {

std::string version_string() { return PSLSTM_VERSION; }

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& section) {
    if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) throw ConfigError(section + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j[key].get<T>();
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    reject_unknown(j,
                   {"learning_rate", "batch_size", "max_epochs", "patience", "clip_norm", "beta1", "beta2", "eps",
                    "max_batches_per_epoch"},
                   "train");
    read(j, "learning_rate", c.learning_rate);
    read(j, "batch_size", c.batch_size);
    read(j, "max_epochs", c.max_epochs);
    read(j, "patience", c.patience);
    read(j, "clip_norm", c.clip_norm);
    read(j, "beta1", c.beta1);
    read(j, "beta2", c.beta2);
    read(j, "eps", c.eps);
    read(j, "max_batches_per_epoch", c.max_batches_per_epoch);
    return c;
}

json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
            {"patience", c.patience},           {"clip_norm", c.clip_norm},   {"beta1", c.beta1},
            {"beta2", c.beta2},                 {"eps", c.eps},               {"max_batches_per_epoch", c.max_batches_per_epoch}};
}

DataSpec data_spec_from_json(const json& j, DataSpec d) {
    reject_unknown(j,
                   {"source", "path", "preset", "max_rows", "stride", "date_column", "kind", "length", "channels",
                    "period", "amplitude", "noise_std", "phi", "innovation_std", "d", "ma_terms", "value", "seed"},
                   "data");
    read(j, "source", d.source);
    if (j.contains("path")) d.path = j["path"].get<std::string>();
    read(j, "preset", d.preset);
    read(j, "max_rows", d.max_rows);
    read(j, "stride", d.stride);
    read(j, "date_column", d.date_column);
    if (j.contains("kind")) d.kind = parse_synthetic_kind(j["kind"]);
    auto& s = d.synthetic;
    read(j, "length", s.length);
    read(j, "channels", s.channels);
    read(j, "period", s.period);
    read(j, "amplitude", s.amplitude);
    read(j, "noise_std", s.noise_std);
    read(j, "phi", s.phi);
    read(j, "innovation_std", s.innovation_std);
    read(j, "d", s.d);
    read(j, "ma_terms", s.ma_terms);
    read(j, "value", s.value);
    read(j, "seed", d.seed);
    if (d.source != "synthetic" && d.source != "csv") {
        throw ConfigError("data: source must be 'synthetic' or 'csv', got '" + d.source + "'");
    }
    if (d.stride == 0) throw ConfigError("data: stride must be positive");
    return d;
}

json to_json(const DataSpec& d) {
    const auto& s = d.synthetic;
    return {{"source", d.source},       {"path", d.path.string()},   {"preset", d.preset},
            {"max_rows", d.max_rows},   {"stride", d.stride},        {"date_column", d.date_column},
            {"kind", to_string(d.kind)}, {"length", s.length},       {"channels", s.channels},
            {"period", s.period},       {"amplitude", s.amplitude},  {"noise_std", s.noise_std},
            {"phi", s.phi},             {"innovation_std", s.innovation_std}, {"d", s.d},
            {"ma_terms", s.ma_terms},   {"value", s.value},          {"seed", d.seed}};
}

ProbeSpec probe_spec_from_json(const json& j, ProbeSpec p) {
    reject_unknown(j,
                   {"p", "q", "heads", "noise_std", "horizon", "seed", "forget_bias_offset", "mode", "weight_scale",
                    "forget_weight_scale", "output_weight_scale", "output_bias", "clamp_input", "aligned_feedback", "max_lag", "burn_in", "coupling_horizon",
                    "contraction_threshold"},
                   "probe");
    json chain = json::object();
    for (const auto& [key, value] : j.items()) {
        if (key == "max_lag") p.max_lag = value.get<std::size_t>();
        else if (key == "burn_in") p.burn_in = value.get<std::size_t>();
        else if (key == "coupling_horizon") p.coupling_horizon = value.get<std::size_t>();
        else if (key == "contraction_threshold") p.contraction_threshold = value.get<double>();
        else chain[key] = value;
    }
    p.chain = chain_config_from_json(chain, p.chain);
    if (p.max_lag == 0) throw ConfigError("probe: max_lag must be positive");
    if (!(p.contraction_threshold > 0.0 && p.contraction_threshold < 1.0)) {
        throw ConfigError("probe: contraction_threshold must lie in (0, 1)");
    }
    return p;
}

json to_json(const ProbeSpec& p) {
    json j = to_json(p.chain);
    j["max_lag"] = p.max_lag;
    j["burn_in"] = p.burn_in;
    j["coupling_horizon"] = p.coupling_horizon;
    j["contraction_threshold"] = p.contraction_threshold;
    return j;
}

json metrics_to_json(const Metrics& m) {
    return {{"mse", m.mse}, {"mae", m.mae}, {"n_samples", m.n_samples}, {"n_elements", m.n_elements}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_run_info(const fs::path& dir, const RunSpec& spec, double seconds) {
    write_json(dir / "run_info.json", {{"command", spec.command},
                                       {"version", version_string()},
                                       {"seed", spec.seed},
                                       {"threads", spec.threads},
                                       {"seconds", seconds}});
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Runs `jobs` on up to `threads` workers; results land in job order.
template <typename Job>
void parallel_for(std::size_t count, std::size_t threads, Job job) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(10);
    out << v;
    return out.str();
}

}  // namespace

RunSpec run_spec_from_json(const json& j, RunSpec s) {
    reject_unknown(j,
                   {"command", "seed", "output_dir", "threads", "checkpoint", "model", "train", "data", "probe",
                    "sweep", "ablate", "gradcheck"},
                   "config");
    try {
        read(j, "command", s.command);
        read(j, "seed", s.seed);
        if (j.contains("output_dir")) s.output_dir = j["output_dir"].get<std::string>();
        read(j, "threads", s.threads);
        if (j.contains("checkpoint")) s.checkpoint = j["checkpoint"].get<std::string>();
        if (j.contains("model")) s.model = model_config_from_json(j["model"], s.model);
        if (j.contains("train")) s.train = train_config_from_json(j["train"], s.train);
        if (j.contains("data")) s.data = data_spec_from_json(j["data"], s.data);
        if (j.contains("probe")) s.probe = probe_spec_from_json(j["probe"], s.probe);
        if (j.contains("sweep")) {
            reject_unknown(j["sweep"], {"patch_sizes", "lookbacks"}, "sweep");
            read(j["sweep"], "patch_sizes", s.patch_sizes);
            read(j["sweep"], "lookbacks", s.lookbacks);
        }
        if (j.contains("ablate")) {
            reject_unknown(j["ablate"], {"axes"}, "ablate");
            read(j["ablate"], "axes", s.axes);
        }
        if (j.contains("gradcheck")) {
            reject_unknown(j["gradcheck"], {"tolerance", "epsilon", "batch"}, "gradcheck");
            read(j["gradcheck"], "tolerance", s.gradcheck_tolerance);
            read(j["gradcheck"], "epsilon", s.gradcheck_epsilon);
            read(j["gradcheck"], "batch", s.gradcheck_batch);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (s.threads == 0) throw ConfigError("config: threads must be positive");
    return s;
}

json to_json(const RunSpec& s) {
    return {{"command", s.command},
            {"seed", s.seed},
            {"output_dir", s.output_dir.string()},
            {"threads", s.threads},
            {"checkpoint", s.checkpoint.string()},
            {"model", to_json(s.model)},
            {"train", to_json(s.train)},
            {"data", to_json(s.data)},
            {"probe", to_json(s.probe)},
            {"sweep", {{"patch_sizes", s.patch_sizes}, {"lookbacks", s.lookbacks}}},
            {"ablate", {{"axes", s.axes}}},
            {"gradcheck",
             {{"tolerance", s.gradcheck_tolerance}, {"epsilon", s.gradcheck_epsilon}, {"batch", s.gradcheck_batch}}}};
}

RunSpec load_run_spec(const fs::path& path, RunSpec base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    return run_spec_from_json(j, std::move(base));
}

void apply_environment(RunSpec& spec) {
    if (const char* dir = std::getenv("PSLSTM_OUTPUT_DIR"); dir != nullptr && *dir != '\0') spec.output_dir = dir;
    if (const char* threads = std::getenv("PSLSTM_THREADS"); threads != nullptr && *threads != '\0') {
        try {
            const long n = std::stol(threads);
            if (n <= 0) throw std::invalid_argument("non-positive");
            spec.threads = static_cast<std::size_t>(n);
        } catch (const std::exception&) {
            throw ConfigError(std::string("PSLSTM_THREADS must be a positive integer, got '") + threads + "'");
        }
    }
}

WindowedDataset load_dataset(const DataSpec& data, const WindowOptions& window) {
    RawSeries raw;
    DatasetPreset preset;
    try {
        preset = dataset_preset(data.preset);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (data.source == "csv") {
        if (data.path.empty()) throw ConfigError("data: source 'csv' needs a path");
        CsvSchema schema;
        schema.date_column = data.date_column;
        schema.max_rows = data.max_rows;
        raw = load_csv(data.path, schema);
    } else {
        raw = make_synthetic(data.kind, data.synthetic, data.seed);
    }
    return split_and_standardize(raw, preset, window);
}

RunResult train_and_evaluate(ModelConfig model_config, TrainConfig train_config, const WindowedDataset& data,
                             std::uint64_t seed, PSLSTMModel* out_model) {
    model_config.n_channels = data.channels();
    model_config.lookback = data.lookback;
    model_config.horizon = data.horizon;
    train_config.seed = seed;
    PSLSTMModel model(model_config, seed);
    RunResult r;
    r.training = train(model, data, train_config);
    r.train = evaluate(model, data, Split::train);
    r.val = evaluate(model, data, Split::val);
    r.test = evaluate(model, data, Split::test);
    r.test_raw = evaluate(model, data, Split::test, MetricScale::raw);
    r.persistence = evaluate_baseline(data, Split::test, Baseline::persistence);
    r.train_mean = evaluate_baseline(data, Split::test, Baseline::train_mean);
    if (out_model != nullptr) *out_model = std::move(model);
    return r;
}

json metrics_json(const RunResult& r) {
    return {{"train", metrics_to_json(r.train)},
            {"val", metrics_to_json(r.val)},
            {"test", metrics_to_json(r.test)},
            {"test_raw_scale", metrics_to_json(r.test_raw)},
            {"baselines", {{"persistence", metrics_to_json(r.persistence)}, {"train_mean", metrics_to_json(r.train_mean)}}},
            {"best_epoch", r.training.best_epoch},
            {"best_val_mse", r.training.best_val_mse},
            {"epochs_run", r.training.history.size()},
            {"optimizer_steps", r.training.steps},
            {"diverged", r.training.diverged},
            {"diagnostic", r.training.diagnostic}};
}

fs::path make_run_dir(const fs::path& base, const std::string& name, bool force) {
    fs::path dir;
    if (force) {
        dir = base / name;
    } else {
        const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
        dir = base / (name + "-" + stamp);
        for (int k = 1; fs::exists(dir); ++k) dir = base / (name + "-" + stamp + "-" + std::to_string(k));
    }
    fs::create_directories(dir);
    return dir;
}

namespace {

WindowOptions window_for(const RunSpec& spec, const ModelConfig& model) {
    return {model.lookback, model.horizon, spec.data.stride};
}

void write_common(const fs::path& dir, const RunSpec& spec) { write_json(dir / "config.json", to_json(spec)); }

}  // namespace

CommandOutcome run_train(const RunSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();
    spec.model.validate();
    spec.train.validate();
    const WindowedDataset data = load_dataset(spec.data, window_for(spec, spec.model));
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';

    CommandOutcome out;
    out.run_dir = make_run_dir(spec.output_dir, "train", spec.force);
    write_common(out.run_dir, spec);
    PSLSTMModel model(spec.model, spec.seed);
    const RunResult r = train_and_evaluate(spec.model, spec.train, data, spec.seed, &model);
    save_checkpoint(model, out.run_dir / "checkpoint.json");
    write_text(out.run_dir / "history.csv", history_csv(r.training.history));
    write_json(out.run_dir / "data_digest.json", data.digest());
    out.summary = metrics_json(r);
    write_json(out.run_dir / "metrics.json", out.summary);
    write_run_info(out.run_dir, spec, elapsed(t0));
    if (r.training.diverged) {
        std::cerr << "train: " << r.training.diagnostic << " (best parameters restored and saved)\n";
        out.exit_code = kExitDivergence;
    }
    return out;
}

CommandOutcome run_eval(const RunSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();
    if (spec.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
    PSLSTMModel model = [&] {
        try {
            return load_checkpoint(spec.checkpoint);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("eval: ") + e.what());
        }
    }();
    const WindowedDataset data = load_dataset(spec.data, window_for(spec, model.config()));
    if (data.channels() != model.config().n_channels) {
        throw DataError("eval: dataset has " + std::to_string(data.channels()) + " channels, checkpoint expects " +
                        std::to_string(model.config().n_channels));
    }
    CommandOutcome out;
    out.run_dir = make_run_dir(spec.output_dir, "eval", spec.force);
    write_common(out.run_dir, spec);
    out.summary = {{"val", metrics_to_json(evaluate(model, data, Split::val))},
                   {"test", metrics_to_json(evaluate(model, data, Split::test))},
                   {"test_raw_scale", metrics_to_json(evaluate(model, data, Split::test, MetricScale::raw))},
                   {"baselines",
                    {{"persistence", metrics_to_json(evaluate_baseline(data, Split::test, Baseline::persistence))},
                     {"train_mean", metrics_to_json(evaluate_baseline(data, Split::test, Baseline::train_mean))}}}};
    write_json(out.run_dir / "metrics.json", out.summary);
    write_run_info(out.run_dir, spec, elapsed(t0));
    return out;
}

bool ProbeResult::passed() const {
    return std::all_of(invariants.begin(), invariants.end(), [](const auto& kv) { return kv.second; });
}

ProbeResult probe_chain(const ProbeSpec& spec) {
    ProbeResult r;
    ChainConfig raw_cfg = spec.chain;
    raw_cfg.mode = ChainMode::raw;
    const ChainModel model = make_chain(raw_cfg);
    r.contraction = check_contraction(model.cell, spec.contraction_threshold);

    const ChainTrace trace = simulate_chain(model, raw_cfg);
    r.ratio = ratio_stability_report(trace);
    if (!trace.first_nonfinite && spec.burn_in < trace.length()) {
        try {
            r.memory = memory_report(trace, spec.max_lag, spec.burn_in);
            r.memory_ran = true;
        } catch (const std::exception& e) {
            std::cerr << "probe: memory report skipped: " << e.what() << '\n';
        }
    }
    r.coupling = two_trajectory_coupling(raw_cfg, spec.coupling_horizon);

    ChainConfig stab_cfg = spec.chain;
    stab_cfg.mode = ChainMode::stabilized;
    try {
        const ChainTrace stab = simulate_chain(model, stab_cfg);
        r.stabilized_finite = stab.h_norm.size() == stab_cfg.horizon &&
                              std::all_of(stab.h_norm.begin(), stab.h_norm.end(), [](double v) { return std::isfinite(v); });
    } catch (const NumericError&) {
        r.stabilized_finite = false;
    }

    r.invariants.emplace_back("stabilized_h_finite", r.stabilized_finite);
    if (r.contraction.satisfied) {
        bool memory_ok = r.memory_ran;
        if (memory_ok) {
            for (std::size_t d = 0; d < r.memory.rho_hat.size(); ++d) {
                memory_ok = memory_ok && r.memory.rho_hat[d] < 1.0 && r.memory.r_squared[d] >= 0.9;
            }
        }
        r.invariants.emplace_back("short_memory_fit", memory_ok);
        r.invariants.emplace_back("coupling_below_threshold",
                                  r.coupling.first_below.has_value() && *r.coupling.first_below <= spec.coupling_horizon);
        r.invariants.emplace_back("ratio_envelope", r.ratio.max_ratio_while_finite <= 2.0);
    } else if (spec.chain.forget_bias_offset >= 0.0) {
        r.invariants.emplace_back("ratio_bounded_while_finite", r.ratio.max_ratio_while_finite < 10.0);
    }
    return r;
}

json to_json(const ProbeResult& r, const ProbeSpec& spec) {
    json j;
    j["config"] = to_json(spec);
    j["contraction"] = {{"analytic_sup", r.contraction.analytic_sup},
                        {"grid_sup", r.contraction.grid_sup},
                        {"threshold", r.contraction.threshold},
                        {"satisfied", r.contraction.satisfied},
                        {"grid_points", r.contraction.grid_points}};
    if (r.memory_ran) {
        j["memory"] = {{"rho_hat", r.memory.rho_hat},
                       {"r_squared", r.memory.r_squared},
                       {"fit_points", r.memory.fit_points},
                       {"envelope_rho_hat", r.memory.envelope_rho_hat},
                       {"envelope_r_squared", r.memory.envelope_r_squared},
                       {"contraction_bound", r.memory.contraction_bound}};
    } else {
        j["memory"] = nullptr;
    }
    j["coupling"] = {{"first_below", r.coupling.first_below ? json(*r.coupling.first_below) : json(nullptr)},
                     {"threshold", r.coupling.threshold},
                     {"decay_rate", r.coupling.decay_rate},
                     {"r_squared", r.coupling.r_squared},
                     {"overflowed", r.coupling.overflowed},
                     {"final_gap", r.coupling.gap.empty() ? 0.0 : r.coupling.gap.back()}};
    j["ratio"] = {{"max_ratio_while_finite", r.ratio.max_ratio_while_finite},
                  {"max_c_norm_while_finite", r.ratio.max_c_norm_while_finite},
                  {"finite_steps", r.ratio.finite_steps},
                  {"overflow_step", r.ratio.first_nonfinite ? json(*r.ratio.first_nonfinite) : json(nullptr)}};
    j["stabilized_h_finite"] = r.stabilized_finite;
    json inv = json::object();
    for (const auto& [name, ok] : r.invariants) inv[name] = ok;
    j["invariants"] = inv;
    j["passed"] = r.passed();
    return j;
}

CommandOutcome run_probe(const RunSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();
    spec.probe.chain.validate();
    const ProbeResult r = probe_chain(spec.probe);
    CommandOutcome out;
    out.run_dir = make_run_dir(spec.output_dir, "probe", spec.force);
    write_common(out.run_dir, spec);
    out.summary = to_json(r, spec.probe);
    write_json(out.run_dir / "probe.json", out.summary);
    if (r.memory_ran) {
        std::ostringstream acf;
        acf << "lag";
        for (std::size_t d = 0; d < r.memory.acf.size(); ++d) acf << ",acf_y" << d;
        acf << '\n';
        for (std::size_t k = 0; k <= r.memory.max_lag; ++k) {
            acf << k;
            for (const auto& a : r.memory.acf) acf << ',' << fmt(a[k]);
            acf << '\n';
        }
        write_text(out.run_dir / "acf.csv", acf.str());
    }
    std::ostringstream gap;
    gap << "step,gap\n";
    for (std::size_t t = 0; t < r.coupling.gap.size(); ++t) gap << t + 1 << ',' << fmt(r.coupling.gap[t]) << '\n';
    write_text(out.run_dir / "coupling.csv", gap.str());
    write_run_info(out.run_dir, spec, elapsed(t0));
    if (!r.passed()) {
        for (const auto& [name, ok] : r.invariants) {
            if (!ok) std::cerr << "probe: invariant failed: " << name << '\n';
        }
        out.exit_code = kExitProbe;
    }
    return out;
}

namespace {

struct SweepRow {
    std::size_t value = 0;
    RunResult result;
};

std::vector<std::size_t> dedupe_sorted(std::vector<std::size_t> values, const std::string& what) {
    if (values.empty()) throw ConfigError(what + ": list is empty");
    std::sort(values.begin(), values.end());
    const auto last = std::unique(values.begin(), values.end());
    if (last != values.end()) {
        std::cerr << "warning: " << what << ": duplicate values removed\n";
        values.erase(last, values.end());
    }
    return values;
}

CommandOutcome run_sweep(const RunSpec& spec, const std::string& name, const std::vector<std::size_t>& values,
                         const std::function<ModelConfig(std::size_t)>& configure) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ModelConfig> configs;
    for (std::size_t v : values) {
        ModelConfig c = configure(v);
        try {
            c.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(name + " value " + std::to_string(v) + ": " + e.what());
        }
        configs.push_back(c);
    }
    CommandOutcome out;
    out.run_dir = make_run_dir(spec.output_dir, name, spec.force);
    write_common(out.run_dir, spec);

    std::vector<SweepRow> rows(values.size());
    parallel_for(values.size(), spec.threads, [&](std::size_t i) {
        const WindowedDataset data = load_dataset(spec.data, window_for(spec, configs[i]));
        rows[i].value = values[i];
        rows[i].result = train_and_evaluate(configs[i], spec.train, data, spec.seed);
        const fs::path sub = out.run_dir / (name + "_" + std::to_string(values[i]));
        fs::create_directories(sub);
        write_json(sub / "metrics.json", metrics_json(rows[i].result));
        write_text(sub / "history.csv", history_csv(rows[i].result.training.history));
    });

    const std::string column = name == "sweep-patch" ? "patch_size" : "lookback";
    std::ostringstream table;
    table << column << ",test_mse,test_mae,val_mse,train_mse,best_epoch\n";
    json summary = json::array();
    bool diverged = false;
    for (const auto& row : rows) {
        const auto& r = row.result;
        table << row.value << ',' << fmt(r.test.mse) << ',' << fmt(r.test.mae) << ',' << fmt(r.val.mse) << ','
              << fmt(r.train.mse) << ',' << r.training.best_epoch << '\n';
        summary.push_back({{column, row.value}, {"metrics", metrics_json(r)}});
        diverged = diverged || r.training.diverged;
    }
    write_text(out.run_dir / (name + ".csv"), table.str());
    out.summary = summary;
    write_json(out.run_dir / "metrics.json", summary);
    write_run_info(out.run_dir, spec, elapsed(t0));
    if (diverged) out.exit_code = kExitDivergence;
    return out;
}

}  // namespace

CommandOutcome run_sweep_patch(const RunSpec& spec) {
    const auto sizes = dedupe_sorted(spec.patch_sizes, "sweep-patch");
    for (std::size_t p : sizes) {
        if (p == 0 || p > spec.model.lookback) {
            throw ConfigError("sweep-patch: patch size " + std::to_string(p) + " must lie in [1, lookback=" +
                              std::to_string(spec.model.lookback) + "]");
        }
    }
    return run_sweep(spec, "sweep-patch", sizes, [&](std::size_t p) {
        ModelConfig c = spec.model;
        c.patch_size = p;
        c.patch_stride = p;
        return c;
    });
}

CommandOutcome run_sweep_lookback(const RunSpec& spec) {
    const auto lookbacks = dedupe_sorted(spec.lookbacks, "sweep-lookback");
    for (std::size_t L : lookbacks) {
        if (L < spec.model.patch_size) {
            throw ConfigError("sweep-lookback: lookback " + std::to_string(L) + " is shorter than patch size " +
                              std::to_string(spec.model.patch_size));
        }
    }
    return run_sweep(spec, "sweep-lookback", lookbacks, [&](std::size_t L) {
        ModelConfig c = spec.model;
        c.lookback = L;
        return c;
    });
}

CommandOutcome run_ablate(const RunSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();
    static const std::vector<std::string> known = {"memory_mixing", "channel_strategy", "stabilized",
                                                   "forget_activation"};
    if (spec.axes.empty()) throw ConfigError("ablate: no axes given");
    std::vector<std::string> axes;
    for (const auto& a : spec.axes) {
        if (std::find(known.begin(), known.end(), a) == known.end()) {
            throw ConfigError("ablate: unknown axis '" + a + "'");
        }
        if (std::find(axes.begin(), axes.end(), a) == axes.end()) axes.push_back(a);
    }

    struct Cell {
        std::map<std::string, std::string> labels;
        ModelConfig config;
        RunResult result;
    };
    std::vector<Cell> cells(1, Cell{{}, spec.model, {}});
    for (const auto& axis : axes) {
        std::vector<Cell> next;
        for (const auto& cell : cells) {
            for (int v = 0; v < 2; ++v) {
                Cell c = cell;
                auto& g = c.config.gate_mode;
                if (axis == "memory_mixing") {
                    g.memory_mixing = v == 0;
                    c.labels[axis] = g.memory_mixing ? "on" : "off";
                } else if (axis == "channel_strategy") {
                    c.config.channel_strategy = v == 0 ? ChannelStrategy::independent : ChannelStrategy::mixed;
                    c.labels[axis] = to_string(c.config.channel_strategy);
                } else if (axis == "stabilized") {
                    g.stabilized = v == 0;
                    c.labels[axis] = g.stabilized ? "on" : "off";
                } else {
                    g.forget_activation = v == 0 ? GateActivation::exponential : GateActivation::sigmoid;
                    c.labels[axis] = to_string(g.forget_activation);
                }
                next.push_back(std::move(c));
            }
        }
        cells = std::move(next);
    }

    const WindowedDataset data = load_dataset(spec.data, window_for(spec, spec.model));
    for (auto& cell : cells) cell.config.n_channels = data.channels();
    for (const auto& cell : cells) {
        try {
            cell.config.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("ablate: ") + e.what());
        }
    }
    CommandOutcome out;
    out.run_dir = make_run_dir(spec.output_dir, "ablate", spec.force);
    write_common(out.run_dir, spec);
    parallel_for(cells.size(), spec.threads, [&](std::size_t i) {
        cells[i].result = train_and_evaluate(cells[i].config, spec.train, data, spec.seed);
    });

    std::ostringstream table;
    for (const auto& a : axes) table << a << ',';
    table << "train_mse,val_mse,test_mse,test_mae,diverged\n";
    json summary = json::array();
    bool diverged = false;
    for (const auto& cell : cells) {
        const auto& r = cell.result;
        for (const auto& a : axes) table << cell.labels.at(a) << ',';
        table << fmt(r.train.mse) << ',' << fmt(r.val.mse) << ',' << fmt(r.test.mse) << ',' << fmt(r.test.mae) << ','
              << (r.training.diverged ? "true" : "false") << '\n';
        summary.push_back({{"cell", cell.labels}, {"metrics", metrics_json(r)}});
        diverged = diverged || r.training.diverged;
    }
    write_text(out.run_dir / "ablate.csv", table.str());
    out.summary = summary;
    write_json(out.run_dir / "metrics.json", summary);
    write_run_info(out.run_dir, spec, elapsed(t0));
    if (diverged) out.exit_code = kExitDivergence;
    return out;
}

CommandOutcome run_gradcheck(const RunSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();
    spec.model.validate();
    if (!(spec.gradcheck_epsilon >= 1e-7 && spec.gradcheck_epsilon <= 1e-3)) {
        throw ConfigError("gradcheck: epsilon must lie in [1e-7, 1e-3]");
    }
    const GradCheckResult g = grad_check_model(spec.model, spec.gradcheck_batch, spec.seed, spec.gradcheck_epsilon);
    CommandOutcome out;
    out.run_dir = make_run_dir(spec.output_dir, "gradcheck", spec.force);
    write_common(out.run_dir, spec);
    out.summary = {{"max_relative_error", g.max_relative_error},
                   {"worst_param", g.worst_param},
                   {"worst_index", g.worst_index},
                   {"analytic", g.analytic},
                   {"numeric", g.numeric},
                   {"coordinates", g.coordinates},
                   {"tolerance", spec.gradcheck_tolerance},
                   {"passed", g.max_relative_error < spec.gradcheck_tolerance}};
    write_json(out.run_dir / "gradcheck.json", out.summary);
    write_run_info(out.run_dir, spec, elapsed(t0));
    if (!(g.max_relative_error < spec.gradcheck_tolerance)) {
        std::cerr << "gradcheck: max relative error " << g.max_relative_error << " at " << g.worst_param << "["
                  << g.worst_index << "] exceeds " << spec.gradcheck_tolerance << '\n';
        out.exit_code = kExitDivergence;
    }
    return out;
}

int run_command(const RunSpec& spec) {
    const std::string stage = spec.command.empty() ? "run" : spec.command;
    try {
        CommandOutcome out;
        if (spec.command == "train") out = run_train(spec);
        else if (spec.command == "eval") out = run_eval(spec);
        else if (spec.command == "probe") out = run_probe(spec);
        else if (spec.command == "sweep-patch") out = run_sweep_patch(spec);
        else if (spec.command == "sweep-lookback") out = run_sweep_lookback(spec);
        else if (spec.command == "ablate") out = run_ablate(spec);
        else if (spec.command == "gradcheck") out = run_gradcheck(spec);
        else throw ConfigError("unknown command '" + spec.command + "'");
        std::cout << out.run_dir.string() << '\n';
        return out.exit_code;
    } catch (const ConfigError& e) {
        std::cerr << stage << ": config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << stage << ": data error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << stage << ": numerical error: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const DivergenceError& e) {
        std::cerr << stage << ": divergence: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const std::invalid_argument& e) {
        std::cerr << stage << ": config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << stage << ": error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace pslstm
