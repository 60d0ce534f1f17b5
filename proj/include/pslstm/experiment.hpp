#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pslstm/data.hpp"
#include "pslstm/model.hpp"
#include "pslstm/probe.hpp"
#include "pslstm/train.hpp"

namespace pslstm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;
inline constexpr int kExitProbe = 5;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Version string compiled in from git describe.
std::string version_string();

struct DataSpec {
    std::string source = "synthetic";  // synthetic | csv
    std::filesystem::path path;
    std::string preset = "custom";
    std::size_t max_rows = 0;
    std::size_t stride = 1;
    bool date_column = true;
    SyntheticKind kind = SyntheticKind::sinusoid;
    SyntheticParams synthetic{.length = 4000, .channels = 1, .noise_std = 0.1};
    std::uint64_t seed = 7;
};

struct ProbeSpec {
    ChainConfig chain;
    std::size_t max_lag = 20;
    std::size_t burn_in = 100;
    std::size_t coupling_horizon = 200;
    double contraction_threshold = 0.9;
};

struct RunSpec {
    std::string command;
    ModelConfig model;
    TrainConfig train;
    DataSpec data;
    ProbeSpec probe;
    std::uint64_t seed = 2024;  // model initialization and training streams
    std::filesystem::path output_dir = "runs";
    bool force = false;
    std::size_t threads = 1;
    std::vector<std::size_t> patch_sizes{8, 16, 32};
    std::vector<std::size_t> lookbacks{48, 96, 192};
    std::vector<std::string> axes{"memory_mixing"};
    std::filesystem::path checkpoint;
    double gradcheck_tolerance = 1e-4;
    double gradcheck_epsilon = 1e-5;
    std::size_t gradcheck_batch = 2;
};

/// Top-level keys: command (informational; the CLI subcommand wins), seed, output_dir, threads, model, train, data, probe,
/// sweep, ablate, gradcheck. Unknown keys at any level raise ConfigError.
RunSpec run_spec_from_json(const nlohmann::json& j, RunSpec base = {});
nlohmann::json to_json(const RunSpec& spec);
RunSpec load_run_spec(const std::filesystem::path& path, RunSpec base = {});

/// Applies PSLSTM_OUTPUT_DIR and PSLSTM_THREADS when set.
void apply_environment(RunSpec& spec);

WindowedDataset load_dataset(const DataSpec& data, const WindowOptions& window);

struct RunResult {
    Metrics train, val, test;
    Metrics test_raw;
    Metrics persistence, train_mean;  // test split, normalized scale
    TrainResult training;
};

/// Builds a model from `model` (channel count taken from the data), trains it
/// with seed `seed` and evaluates every split.
RunResult train_and_evaluate(ModelConfig model, TrainConfig train, const WindowedDataset& data, std::uint64_t seed,
                             PSLSTMModel* out_model = nullptr);

/// Deterministic metrics document (no timings).
nlohmann::json metrics_json(const RunResult& result);

struct CommandOutcome {
    int exit_code = kExitOk;
    std::filesystem::path run_dir;
    nlohmann::json summary;
};

/// Creates `<base>/<name>` when `force`, otherwise a timestamp-suffixed
/// directory that does not exist yet.
std::filesystem::path make_run_dir(const std::filesystem::path& base, const std::string& name, bool force);

CommandOutcome run_train(const RunSpec& spec);
CommandOutcome run_eval(const RunSpec& spec);
CommandOutcome run_probe(const RunSpec& spec);
CommandOutcome run_sweep_patch(const RunSpec& spec);
CommandOutcome run_sweep_lookback(const RunSpec& spec);
CommandOutcome run_ablate(const RunSpec& spec);
CommandOutcome run_gradcheck(const RunSpec& spec);

/// Dispatches on spec.command and maps exceptions to exit codes, printing a
/// stage-named diagnostic to stderr.
int run_command(const RunSpec& spec);

struct ProbeResult {
    ContractionCheck contraction;
    bool memory_ran = false;
    MemoryReport memory;
    CouplingReport coupling;
    RatioReport ratio;
    bool stabilized_finite = true;
    std::vector<std::pair<std::string, bool>> invariants;
    bool passed() const;
};

/// Runs every probe for one chain configuration and evaluates the invariants
/// that apply to its regime.
ProbeResult probe_chain(const ProbeSpec& spec);
nlohmann::json to_json(const ProbeResult& r, const ProbeSpec& spec);

}  // namespace pslstm
