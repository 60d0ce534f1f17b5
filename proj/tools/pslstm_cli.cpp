// pslstm: train, evaluate, probe, sweep and ablate P-sLSTM forecasters.
//
// Settings resolve as: built-in defaults < --config JSON < environment
// (PSLSTM_OUTPUT_DIR, PSLSTM_THREADS) < command-line flags.

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "pslstm/experiment.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::string> output_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    bool force = false;

    std::optional<std::size_t> lookback, horizon, patch_size, patch_stride, embed_dim, blocks, heads;
    std::optional<std::string> channel_strategy, forget_activation;
    std::optional<bool> memory_mixing, stabilized;
    std::optional<double> dropout;

    std::optional<double> lr;
    std::optional<std::size_t> batch_size, epochs, patience, max_batches;

    std::optional<std::string> data_path, preset, synthetic_kind;
    std::optional<std::size_t> max_rows, data_length, stride;

    std::optional<double> forget_bias_offset, noise_std;
    std::optional<std::size_t> steps, hidden;
    std::optional<std::string> chain_mode;

    std::vector<std::size_t> sizes, lookbacks;
    std::vector<std::string> axes;
    std::optional<std::string> checkpoint;
    std::optional<double> epsilon, tolerance;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "JSON config file");
    cmd->add_option("-o,--output-dir", o.output_dir, "Base directory for run artifacts");
    cmd->add_option("--seed", o.seed, "Seed for model initialization and training");
    cmd->add_option("--threads", o.threads, "Worker threads for sweeps and ablations");
    cmd->add_flag("--force", o.force, "Write into <output-dir>/<command> without a timestamp suffix");
}

void add_model(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--lookback", o.lookback, "Look-back window L");
    cmd->add_option("--horizon", o.horizon, "Forecast horizon T");
    cmd->add_option("--patch-size", o.patch_size, "Patch length P");
    cmd->add_option("--patch-stride", o.patch_stride, "Patch stride S");
    cmd->add_option("--embed-dim", o.embed_dim, "Embedding width E");
    cmd->add_option("--blocks", o.blocks, "Number of sLSTM blocks");
    cmd->add_option("--heads", o.heads, "Heads per sLSTM block");
    cmd->add_option("--channel-strategy", o.channel_strategy, "ci or cm");
    cmd->add_option("--forget-activation", o.forget_activation, "exp or sigmoid");
    cmd->add_option("--memory-mixing", o.memory_mixing, "true or false");
    cmd->add_option("--stabilized", o.stabilized, "true or false");
    cmd->add_option("--dropout", o.dropout, "Dropout rate");
}

void add_train(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--lr", o.lr, "Learning rate");
    cmd->add_option("--batch-size", o.batch_size, "Mini-batch size");
    cmd->add_option("--epochs", o.epochs, "Maximum epochs");
    cmd->add_option("--patience", o.patience, "Early-stopping patience");
    cmd->add_option("--max-batches", o.max_batches, "Optimizer steps per epoch (0: all)");
}

void add_data(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--data", o.data_path, "CSV file (date column first); omit for synthetic data");
    cmd->add_option("--preset", o.preset, "custom|weather|electricity|solar|ettm1|ett|pems03");
    cmd->add_option("--max-rows", o.max_rows, "Read at most this many CSV rows");
    cmd->add_option("--synthetic", o.synthetic_kind, "sinusoid|ar1|long_memory_arfima_like|constant");
    cmd->add_option("--length", o.data_length, "Synthetic series length");
    cmd->add_option("--stride", o.stride, "Window start spacing");
}

void apply(const Overrides& o, pslstm::RunSpec& s) {
    using namespace pslstm;
    if (o.output_dir) s.output_dir = *o.output_dir;
    if (o.seed) s.seed = *o.seed;
    if (o.threads) s.threads = *o.threads;
    s.force = s.force || o.force;

    auto& m = s.model;
    if (o.lookback) m.lookback = *o.lookback;
    if (o.horizon) m.horizon = *o.horizon;
    if (o.patch_size) m.patch_size = *o.patch_size;
    if (o.patch_stride) m.patch_stride = *o.patch_stride;
    if (o.embed_dim) m.embed_dim = *o.embed_dim;
    if (o.blocks) m.n_blocks = *o.blocks;
    if (o.heads) m.n_heads = *o.heads;
    if (o.channel_strategy) m.channel_strategy = parse_channel_strategy(*o.channel_strategy);
    if (o.forget_activation) m.gate_mode.forget_activation = parse_gate_activation(*o.forget_activation);
    if (o.memory_mixing) m.gate_mode.memory_mixing = *o.memory_mixing;
    if (o.stabilized) m.gate_mode.stabilized = *o.stabilized;
    if (o.dropout) m.dropout = *o.dropout;

    auto& t = s.train;
    if (o.lr) t.learning_rate = *o.lr;
    if (o.batch_size) t.batch_size = *o.batch_size;
    if (o.epochs) t.max_epochs = *o.epochs;
    if (o.patience) t.patience = *o.patience;
    if (o.max_batches) t.max_batches_per_epoch = *o.max_batches;

    auto& d = s.data;
    if (o.data_path) {
        d.source = "csv";
        d.path = *o.data_path;
    }
    if (o.preset) d.preset = *o.preset;
    if (o.max_rows) d.max_rows = *o.max_rows;
    if (o.synthetic_kind) {
        d.source = "synthetic";
        d.kind = parse_synthetic_kind(*o.synthetic_kind);
    }
    if (o.data_length) d.synthetic.length = *o.data_length;
    if (o.stride) d.stride = *o.stride;

    auto& c = s.probe.chain;
    if (o.forget_bias_offset) c.forget_bias_offset = *o.forget_bias_offset;
    if (o.noise_std) c.noise_std = *o.noise_std;
    if (o.steps) c.horizon = *o.steps;
    if (o.hidden) c.q = *o.hidden;
    if (o.chain_mode) c.mode = parse_chain_mode(*o.chain_mode);
    if (o.seed) c.seed = *o.seed;

    if (!o.sizes.empty()) s.patch_sizes = o.sizes;
    if (!o.lookbacks.empty()) s.lookbacks = o.lookbacks;
    if (!o.axes.empty()) s.axes = o.axes;
    if (o.checkpoint) s.checkpoint = *o.checkpoint;
    if (o.epsilon) s.gradcheck_epsilon = *o.epsilon;
    if (o.tolerance) s.gradcheck_tolerance = *o.tolerance;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"P-sLSTM forecaster: training, evaluation, memory probes and sweeps"};
    app.set_version_flag("--version", pslstm::version_string());
    app.require_subcommand(1);
    Overrides o;

    auto* train = app.add_subcommand("train", "Train a model and write checkpoint, history and metrics");
    add_common(train, o);
    add_model(train, o);
    add_train(train, o);
    add_data(train, o);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the val and test splits");
    add_common(eval, o);
    add_data(eval, o);
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON written by train");

    auto* probe = app.add_subcommand("probe", "Simulate the sLSTM Markov chain and measure its memory");
    add_common(probe, o);
    probe->add_option("--forget-bias-offset", o.forget_bias_offset, "Negative: contraction; >= 0: amplification");
    probe->add_option("--noise-std", o.noise_std, "Std of the additive chain noise");
    probe->add_option("--steps", o.steps, "Chain horizon");
    probe->add_option("--hidden", o.hidden, "Hidden dimension q");
    probe->add_option("--mode", o.chain_mode, "raw or stabilized");

    auto* sweep_patch = app.add_subcommand("sweep-patch", "Train one model per patch size");
    add_common(sweep_patch, o);
    add_model(sweep_patch, o);
    add_train(sweep_patch, o);
    add_data(sweep_patch, o);
    sweep_patch->add_option("--sizes", o.sizes, "Patch sizes (stride = size)")->delimiter(',');

    auto* sweep_lookback = app.add_subcommand("sweep-lookback", "Train one model per look-back window");
    add_common(sweep_lookback, o);
    add_model(sweep_lookback, o);
    add_train(sweep_lookback, o);
    add_data(sweep_lookback, o);
    sweep_lookback->add_option("--lookbacks", o.lookbacks, "Look-back windows")->delimiter(',');

    auto* ablate = app.add_subcommand("ablate", "Train every combination of the chosen toggles");
    add_common(ablate, o);
    add_model(ablate, o);
    add_train(ablate, o);
    add_data(ablate, o);
    ablate->add_option("--axes", o.axes, "memory_mixing,channel_strategy,stabilized,forget_activation")
        ->delimiter(',');

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the model gradients");
    add_common(gradcheck, o);
    add_model(gradcheck, o);
    gradcheck->add_option("--epsilon", o.epsilon, "Central-difference step");
    gradcheck->add_option("--tolerance", o.tolerance, "Maximum relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : pslstm::kExitConfig;
    }

    pslstm::RunSpec spec;
    try {
        if (!o.config.empty()) spec = pslstm::load_run_spec(o.config);
        pslstm::apply_environment(spec);
        apply(o, spec);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return pslstm::kExitConfig;
    }
    spec.command = app.get_subcommands().front()->get_name();
    return pslstm::run_command(spec);
}
