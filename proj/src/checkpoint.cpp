#include "pslstm/checkpoint.hpp"

#include <fstream>
#include <set>

namespace pslstm {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
    }
}

}  // namespace

json to_json(const GateMode& mode) {
    return {{"forget_activation", to_string(mode.forget_activation)},
            {"input_activation", to_string(mode.input_activation)},
            {"stabilized", mode.stabilized},
            {"memory_mixing", mode.memory_mixing},
            {"hidden_map", mode.hidden_map == HiddenMap::normalized ? "normalized" : "tanh_cell"}};
}

GateMode gate_mode_from_json(const json& j) {
    reject_unknown(j, {"forget_activation", "input_activation", "stabilized", "memory_mixing", "hidden_map"},
                   "gate_mode");
    GateMode m;
    if (j.contains("forget_activation")) m.forget_activation = parse_gate_activation(j["forget_activation"]);
    if (j.contains("input_activation")) m.input_activation = parse_gate_activation(j["input_activation"]);
    if (j.contains("stabilized")) m.stabilized = j["stabilized"].get<bool>();
    if (j.contains("memory_mixing")) m.memory_mixing = j["memory_mixing"].get<bool>();
    if (j.contains("hidden_map")) {
        const std::string s = j["hidden_map"];
        if (s == "normalized") m.hidden_map = HiddenMap::normalized;
        else if (s == "tanh_cell") m.hidden_map = HiddenMap::tanh_cell;
        else throw std::invalid_argument("gate_mode: unknown hidden_map '" + s + "'");
    }
    return m;
}

json to_json(const ModelConfig& c) {
    return {{"lookback", c.lookback},
            {"horizon", c.horizon},
            {"n_channels", c.n_channels},
            {"patch_size", c.patch_size},
            {"patch_stride", c.patch_stride},
            {"embed_dim", c.embed_dim},
            {"n_blocks", c.n_blocks},
            {"n_heads", c.n_heads},
            {"gate_mode", to_json(c.gate_mode)},
            {"channel_strategy", to_string(c.channel_strategy)},
            {"dropout", c.dropout},
            {"instance_norm", c.instance_norm},
            {"forget_bias_init", c.forget_bias_init}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
    reject_unknown(j,
                   {"lookback", "horizon", "n_channels", "patch_size", "patch_stride", "embed_dim", "n_blocks",
                    "n_heads", "gate_mode", "channel_strategy", "dropout", "instance_norm", "forget_bias_init"},
                   "model");
    auto get_size = [&](const char* key, std::size_t& into) {
        if (!j.contains(key)) return;
        const auto v = j[key].get<long long>();
        if (v < 0) throw std::invalid_argument(std::string("model: ") + key + " must be non-negative");
        into = static_cast<std::size_t>(v);
    };
    get_size("lookback", c.lookback);
    get_size("horizon", c.horizon);
    get_size("n_channels", c.n_channels);
    get_size("patch_size", c.patch_size);
    get_size("patch_stride", c.patch_stride);
    get_size("embed_dim", c.embed_dim);
    get_size("n_blocks", c.n_blocks);
    get_size("n_heads", c.n_heads);
    if (j.contains("gate_mode")) c.gate_mode = gate_mode_from_json(j["gate_mode"]);
    if (j.contains("channel_strategy")) c.channel_strategy = parse_channel_strategy(j["channel_strategy"]);
    if (j.contains("dropout")) c.dropout = j["dropout"].get<double>();
    if (j.contains("instance_norm")) c.instance_norm = j["instance_norm"].get<bool>();
    if (j.contains("forget_bias_init")) c.forget_bias_init = j["forget_bias_init"].get<double>();
    return c;
}

json checkpoint_to_json(PSLSTMModel& model) {
    json params = json::array();
    for (const auto& p : model.parameters()) {
        params.push_back({{"name", p.name},
                          {"shape", p.value->shape()},
                          {"data", std::vector<double>(p.value->data().begin(), p.value->data().end())}});
    }
    return {{"format", "pslstm-checkpoint"},
            {"version", kCheckpointVersion},
            {"seed", model.seed()},
            {"config", to_json(model.config())},
            {"parameters", params}};
}

PSLSTMModel checkpoint_from_json(const json& j) {
    if (!j.contains("version")) throw std::invalid_argument("checkpoint: missing version field");
    if (j.value("format", "") != "pslstm-checkpoint") throw std::invalid_argument("checkpoint: unknown format");
    const int version = j["version"].get<int>();
    if (version != kCheckpointVersion) {
        throw std::invalid_argument("checkpoint: unsupported version " + std::to_string(version));
    }
    PSLSTMModel model(model_config_from_json(j.at("config")), j.value("seed", std::uint64_t{0}));
    auto params = model.parameters();
    const auto& stored = j.at("parameters");
    if (stored.size() != params.size()) {
        throw std::invalid_argument("checkpoint: expected " + std::to_string(params.size()) + " tensors, found " +
                                    std::to_string(stored.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = stored[i];
        if (entry.at("name").get<std::string>() != params[i].name) {
            throw std::invalid_argument("checkpoint: tensor " + std::to_string(i) + " is '" +
                                        entry.at("name").get<std::string>() + "', expected '" + params[i].name + "'");
        }
        const Shape shape = entry.at("shape").get<Shape>();
        if (shape != params[i].value->shape()) {
            throw std::invalid_argument("checkpoint: shape mismatch for " + params[i].name);
        }
        *params[i].value = Tensor(shape, entry.at("data").get<std::vector<double>>());
    }
    return model;
}

void save_checkpoint(PSLSTMModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(model).dump() << '\n';
}

PSLSTMModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
    return checkpoint_from_json(json::parse(in));
}

}  // namespace pslstm
