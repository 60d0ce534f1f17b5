#pragma once

#include <filesystem>

#include "json.hpp"
#include "pslstm/model.hpp"

namespace pslstm {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const GateMode& mode);
GateMode gate_mode_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ModelConfig& config);
/// Unknown keys are rejected; missing keys keep `base` values.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// Self-describing container: format tag, version, config, seed and every named
/// parameter tensor with its shape.
nlohmann::json checkpoint_to_json(PSLSTMModel& model);
PSLSTMModel checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(PSLSTMModel& model, const std::filesystem::path& path);
PSLSTMModel load_checkpoint(const std::filesystem::path& path);

}  // namespace pslstm
