#pragma once

#include "json.hpp"
#include "voplab/model/spec.hpp"
#include "voplab/prompts/prompt_spec.hpp"
#include "voplab/protocols/protocol.hpp"
#include "voplab/train/trainer.hpp"

namespace voplab {

// Readers start from `base`, overwrite present keys and throw ConfigError on
// unknown keys or wrong types.
nlohmann::json to_json(const ModelSpec& m);
ModelSpec model_spec_from_json(const nlohmann::json& j, ModelSpec base);

nlohmann::json to_json(const PromptSpec& p);
PromptSpec prompt_spec_from_json(const nlohmann::json& j, PromptSpec base);

nlohmann::json to_json(const Protocol& p);
Protocol protocol_from_json(const nlohmann::json& j, Protocol base = {});

nlohmann::json to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

}  // namespace voplab
