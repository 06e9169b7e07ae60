#pragma once

#include "json.hpp"
#include "voplab/corpus/corpus.hpp"

namespace voplab {

nlohmann::json to_json(const CorpusConfig& config);
// Missing keys keep `base`; unknown keys throw ConfigError.
CorpusConfig corpus_config_from_json(const nlohmann::json& j, CorpusConfig base = {});

}  // namespace voplab
