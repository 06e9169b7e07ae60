#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "voplab/corpus/corpus.hpp"
#include "voplab/model/spec.hpp"
#include "voplab/prompts/prompt_spec.hpp"
#include "voplab/protocols/protocol.hpp"
#include "voplab/train/trainer.hpp"

namespace voplab {

enum class AblationAxis { depth, length, video_len, k_split, cmm };

std::string_view to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(std::string_view name);

struct AblationSpec {
    AblationAxis axis = AblationAxis::depth;
    // depth: [first, last] pairs; length, video_len, k_split: integers; cmm: names.
    nlohmann::json values = nlohmann::json::array();
};

// One structured-text file describing a whole experiment. Relative paths are
// resolved against the directory holding the config file.
struct ExperimentConfig {
    ModelSpec model = ModelSpec::toy();
    PromptSpec prompts;
    Protocol protocol;
    TrainConfig train;
    CorpusConfig corpus;
    std::filesystem::path dataset;   // generate writes here, train reads here
    std::filesystem::path output;    // run directory
    std::filesystem::path backbone;  // optional checkpoint providing backbone weights
    std::vector<std::string> count_protocols;
    std::optional<AblationSpec> ablate;

    // Throws ConfigError naming the first violated constraint.
    void validate() const;
};

// Missing sections take defaults derived from the model and protocol; the
// prompt mode follows the protocol unless both are given and disagree.
ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& c);

// Prompt spec for running `protocol` with the lengths and depths of `base`.
PromptSpec prompts_for(const Protocol& protocol, const PromptSpec& base, const ModelSpec& model);

// Applies one ablation value; throws ConfigError if it does not fit the axis.
ExperimentConfig with_axis_value(const ExperimentConfig& base, AblationAxis axis, const nlohmann::json& value);
std::string axis_value_label(AblationAxis axis, const nlohmann::json& value);

}  // namespace voplab
