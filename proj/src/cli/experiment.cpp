#include "voplab/cli/experiment.hpp"

#include "voplab/corpus/config_json.hpp"
#include "voplab/corpus/tensor_file.hpp"
#include "voplab/io/json_fields.hpp"
#include "voplab/io/spec_json.hpp"

namespace voplab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const std::string& p, const fs::path& base) {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

template <typename F>
void as_config_error(F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

std::string_view to_string(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::depth: return "depth";
        case AblationAxis::length: return "length";
        case AblationAxis::video_len: return "video_len";
        case AblationAxis::k_split: return "k_split";
        case AblationAxis::cmm: return "cmm";
    }
    return "?";
}

AblationAxis parse_ablation_axis(std::string_view name) {
    for (auto a : {AblationAxis::depth, AblationAxis::length, AblationAxis::video_len, AblationAxis::k_split,
                   AblationAxis::cmm}) {
        if (to_string(a) == name) return a;
    }
    throw ConfigError("unknown ablation axis '" + std::string(name) + "' (depth|length|video_len|k_split|cmm)");
}

PromptSpec prompts_for(const Protocol& protocol, const PromptSpec& base, const ModelSpec& model) {
    const PromptMode mode = prompt_mode_for(protocol.kind);
    if (mode == PromptMode::none) return PromptSpec{};
    PromptSpec p = base.enabled() ? base : PromptSpec::defaults(mode, model);
    p.mode = mode;
    return p;
}

void ExperimentConfig::validate() const {
    as_config_error([&] {
        model.validate();
        protocol.validate();
        prompts.validate(model);
        train.validate();
        corpus.validate();
        corpus.check_model(model);
    });
    if (prompts.mode != prompt_mode_for(protocol.kind)) {
        throw ConfigError("prompts.mode '" + std::string(to_string(prompts.mode)) + "' does not match protocol '" +
                          std::string(to_string(protocol.kind)) + "'");
    }
}

ExperimentConfig parse_experiment(const json& j, const fs::path& base_dir) {
    ExperimentConfig c;
    JsonFields f(j, "config");
    if (const auto* m = f.child("model")) c.model = model_spec_from_json(*m, ModelSpec::toy());
    if (const auto* p = f.child("protocol")) c.protocol = protocol_from_json(*p);
    c.prompts = prompts_for(c.protocol, PromptSpec{}, c.model);
    if (const auto* p = f.child("prompts")) {
        const PromptMode implied = c.prompts.mode;
        PromptSpec base = implied == PromptMode::none ? PromptSpec::defaults(PromptMode::vop, c.model) : c.prompts;
        base.mode = implied;
        c.prompts = prompt_spec_from_json(*p, base);
        if (c.prompts.mode != implied) {
            throw ConfigError("prompts.mode '" + std::string(to_string(c.prompts.mode)) + "' contradicts protocol '" +
                              std::string(to_string(c.protocol.kind)) + "' (implies '" +
                              std::string(to_string(implied)) + "')");
        }
        if (implied == PromptMode::none) c.prompts = PromptSpec{};
    }
    if (const auto* t = f.child("train")) c.train = train_config_from_json(*t);
    c.corpus = CorpusConfig::for_model(c.model);
    if (const auto* k = f.child("corpus")) c.corpus = corpus_config_from_json(*k, c.corpus);
    std::string dataset, output, backbone;
    f.read("dataset", dataset);
    f.read("output", output);
    f.read("backbone", backbone);
    c.dataset = resolve(dataset, base_dir);
    c.output = resolve(output, base_dir);
    c.backbone = resolve(backbone, base_dir);
    if (const auto* cp = f.child("count_params")) {
        JsonFields g(*cp, "count_params");
        g.read("protocols", c.count_protocols);
        g.finish();
    }
    if (const auto* a = f.child("ablate")) {
        JsonFields g(*a, "ablate");
        std::string axis = "depth";
        g.read("axis", axis);
        AblationSpec spec;
        spec.axis = parse_ablation_axis(axis);
        if (const auto* v = g.child("values")) {
            if (!v->is_array()) throw ConfigError("ablate.values: expected an array");
            spec.values = *v;
        }
        g.finish();
        c.ablate = spec;
    }
    f.finish();
    c.validate();
    return c;
}

ExperimentConfig load_experiment(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file_bytes(path));
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path.string() + "': " + e.what());
    } catch (const std::runtime_error& e) {
        throw ConfigError(e.what());
    }
    return parse_experiment(j, path.parent_path());
}

json to_json(const ExperimentConfig& c) {
    json j = {{"model", to_json(c.model)},
              {"prompts", to_json(c.prompts)},
              {"protocol", to_json(c.protocol)},
              {"train", to_json(c.train)},
              {"corpus", to_json(c.corpus)},
              {"dataset", c.dataset.string()},
              {"output", c.output.string()},
              {"backbone", c.backbone.string()},
              {"count_params", {{"protocols", c.count_protocols}}}};
    if (c.ablate) j["ablate"] = {{"axis", std::string(to_string(c.ablate->axis))}, {"values", c.ablate->values}};
    return j;
}

ExperimentConfig with_axis_value(const ExperimentConfig& base, AblationAxis axis, const json& value) {
    ExperimentConfig c = base;
    auto& p = c.prompts;
    const std::string where = "ablate " + std::string(to_string(axis)) + " value " + value.dump();
    try {
        switch (axis) {
            case AblationAxis::depth: {
                const auto range = value.get<std::vector<std::size_t>>();
                if (range.size() != 2) throw ConfigError(where + ": expected [first, last]");
                p.depth_first = range[0];
                p.depth_last = range[1];
                break;
            }
            case AblationAxis::length: {
                const auto v = value.get<std::size_t>();
                p.text_len = p.visual_len = v;
                p.video_len = std::min(p.video_len, v);
                break;
            }
            case AblationAxis::video_len: p.video_len = value.get<std::size_t>(); break;
            case AblationAxis::k_split:
                if (!p.function_split()) throw ConfigError(where + ": k_split needs a function-split protocol");
                p.split_depth = value.get<std::size_t>();
                break;
            case AblationAxis::cmm:
                if (!p.uses_context()) throw ConfigError(where + ": cmm needs a context protocol");
                as_config_error([&] { p.cmm = parse_cmm_kind(value.get<std::string>()); });
                break;
        }
    } catch (const json::exception&) {
        throw ConfigError(where + ": wrong type");
    }
    if (!p.enabled()) throw ConfigError(where + ": the protocol has no prompts to ablate");
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return c;
}

std::string axis_value_label(AblationAxis axis, const json& value) {
    if (axis == AblationAxis::depth && value.is_array() && value.size() == 2) {
        return std::to_string(value[0].get<std::size_t>()) + "-" + std::to_string(value[1].get<std::size_t>());
    }
    return value.is_string() ? value.get<std::string>() : value.dump();
}

}  // namespace voplab
