#include "voplab/io/spec_json.hpp"

#include "voplab/io/json_fields.hpp"

namespace voplab {

using nlohmann::json;

namespace {

template <typename E, typename Parse>
E parse_enum(const std::string& where, const std::string& value, Parse parse) {
    try {
        return parse(value);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

}  // namespace

json to_json(const ModelSpec& m) {
    return json{{"layers", m.layers},         {"text_width", m.text_width},     {"vision_width", m.vision_width},
                {"embed_dim", m.embed_dim},   {"text_heads", m.text_heads},     {"vision_heads", m.vision_heads},
                {"max_text_len", m.max_text_len}, {"frames", m.frames},         {"patch", m.patch},
                {"image_side", m.image_side}, {"vocab", m.vocab},               {"mlp_ratio", m.mlp_ratio}};
}

ModelSpec model_spec_from_json(const json& j, ModelSpec m) {
    JsonFields f(j, "model");
    std::string preset;
    f.read("preset", preset);
    if (preset == "toy") {
        m = ModelSpec::toy();
    } else if (preset == "clip_vit_b32") {
        m = ModelSpec::clip_vit_b32();
    } else if (!preset.empty()) {
        throw ConfigError("model.preset: unknown preset '" + preset + "' (toy|clip_vit_b32)");
    }
    f.read("layers", m.layers);
    f.read("text_width", m.text_width);
    f.read("vision_width", m.vision_width);
    f.read("embed_dim", m.embed_dim);
    f.read("text_heads", m.text_heads);
    f.read("vision_heads", m.vision_heads);
    f.read("max_text_len", m.max_text_len);
    f.read("frames", m.frames);
    f.read("patch", m.patch);
    f.read("image_side", m.image_side);
    f.read("vocab", m.vocab);
    f.read("mlp_ratio", m.mlp_ratio);
    f.finish();
    return m;
}

json to_json(const PromptSpec& p) {
    return json{{"mode", std::string(to_string(p.mode))},
                {"text_len", p.text_len},
                {"visual_len", p.visual_len},
                {"video_len", p.video_len},
                {"depth_range", {p.depth_first, p.depth_last}},
                {"split_depth", p.split_depth},
                {"cmm", std::string(to_string(p.cmm))},
                {"cmm_hidden", p.cmm_hidden},
                {"cmm_layers", p.cmm_layers}};
}

PromptSpec prompt_spec_from_json(const json& j, PromptSpec p) {
    JsonFields f(j, "prompts");
    std::string mode(to_string(p.mode)), cmm(to_string(p.cmm));
    f.read("mode", mode);
    p.mode = parse_enum<PromptMode>("prompts.mode", mode, parse_prompt_mode);
    f.read("text_len", p.text_len);
    f.read("visual_len", p.visual_len);
    f.read("video_len", p.video_len);
    std::vector<std::size_t> range = {p.depth_first, p.depth_last};
    f.read("depth_range", range);
    if (range.size() != 2) throw ConfigError("prompts.depth_range: expected [first, last]");
    p.depth_first = range[0];
    p.depth_last = range[1];
    f.read("split_depth", p.split_depth);
    f.read("cmm", cmm);
    p.cmm = parse_enum<CmmKind>("prompts.cmm", cmm, parse_cmm_kind);
    f.read("cmm_hidden", p.cmm_hidden);
    f.read("cmm_layers", p.cmm_layers);
    f.finish();
    return p;
}

json to_json(const Protocol& p) {
    return json{{"kind", std::string(to_string(p.kind))}, {"adapter_hidden", p.adapter_hidden}};
}

Protocol protocol_from_json(const json& j, Protocol p) {
    if (j.is_string()) {
        p.kind = parse_enum<ProtocolKind>("protocol", j.get<std::string>(), parse_protocol);
        return p;
    }
    JsonFields f(j, "protocol");
    std::string kind(to_string(p.kind));
    f.read("kind", kind);
    p.kind = parse_enum<ProtocolKind>("protocol.kind", kind, parse_protocol);
    f.read("adapter_hidden", p.adapter_hidden);
    f.finish();
    return p;
}

json to_json(const TrainConfig& t) {
    return json{{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"seed", t.seed},
                {"logit_scale_init", t.logit_scale_init},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"eval_batch", t.eval_batch},
                {"lr_grid", t.lr_grid}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig t) {
    JsonFields f(j, "train");
    f.read("epochs", t.epochs);
    f.read("batch_size", t.batch_size);
    f.read("lr", t.lr);
    f.read("weight_decay", t.weight_decay);
    f.read("seed", t.seed);
    f.read("logit_scale_init", t.logit_scale_init);
    f.read("beta1", t.beta1);
    f.read("beta2", t.beta2);
    f.read("eps", t.eps);
    f.read("eval_batch", t.eval_batch);
    f.read("lr_grid", t.lr_grid);
    f.finish();
    return t;
}

}  // namespace voplab
