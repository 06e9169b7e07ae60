#include "voplab/model/layout.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace voplab {

namespace {

double inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

struct LayoutBuilder {
    std::vector<ParamDecl> decls;

    void add(std::string name, Shape shape, InitKind init, double scale = 0.0) {
        decls.push_back({std::move(name), std::move(shape), init, scale, false});
    }

    void layer_norm(const std::string& prefix, std::size_t d) {
        add(prefix + ".weight", {d}, InitKind::ones);
        add(prefix + ".bias", {d}, InitKind::zeros);
    }

    void block(const std::string& p, std::size_t d, std::size_t mlp_ratio, const Protocol& protocol) {
        const std::size_t hidden = d * mlp_ratio;
        layer_norm(p + ".ln_1", d);
        add(p + ".attn.in_proj.weight", {d, 3 * d}, InitKind::normal, inv_sqrt(d));
        add(p + ".attn.in_proj.bias", {3 * d}, InitKind::zeros);
        add(p + ".attn.out_proj.weight", {d, d}, InitKind::normal, inv_sqrt(d));
        add(p + ".attn.out_proj.bias", {d}, InitKind::zeros);
        layer_norm(p + ".ln_2", d);
        add(p + ".mlp.c_fc.weight", {d, hidden}, InitKind::normal, inv_sqrt(d));
        add(p + ".mlp.c_fc.bias", {hidden}, InitKind::zeros);
        add(p + ".mlp.c_proj.weight", {hidden, d}, InitKind::normal, inv_sqrt(hidden));
        add(p + ".mlp.c_proj.bias", {d}, InitKind::zeros);
        if (protocol.kind == ProtocolKind::adapter_attn) adapter(p + ".adapter_attn", d, protocol.adapter_hidden);
        if (protocol.kind == ProtocolKind::adapter_ffn) adapter(p + ".adapter_ffn", d, protocol.adapter_hidden);
    }

    // Up-projection starts at zero so the adapted model equals the backbone.
    void adapter(const std::string& p, std::size_t d, std::size_t hidden) {
        add(p + ".down.weight", {d, hidden}, InitKind::uniform, inv_sqrt(d));
        add(p + ".down.bias", {hidden}, InitKind::zeros);
        add(p + ".up.weight", {hidden, d}, InitKind::zeros);
        add(p + ".up.bias", {d}, InitKind::zeros);
    }

    void lstm_direction(const std::string& p, std::size_t in, std::size_t h) {
        const double k = inv_sqrt(h);
        add(p + ".weight_ih", {in, 4 * h}, InitKind::uniform, k);
        add(p + ".weight_hh", {h, 4 * h}, InitKind::uniform, k);
        add(p + ".bias_ih", {4 * h}, InitKind::uniform, k);
        add(p + ".bias_hh", {4 * h}, InitKind::uniform, k);
    }
};

constexpr double kPromptStd = 0.02;

}  // namespace

std::string text_layer_prefix(std::size_t layer) { return "text.layer." + std::to_string(layer); }
std::string vision_layer_prefix(std::size_t layer) { return "vision.layer." + std::to_string(layer); }
std::string text_prompt_name(std::size_t layer) { return "text.prompt." + std::to_string(layer); }
std::string vision_prompt_name(std::size_t layer) { return "vision.prompt." + std::to_string(layer); }
std::string vision_position_prompt_name(std::size_t layer, std::size_t frame_pos) {
    return vision_prompt_name(layer) + ".frame." + std::to_string(frame_pos);
}
std::string vision_video_prompt_name(std::size_t layer) { return vision_prompt_name(layer) + ".video"; }

std::vector<ParamDecl> parameter_layout(const ModelSpec& model, const PromptSpec& prompts,
                                        const Protocol& protocol) {
    model.validate();
    protocol.validate();
    if (prompts.mode != prompt_mode_for(protocol.kind)) {
        throw std::invalid_argument("protocol '" + std::string(to_string(protocol.kind)) +
                                    "' requires prompt mode '" +
                                    std::string(to_string(prompt_mode_for(protocol.kind))) +
                                    "', got '" + std::string(to_string(prompts.mode)) + "'");
    }
    prompts.validate(model);

    LayoutBuilder b;
    const std::size_t dt = model.text_width, dv = model.vision_width, d = model.embed_dim;

    b.add("text.token_embedding", {model.vocab, dt}, InitKind::normal, 0.02);
    b.add("text.positional_embedding", {model.max_text_len, dt}, InitKind::normal, 0.01);
    for (std::size_t i = 1; i <= model.layers; ++i) b.block(text_layer_prefix(i), dt, model.mlp_ratio, protocol);
    b.layer_norm("text.ln_final", dt);
    b.add("text.projection", {dt, d}, InitKind::normal, inv_sqrt(dt));

    b.add("vision.conv1.weight", {model.patch_dim(), dv}, InitKind::normal, inv_sqrt(model.patch_dim()));
    b.add("vision.class_embedding", {dv}, InitKind::normal, inv_sqrt(dv));
    b.add("vision.positional_embedding", {1 + model.patches(), dv}, InitKind::normal, inv_sqrt(dv));
    b.layer_norm("vision.ln_pre", dv);
    for (std::size_t i = 1; i <= model.layers; ++i) b.block(vision_layer_prefix(i), dv, model.mlp_ratio, protocol);
    b.layer_norm("vision.ln_post", dv);
    b.add("vision.projection", {dv, d}, InitKind::normal, inv_sqrt(dv));

    b.add(kLogitScale, {}, InitKind::constant, std::log(1.0 / 0.07));

    if (prompts.enabled()) {
        const std::size_t vl = prompts.effective_video_len();
        const std::size_t split = prompts.per_frame_depth(model.layers);
        bool any_context_layer = false;
        for (std::size_t i = 1; i <= model.layers; ++i) {
            if (!prompts.prompted(i)) continue;
            if (prompts.text_len > 0) b.add(text_prompt_name(i), {prompts.text_len, dt}, InitKind::normal, kPromptStd);
            if (i <= split) {
                if (prompts.visual_len > vl) {
                    b.add(vision_prompt_name(i), {prompts.visual_len - vl, dv}, InitKind::normal, kPromptStd);
                }
                if (prompts.uses_position() && vl > 0) {
                    for (std::size_t j = 1; j <= model.frames; ++j) {
                        b.add(vision_position_prompt_name(i, j), {vl, dv}, InitKind::normal, kPromptStd);
                    }
                }
                any_context_layer = any_context_layer || (prompts.uses_context() && vl > 0);
            } else if (prompts.visual_len > 0) {
                b.add(vision_video_prompt_name(i), {prompts.visual_len, dv}, InitKind::normal, kPromptStd);
            }
        }
        if (prompts.function_split()) b.add(kFramePositionalEmbedding, {model.frames, dv}, InitKind::zeros);

        if (any_context_layer) {
            const std::size_t h = prompts.resolved_cmm_hidden(model);
            std::size_t fc_in = 0;
            switch (prompts.cmm) {
                case CmmKind::bilstm:
                    b.lstm_direction("context.cmm.fwd", dv, h);
                    b.lstm_direction("context.cmm.bwd", dv, h);
                    fc_in = 2 * h;
                    break;
                case CmmKind::lstm:
                    b.lstm_direction("context.cmm.fwd", dv, h);
                    fc_in = h;
                    break;
                case CmmKind::transformer:
                    b.add("context.cmm.positional_embedding", {model.frames, dv}, InitKind::normal, 0.02);
                    for (std::size_t l = 1; l <= prompts.cmm_layers; ++l) {
                        b.block("context.cmm.layer." + std::to_string(l), dv, model.mlp_ratio,
                                Protocol{ProtocolKind::vop, 0});
                    }
                    fc_in = dv;
                    break;
            }
            b.add("context.fc.weight", {fc_in, vl * dv}, InitKind::uniform, inv_sqrt(fc_in));
            b.add("context.fc.bias", {vl * dv}, InitKind::uniform, inv_sqrt(fc_in));
        }
    }
    return std::move(b.decls);
}

std::uint64_t name_hash(const std::string& name) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& name) {
    // splitmix64 of (seed, name) decorrelates neighbouring seeds
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (name_hash(name) | 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

template <typename T>
Tensor<T> materialize(const ParamDecl& decl, std::uint64_t seed) {
    Tensor<T> t(decl.shape);
    std::mt19937_64 rng(derive_seed(seed, decl.name));
    switch (decl.init) {
        case InitKind::zeros: break;
        case InitKind::ones: t.fill(T(1)); break;
        case InitKind::constant: t.fill(static_cast<T>(decl.scale)); break;
        case InitKind::normal: {
            std::normal_distribution<double> nd(0.0, decl.scale);
            for (auto& v : t.values()) v = static_cast<T>(nd(rng));
            break;
        }
        case InitKind::uniform: {
            std::uniform_real_distribution<double> ud(-decl.scale, decl.scale);
            for (auto& v : t.values()) v = static_cast<T>(ud(rng));
            break;
        }
    }
    return t;
}

template Tensor<float> materialize<float>(const ParamDecl&, std::uint64_t);
template Tensor<double> materialize<double>(const ParamDecl&, std::uint64_t);

}  // namespace voplab
