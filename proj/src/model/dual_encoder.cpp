#include "voplab/model/dual_encoder.hpp"

#include <stdexcept>

namespace voplab {

namespace {
template <typename T>
ParamRegistry<T> build_registry(const ModelSpec& model, const PromptSpec& prompts, const Protocol& protocol,
                                std::uint64_t seed) {
    auto layout = parameter_layout(model, prompts, protocol);
    apply_protocol(layout, protocol, model.layers);
    ParamRegistry<T> reg;
    for (const auto& d : layout) reg.add(d.name, materialize<T>(d, seed), d.trainable);
    return reg;
}
void check_length(const char* tower, std::size_t layer, std::size_t got, std::size_t want) {
    if (got != want) {
        throw std::logic_error(std::string(tower) + " layer " + std::to_string(layer) + ": " +
                               std::to_string(got) + " tokens, expected " + std::to_string(want));
    }
}
}  // namespace

std::size_t text_layer_tokens(const ModelSpec&, const PromptSpec& prompts, std::size_t layer,
                              std::size_t text_len) {
    return text_len + (prompts.prompted(layer) ? prompts.text_len : 0);
}

std::size_t frame_layer_tokens(const ModelSpec& model, const PromptSpec& prompts, std::size_t layer) {
    return 1 + (prompts.prompted(layer) ? prompts.visual_len : 0) + model.patches();
}

std::size_t joint_layer_tokens(const ModelSpec& model, const PromptSpec& prompts, std::size_t layer) {
    return model.frames + (prompts.prompted(layer) ? prompts.visual_len : 0) + model.frames * model.patches();
}

template <typename T>
VopModel<T>::VopModel(const ModelSpec& model, const PromptSpec& prompts, const Protocol& protocol,
                      std::uint64_t seed)
    : model_(model),
      prompts_(prompts),
      protocol_(protocol),
      seed_(seed),
      registry_(build_registry<T>(model, prompts, protocol, seed)),
      mask_(),
      bank_(registry_, model_, prompts_) {
    for (const auto& g : registry_.groups()) mask_[g.name] = g.trainable;
    for (std::size_t i = 1; i <= model_.layers; ++i) {
        text_blocks_.emplace_back(registry_, text_layer_prefix(i), model_.text_heads);
        vision_blocks_.emplace_back(registry_, vision_layer_prefix(i), model_.vision_heads);
    }
}

template <typename T>
Var<T> VopModel<T>::encode_text(const TextBatch& text, EncoderTrace<T>* trace) const {
    text.validate(model_);
    const std::size_t b = text.batch, n = text.length;
    auto x = embedding(registry_.get("text.token_embedding"), text.token_ids, {b, n});
    x = add(x, slice(registry_.get("text.positional_embedding"), 0, 0, n));
    auto mask_for = [&](std::size_t len) {
        auto it = causal_cache_.find(len);
        if (it == causal_cache_.end()) it = causal_cache_.emplace(len, constant(causal_mask<T>(len))).first;
        return it->second;
    };
    for (std::size_t i = 1; i <= model_.layers; ++i) {
        const auto& blk = text_blocks_[i - 1];
        LayerTrace<T> rec;
        rec.layer = i;
        if (auto p = bank_.text(i)) {
            const std::size_t np = p->shape()[0];
            auto seq = concat<T>({expand(*p, b), x}, 1);
            rec.tokens_in = seq.shape()[1];
            auto out = blk.forward(seq, mask_for(rec.tokens_in));
            x = slice(out, 1, np, n);
            rec.prompt_tokens = np;
            rec.output = out;
        } else {
            rec.tokens_in = x.shape()[1];
            x = blk.forward(x, mask_for(n));
            rec.output = x;
        }
        rec.tokens_out = x.shape()[1];
        check_length("text", i, rec.tokens_in, text_layer_tokens(model_, prompts_, i, n));
        if (trace) trace->text.push_back(rec);
    }
    x = layer_norm(x, registry_.get("text.ln_final.weight"), registry_.get("text.ln_final.bias"));
    return matmul(take_rows(x, text.eos_index), registry_.get("text.projection"));
}

template <typename T>
Var<T> VopModel<T>::vision_stem(const VideoBatch<T>& video) const {
    const std::size_t b = video.batch(), f = model_.frames, m = model_.patches(), d = model_.vision_width;
    auto patches = constant(patchify(video.frames, model_));
    auto emb = matmul(patches, registry_.get("vision.conv1.weight"));
    auto cls = expand(reshape(registry_.get("vision.class_embedding"), {1, d}), b * f);
    auto x = add(concat<T>({cls, emb}, 1), registry_.get("vision.positional_embedding"));
    (void)m;
    return layer_norm(x, registry_.get("vision.ln_pre.weight"), registry_.get("vision.ln_pre.bias"));
}

template <typename T>
Var<T> VopModel<T>::per_frame_layer(std::size_t layer, const Var<T>& x, std::size_t batch,
                                    EncoderTrace<T>* trace) const {
    const std::size_t f = model_.frames, m = model_.patches(), d = model_.vision_width;
    const auto& blk = vision_blocks_[layer - 1];
    auto cls = slice(x, 1, 0, 1);
    LayerTrace<T> rec;
    rec.layer = layer;
    rec.cls_in = reshape(cls, {batch, f, d});
    Var<T> generated;
    auto prompts = bank_.frame_prompts(layer, rec.cls_in, &generated);
    Var<T> next;
    if (prompts) {
        const std::size_t np = prompts->shape()[1];
        auto seq = concat<T>({cls, *prompts, slice(x, 1, 1, m)}, 1);
        rec.tokens_in = seq.shape()[1];
        auto out = blk.forward(seq);
        next = concat<T>({slice(out, 1, 0, 1), slice(out, 1, 1 + np, m)}, 1);
        rec.prompt_tokens = np;
        rec.output = out;
    } else {
        rec.tokens_in = x.shape()[1];
        next = blk.forward(x);
        rec.output = next;
    }
    rec.generated = generated;
    rec.tokens_out = next.shape()[1];
    check_length("vision", layer, rec.tokens_in, frame_layer_tokens(model_, prompts_, layer));
    if (trace) trace->vision.push_back(rec);
    return next;
}

// (B*F, 1+M, d) -> (B, F + F*M, d): all [CLS] tokens first, then every
// frame's patches in frame order.
template <typename T>
Var<T> VopModel<T>::to_joint(const Var<T>& x, std::size_t batch) const {
    const std::size_t f = model_.frames, m = model_.patches(), d = model_.vision_width;
    auto x4 = reshape(x, {batch, f, 1 + m, d});
    if (registry_.contains(kFramePositionalEmbedding)) {
        auto pos = permute(expand(registry_.get(kFramePositionalEmbedding), 1 + m), {1, 0, 2});
        x4 = add(x4, pos);
    }
    auto cls = reshape(slice(x4, 2, 0, 1), {batch, f, d});
    auto patches = reshape(slice(x4, 2, 1, m), {batch, f * m, d});
    return concat<T>({cls, patches}, 1);
}

template <typename T>
Var<T> VopModel<T>::joint_layer(std::size_t layer, const Var<T>& x, EncoderTrace<T>* trace) const {
    const std::size_t b = x.shape()[0], f = model_.frames, fm = f * model_.patches();
    const auto& blk = vision_blocks_[layer - 1];
    LayerTrace<T> rec;
    rec.layer = layer;
    rec.joint = true;
    Var<T> next;
    if (auto p = bank_.video(layer)) {
        const std::size_t np = p->shape()[0];
        auto seq = concat<T>({slice(x, 1, 0, f), expand(*p, b), slice(x, 1, f, fm)}, 1);
        rec.tokens_in = seq.shape()[1];
        auto out = blk.forward(seq);
        next = concat<T>({slice(out, 1, 0, f), slice(out, 1, f + np, fm)}, 1);
        rec.prompt_tokens = np;
        rec.output = out;
    } else {
        rec.tokens_in = x.shape()[1];
        next = blk.forward(x);
        rec.output = next;
    }
    rec.tokens_out = next.shape()[1];
    check_length("vision", layer, rec.tokens_in, joint_layer_tokens(model_, prompts_, layer));
    if (trace) trace->vision.push_back(rec);
    return next;
}

template <typename T>
Var<T> VopModel<T>::encode_frames(const VideoBatch<T>& video, EncoderTrace<T>* trace) const {
    video.validate(model_);
    const std::size_t b = video.batch(), f = model_.frames, d = model_.vision_width;
    auto x = vision_stem(video);
    const std::size_t split = prompts_.per_frame_depth(model_.layers);
    for (std::size_t i = 1; i <= split; ++i) x = per_frame_layer(i, x, b, trace);
    Var<T> cls;
    if (split < model_.layers) {
        x = to_joint(x, b);
        for (std::size_t i = split + 1; i <= model_.layers; ++i) x = joint_layer(i, x, trace);
        cls = slice(x, 1, 0, f);
    } else {
        cls = reshape(slice(x, 1, 0, 1), {b, f, d});
    }
    cls = layer_norm(cls, registry_.get("vision.ln_post.weight"), registry_.get("vision.ln_post.bias"));
    return matmul(cls, registry_.get("vision.projection"));
}

template <typename T>
Var<T> VopModel<T>::encode_video(const VideoBatch<T>& video, EncoderTrace<T>* trace) const {
    return video_embed(encode_frames(video, trace));
}

template <typename T>
Var<T> video_embed(const Var<T>& frame_embeddings) {
    return mean(frame_embeddings, 1);
}

template <typename T>
Var<T> cosine_similarity(const Var<T>& text, const Var<T>& video) {
    return matmul(l2_normalize(text), l2_normalize(video), true);
}

template class VopModel<float>;
template class VopModel<double>;
template Var<float> video_embed<float>(const Var<float>&);
template Var<double> video_embed<double>(const Var<double>&);
template Var<float> cosine_similarity<float>(const Var<float>&, const Var<float>&);
template Var<double> cosine_similarity<double>(const Var<double>&, const Var<double>&);

}  // namespace voplab
