#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "voplab/model/layout.hpp"
#include "voplab/model/spec.hpp"
#include "voplab/model/transformer.hpp"
#include "voplab/prompts/bank.hpp"
#include "voplab/protocols/ledger.hpp"
#include "voplab/tensor/params.hpp"

namespace voplab {

// Per-layer record of what an encoder did, for contract tests.
template <typename T>
struct LayerTrace {
    std::size_t layer = 0;
    std::size_t tokens_in = 0;      // sequence length entering the block
    std::size_t prompt_tokens = 0;  // of which prompts
    std::size_t tokens_out = 0;     // length carried to the next layer
    bool joint = false;             // attends across frames
    Var<T> cls_in;                  // (B, F, d_v) [CLS] states entering a per-frame layer
    Var<T> output;                  // raw block output, prompts included
    Var<T> generated;               // context prompts produced for this layer
};

template <typename T>
struct EncoderTrace {
    std::vector<LayerTrace<T>> text;
    std::vector<LayerTrace<T>> vision;
};

// CLIP-style dual encoder with prompt mechanisms on both towers. Parameters
// live in the registry; trainability follows the protocol.
template <typename T>
class VopModel {
public:
    VopModel(const ModelSpec& model, const PromptSpec& prompts, const Protocol& protocol, std::uint64_t seed);
    VopModel(const VopModel&) = delete;
    VopModel& operator=(const VopModel&) = delete;

    const ModelSpec& spec() const { return model_; }
    const PromptSpec& prompts() const { return prompts_; }
    const Protocol& protocol() const { return protocol_; }
    std::uint64_t seed() const { return seed_; }
    ParamRegistry<T>& params() { return registry_; }
    const ParamRegistry<T>& params() const { return registry_; }
    const TrainabilityMask& mask() const { return mask_; }
    const PromptBank<T>& bank() const { return bank_; }

    // (B, d)
    Var<T> encode_text(const TextBatch& text, EncoderTrace<T>* trace = nullptr) const;
    // Per-frame embeddings (B, F, d).
    Var<T> encode_frames(const VideoBatch<T>& video, EncoderTrace<T>* trace = nullptr) const;
    // Mean-pooled video embeddings (B, d).
    Var<T> encode_video(const VideoBatch<T>& video, EncoderTrace<T>* trace = nullptr) const;

    Var<T> logit_scale() const { return registry_.get(kLogitScale); }

private:
    Var<T> vision_stem(const VideoBatch<T>& video) const;
    Var<T> per_frame_layer(std::size_t layer, const Var<T>& x, std::size_t batch, EncoderTrace<T>* trace) const;
    Var<T> to_joint(const Var<T>& x, std::size_t batch) const;
    Var<T> joint_layer(std::size_t layer, const Var<T>& x, EncoderTrace<T>* trace) const;

    ModelSpec model_;
    PromptSpec prompts_;
    Protocol protocol_;
    std::uint64_t seed_;
    ParamRegistry<T> registry_;
    TrainabilityMask mask_;
    std::vector<TransformerBlock<T>> text_blocks_;
    std::vector<TransformerBlock<T>> vision_blocks_;
    PromptBank<T> bank_;
    mutable std::map<std::size_t, Var<T>> causal_cache_;
};

// Sequence length entering block `layer`. The encoders check every block
// against these and throw std::logic_error on a mismatch.
std::size_t text_layer_tokens(const ModelSpec& model, const PromptSpec& prompts, std::size_t layer,
                              std::size_t text_len);
std::size_t frame_layer_tokens(const ModelSpec& model, const PromptSpec& prompts, std::size_t layer);
std::size_t joint_layer_tokens(const ModelSpec& model, const PromptSpec& prompts, std::size_t layer);

// Mean over the frame axis: (B, F, d) -> (B, d).
template <typename T>
Var<T> video_embed(const Var<T>& frame_embeddings);

// Cosine similarity matrix (B_text, B_video).
template <typename T>
Var<T> cosine_similarity(const Var<T>& text, const Var<T>& video);

}  // namespace voplab
