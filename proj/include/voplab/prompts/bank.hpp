#pragma once

#include <cstddef>
#include <memory>
#include <optional>

#include "voplab/model/spec.hpp"
#include "voplab/prompts/context.hpp"
#include "voplab/prompts/prompt_spec.hpp"
#include "voplab/tensor/params.hpp"

namespace voplab {

// Resolves the prompt tokens each layer consumes. All tensors are views of
// registry parameters; nothing here owns state.
template <typename T>
class PromptBank {
public:
    PromptBank(const ParamRegistry<T>& registry, const ModelSpec& model, const PromptSpec& prompts);

    const PromptSpec& spec() const { return prompts_; }

    // (P_t, d_t), or nullopt when the text layer is unprompted.
    std::optional<Var<T>> text(std::size_t layer) const;
    // Shallow block shared by all frames: (P_v - video_len, d_v).
    std::optional<Var<T>> shared(std::size_t layer) const;
    // Block for frame position j (1-based): (video_len, d_v).
    Var<T> position(std::size_t layer, std::size_t frame_pos) const;
    // Deep joint-attention block: (P_v, d_v).
    std::optional<Var<T>> video(std::size_t layer) const;

    // Prompts for every frame of a batch in flat (B*F) order: (B*F, P_v, d_v).
    // cls is (B, F, d_v), used only by the context mechanism; the generated
    // block is reported through `generated` when requested.
    std::optional<Var<T>> frame_prompts(std::size_t layer, const Var<T>& cls, Var<T>* generated = nullptr) const;

    const ContextGenerator<T>* generator() const { return generator_.get(); }

private:
    std::optional<Var<T>> find(const std::string& name) const;

    const ParamRegistry<T>* registry_;
    ModelSpec model_;
    PromptSpec prompts_;
    std::shared_ptr<ContextGenerator<T>> generator_;
};

}  // namespace voplab
