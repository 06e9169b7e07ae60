#include "voplab/prompts/bank.hpp"

#include "voplab/model/layout.hpp"

namespace voplab {

template <typename T>
PromptBank<T>::PromptBank(const ParamRegistry<T>& registry, const ModelSpec& model, const PromptSpec& prompts)
    : registry_(&registry), model_(model), prompts_(prompts) {
    if (registry.contains("context.fc.weight")) {
        generator_ = std::make_shared<ContextGenerator<T>>(registry, model, prompts);
    }
}

template <typename T>
std::optional<Var<T>> PromptBank<T>::find(const std::string& name) const {
    if (!registry_->contains(name)) return std::nullopt;
    return registry_->get(name);
}

template <typename T>
std::optional<Var<T>> PromptBank<T>::text(std::size_t layer) const {
    if (!prompts_.prompted(layer)) return std::nullopt;
    return find(text_prompt_name(layer));
}

template <typename T>
std::optional<Var<T>> PromptBank<T>::shared(std::size_t layer) const {
    if (!prompts_.prompted(layer)) return std::nullopt;
    return find(vision_prompt_name(layer));
}

template <typename T>
Var<T> PromptBank<T>::position(std::size_t layer, std::size_t frame_pos) const {
    return registry_->get(vision_position_prompt_name(layer, frame_pos));
}

template <typename T>
std::optional<Var<T>> PromptBank<T>::video(std::size_t layer) const {
    if (!prompts_.prompted(layer)) return std::nullopt;
    return find(vision_video_prompt_name(layer));
}

template <typename T>
std::optional<Var<T>> PromptBank<T>::frame_prompts(std::size_t layer, const Var<T>& cls,
                                                   Var<T>* generated) const {
    if (!prompts_.prompted(layer) || layer > prompts_.per_frame_depth(model_.layers)) return std::nullopt;
    const std::size_t b = cls.shape()[0], f = cls.shape()[1], d = model_.vision_width;
    const std::size_t vl = prompts_.effective_video_len();

    std::vector<Var<T>> parts;
    if (auto s = shared(layer)) parts.push_back(expand(*s, b * f));
    if (vl > 0 && prompts_.uses_position()) {
        std::vector<Var<T>> per_frame;
        for (std::size_t j = 1; j <= f; ++j) per_frame.push_back(reshape(position(layer, j), {1, vl, d}));
        parts.push_back(reshape(expand(concat(per_frame, 0), b), {b * f, vl, d}));
    } else if (vl > 0 && prompts_.uses_context()) {
        auto gen = generator_->generate(cls);
        if (generated) *generated = gen;
        parts.push_back(reshape(gen, {b * f, vl, d}));
    }
    if (parts.empty()) return std::nullopt;
    return parts.size() == 1 ? parts.front() : concat(parts, 1);
}

template class PromptBank<float>;
template class PromptBank<double>;

}  // namespace voplab
