#pragma once

// The complete list of parameter tensors for a (model, prompts, protocol)
// triple. Models are materialized from this list and parameter accounting
// reads it directly, so both always agree.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "voplab/model/spec.hpp"
#include "voplab/prompts/prompt_spec.hpp"
#include "voplab/protocols/protocol.hpp"
#include "voplab/tensor/tensor.hpp"

namespace voplab {

enum class InitKind { zeros, ones, normal, uniform, constant };

struct ParamDecl {
    std::string name;
    Shape shape;
    InitKind init = InitKind::zeros;
    double scale = 0.0;  // stddev / half-width / constant value
    bool trainable = false;

    std::size_t numel() const { return shape_numel(shape); }
};

std::vector<ParamDecl> parameter_layout(const ModelSpec& model, const PromptSpec& prompts,
                                        const Protocol& protocol);

// Values depend only on (seed, decl.name, decl.shape, decl.init), never on
// which other parameters exist, so models built with different protocols
// share identical backbone and prompt values for the same seed.
template <typename T>
Tensor<T> materialize(const ParamDecl& decl, std::uint64_t seed);

std::uint64_t name_hash(const std::string& name);
// Independent stream seed for a named consumer of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& name);

// Name helpers shared by the encoders and the layout.
std::string text_layer_prefix(std::size_t layer);
std::string vision_layer_prefix(std::size_t layer);
std::string text_prompt_name(std::size_t layer);
std::string vision_prompt_name(std::size_t layer);
std::string vision_position_prompt_name(std::size_t layer, std::size_t frame_pos);
std::string vision_video_prompt_name(std::size_t layer);

inline constexpr const char* kFramePositionalEmbedding = "vision.frame_positional_embedding";
inline constexpr const char* kLogitScale = "logit_scale";

}  // namespace voplab
