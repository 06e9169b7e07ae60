#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "voplab/model/spec.hpp"

namespace voplab {

// Which video-prompt mechanism drives the vision tower.
//   vop         shared deep prompts, identical for every frame
//   position    part of each block keyed by frame position
//   context     part of each block generated from the frames' [CLS] tokens
//   function*   layers past split_depth attend jointly over all frames
enum class PromptMode { none, vop, position, context, function, function_position, function_context };

enum class CmmKind { bilstm, lstm, transformer };

std::string_view to_string(PromptMode mode);
std::string_view to_string(CmmKind kind);
PromptMode parse_prompt_mode(std::string_view name);
CmmKind parse_cmm_kind(std::string_view name);

struct PromptSpec {
    PromptMode mode = PromptMode::none;
    std::size_t text_len = 8;    // P_t
    std::size_t visual_len = 8;  // P_v
    std::size_t video_len = 4;   // tokens per block made position/context specific
    std::size_t depth_first = 1;
    std::size_t depth_last = 12;  // inclusive
    std::size_t split_depth = 8;  // K_s
    CmmKind cmm = CmmKind::bilstm;
    std::size_t cmm_hidden = 0;  // 0 -> vision width
    std::size_t cmm_layers = 4;  // transformer CMM depth

    bool enabled() const { return mode != PromptMode::none; }
    bool prompted(std::size_t layer) const {
        return enabled() && layer >= depth_first && layer <= depth_last;
    }
    bool function_split() const;
    bool uses_position() const;
    bool uses_context() const;
    // Video tokens per block, zero for mechanisms that have none.
    std::size_t effective_video_len() const;
    // Layers at or below this index run per frame.
    std::size_t per_frame_depth(std::size_t layers) const {
        return function_split() ? split_depth : layers;
    }
    std::size_t resolved_cmm_hidden(const ModelSpec& model) const {
        return cmm_hidden == 0 ? model.vision_width : cmm_hidden;
    }

    void validate(const ModelSpec& model) const;

    // Published defaults: P_t = P_v = 8, four video tokens, K_s = 8, all layers.
    static PromptSpec defaults(PromptMode mode, const ModelSpec& model);
};

}  // namespace voplab
