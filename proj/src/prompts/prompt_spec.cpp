#include "voplab/prompts/prompt_spec.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace voplab {

std::string_view to_string(PromptMode mode) {
    switch (mode) {
        case PromptMode::none: return "none";
        case PromptMode::vop: return "vop";
        case PromptMode::position: return "P";
        case PromptMode::context: return "C";
        case PromptMode::function: return "F";
        case PromptMode::function_position: return "F+P";
        case PromptMode::function_context: return "F+C";
    }
    return "?";
}

std::string_view to_string(CmmKind kind) {
    switch (kind) {
        case CmmKind::bilstm: return "bilstm";
        case CmmKind::lstm: return "lstm";
        case CmmKind::transformer: return "transformer";
    }
    return "?";
}

PromptMode parse_prompt_mode(std::string_view name) {
    for (PromptMode m : {PromptMode::none, PromptMode::vop, PromptMode::position, PromptMode::context,
                         PromptMode::function, PromptMode::function_position,
                         PromptMode::function_context}) {
        if (name == to_string(m)) return m;
    }
    throw std::invalid_argument("unknown prompt mode '" + std::string(name) + "'");
}

CmmKind parse_cmm_kind(std::string_view name) {
    for (CmmKind k : {CmmKind::bilstm, CmmKind::lstm, CmmKind::transformer}) {
        if (name == to_string(k)) return k;
    }
    throw std::invalid_argument("unknown CMM kind '" + std::string(name) + "'");
}

bool PromptSpec::function_split() const {
    return mode == PromptMode::function || mode == PromptMode::function_position ||
           mode == PromptMode::function_context;
}

bool PromptSpec::uses_position() const {
    return mode == PromptMode::position || mode == PromptMode::function_position;
}

bool PromptSpec::uses_context() const {
    return mode == PromptMode::context || mode == PromptMode::function_context;
}

std::size_t PromptSpec::effective_video_len() const {
    return uses_position() || uses_context() ? video_len : 0;
}

void PromptSpec::validate(const ModelSpec& model) const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("prompt spec: " + what);
    };
    if (!enabled()) return;
    require(video_len <= visual_len, "video_len must be <= visual_len");
    require(depth_first >= 1 && depth_first <= depth_last && depth_last <= model.layers,
            "depth range must satisfy 1 <= first <= last <= layers");
    require(split_depth <= model.layers, "split_depth must be <= layers");
    require(cmm_layers >= 1, "cmm_layers must be >= 1");
}

PromptSpec PromptSpec::defaults(PromptMode mode, const ModelSpec& model) {
    PromptSpec p;
    p.mode = mode;
    p.depth_last = model.layers;
    // 8 of 12 at CLIP depth; shallower towers keep the same two-thirds split.
    p.split_depth = (2 * model.layers + 1) / 3;
    return p;
}

}  // namespace voplab
