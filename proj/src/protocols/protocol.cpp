#include "voplab/protocols/protocol.hpp"

#include <stdexcept>
#include <string>

namespace voplab {

std::string_view to_string(ProtocolKind kind) {
    switch (kind) {
        case ProtocolKind::full: return "full";
        case ProtocolKind::bias: return "bias";
        case ProtocolKind::proj: return "proj";
        case ProtocolKind::partial: return "partial";
        case ProtocolKind::adapter_attn: return "adapter_attn";
        case ProtocolKind::adapter_ffn: return "adapter_ffn";
        case ProtocolKind::vop: return "vop";
        case ProtocolKind::vop_p: return "vop_p";
        case ProtocolKind::vop_c: return "vop_c";
        case ProtocolKind::vop_f: return "vop_f";
        case ProtocolKind::vop_fp: return "vop_fp";
        case ProtocolKind::vop_fc: return "vop_fc";
    }
    return "?";
}

const std::vector<ProtocolKind>& all_protocols() {
    static const std::vector<ProtocolKind> kinds = {
        ProtocolKind::full,        ProtocolKind::bias,  ProtocolKind::proj,  ProtocolKind::partial,
        ProtocolKind::adapter_attn, ProtocolKind::adapter_ffn, ProtocolKind::vop, ProtocolKind::vop_p,
        ProtocolKind::vop_c,       ProtocolKind::vop_f, ProtocolKind::vop_fp, ProtocolKind::vop_fc};
    return kinds;
}

ProtocolKind parse_protocol(std::string_view name) {
    for (ProtocolKind k : all_protocols()) {
        if (name == to_string(k)) return k;
    }
    throw std::invalid_argument("unknown protocol '" + std::string(name) + "'");
}

bool Protocol::is_prompt_kind() const { return prompt_mode_for(kind) != PromptMode::none; }

bool Protocol::is_adapter_kind() const {
    return kind == ProtocolKind::adapter_attn || kind == ProtocolKind::adapter_ffn;
}

void Protocol::validate() const {
    if (is_adapter_kind() && adapter_hidden == 0) {
        throw std::invalid_argument("protocol: adapter_hidden must be > 0 for adapter kinds");
    }
}

PromptMode prompt_mode_for(ProtocolKind kind) {
    switch (kind) {
        case ProtocolKind::vop: return PromptMode::vop;
        case ProtocolKind::vop_p: return PromptMode::position;
        case ProtocolKind::vop_c: return PromptMode::context;
        case ProtocolKind::vop_f: return PromptMode::function;
        case ProtocolKind::vop_fp: return PromptMode::function_position;
        case ProtocolKind::vop_fc: return PromptMode::function_context;
        default: return PromptMode::none;
    }
}

}  // namespace voplab
