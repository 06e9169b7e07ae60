#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "voplab/prompts/prompt_spec.hpp"

namespace voplab {

enum class ProtocolKind {
    full,
    bias,
    proj,
    partial,
    adapter_attn,
    adapter_ffn,
    vop,
    vop_p,
    vop_c,
    vop_f,
    vop_fp,
    vop_fc
};

struct Protocol {
    ProtocolKind kind = ProtocolKind::vop;
    std::size_t adapter_hidden = 64;

    bool is_prompt_kind() const;
    bool is_adapter_kind() const;
    void validate() const;
};

std::string_view to_string(ProtocolKind kind);
// Throws std::invalid_argument for unknown names.
ProtocolKind parse_protocol(std::string_view name);
const std::vector<ProtocolKind>& all_protocols();

// Prompt mechanism implied by a protocol (none for the baselines).
PromptMode prompt_mode_for(ProtocolKind kind);

}  // namespace voplab
