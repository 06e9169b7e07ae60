#pragma once

#include <cstddef>
#include <vector>

#include "voplab/model/spec.hpp"
#include "voplab/model/transformer.hpp"
#include "voplab/prompts/prompt_spec.hpp"
#include "voplab/tensor/params.hpp"

namespace voplab {

template <typename T>
struct LstmWeights {
    Var<T> weight_ih, weight_hh, bias_ih, bias_hh;  // (in,4h) (h,4h) (4h) (4h); gates i,f,g,o

    // x: (B, F, in) -> hidden states (B, F, h), scanning frames backwards if reversed.
    Var<T> run(const Var<T>& x, bool reversed) const;
};

// One generator per model, shared by every prompted layer: a sequence model
// over the per-frame [CLS] tokens followed by a linear map to video_len
// prompt tokens per frame.
template <typename T>
class ContextGenerator {
public:
    ContextGenerator(const ParamRegistry<T>& registry, const ModelSpec& model, const PromptSpec& prompts);

    // cls: (B, F, d_v) -> contextual features (B, F, h').
    Var<T> modulate(const Var<T>& cls) const;
    // cls: (B, F, d_v) -> prompts (B, F, video_len, d_v).
    Var<T> generate(const Var<T>& cls) const;

private:
    CmmKind kind_;
    std::size_t video_len_, width_;
    LstmWeights<T> fwd_, bwd_;
    Var<T> cmm_pos_;
    std::vector<TransformerBlock<T>> cmm_blocks_;
    Var<T> fc_w_, fc_b_;
};

}  // namespace voplab
