#pragma once

#include "voplab/tensor/autograd.hpp"

namespace voplab {

// Upper bound on the learned temperature multiplier.
inline constexpr double kMaxLogitScale = 100.0;

// exp(min(logit_scale, ln 100)) * cosine(text, video): (B_text, B_video).
template <typename T>
Var<T> retrieval_logits(const Var<T>& text, const Var<T>& video, const Var<T>& logit_scale);

// Mean of the text->video and video->text in-batch cross-entropies with
// matching pairs on the diagonal.
template <typename T>
Var<T> symmetric_contrastive_loss(const Var<T>& logits);

}  // namespace voplab
