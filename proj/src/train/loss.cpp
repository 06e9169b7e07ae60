#include "voplab/train/loss.hpp"

#include <cmath>

#include "voplab/model/dual_encoder.hpp"

namespace voplab {

template <typename T>
Var<T> retrieval_logits(const Var<T>& text, const Var<T>& video, const Var<T>& logit_scale) {
    auto s = exp(clamp_max(logit_scale, static_cast<T>(std::log(kMaxLogitScale))));
    return mul(cosine_similarity(text, video), s);
}

template <typename T>
Var<T> symmetric_contrastive_loss(const Var<T>& logits) {
    const Shape& s = logits.shape();
    if (s.size() != 2 || s[0] != s[1]) throw shape_error("contrastive loss", s, "must be square");
    auto t2v = mean_all(diagonal(log_softmax(logits, 1)));
    auto v2t = mean_all(diagonal(log_softmax(logits, 0)));
    return scale(add(t2v, v2t), T(-0.5));
}

template Var<float> retrieval_logits<float>(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> retrieval_logits<double>(const Var<double>&, const Var<double>&, const Var<double>&);
template Var<float> symmetric_contrastive_loss<float>(const Var<float>&);
template Var<double> symmetric_contrastive_loss<double>(const Var<double>&);

}  // namespace voplab
