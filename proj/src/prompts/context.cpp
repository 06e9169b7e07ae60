#include "voplab/prompts/context.hpp"

#include <string>

namespace voplab {

template <typename T>
Var<T> LstmWeights<T>::run(const Var<T>& x, bool reversed) const {
    const std::size_t b = x.shape()[0], f = x.shape()[1], in = x.shape()[2];
    const std::size_t h = weight_hh.shape()[0];
    Var<T> hidden = constant(Tensor<T>(Shape{b, h}));
    Var<T> cell = constant(Tensor<T>(Shape{b, h}));
    std::vector<Var<T>> out(f);
    for (std::size_t step = 0; step < f; ++step) {
        const std::size_t t = reversed ? f - 1 - step : step;
        auto xt = reshape(slice(x, 1, t, 1), {b, in});
        auto gates = add(add(add(matmul(xt, weight_ih), bias_ih), matmul(hidden, weight_hh)), bias_hh);
        auto i = sigmoid(slice(gates, 1, 0, h));
        auto fg = sigmoid(slice(gates, 1, h, h));
        auto g = tanh(slice(gates, 1, 2 * h, h));
        auto o = sigmoid(slice(gates, 1, 3 * h, h));
        cell = add(mul(fg, cell), mul(i, g));
        hidden = mul(o, tanh(cell));
        out[t] = reshape(hidden, {b, 1, h});
    }
    return concat(out, 1);
}

namespace {
template <typename T>
LstmWeights<T> lstm_from(const ParamRegistry<T>& reg, const std::string& p) {
    return {reg.get(p + ".weight_ih"), reg.get(p + ".weight_hh"), reg.get(p + ".bias_ih"),
            reg.get(p + ".bias_hh")};
}
}  // namespace

template <typename T>
ContextGenerator<T>::ContextGenerator(const ParamRegistry<T>& reg, const ModelSpec& model,
                                      const PromptSpec& prompts)
    : kind_(prompts.cmm),
      video_len_(prompts.effective_video_len()),
      width_(model.vision_width),
      fc_w_(reg.get("context.fc.weight")),
      fc_b_(reg.get("context.fc.bias")) {
    switch (kind_) {
        case CmmKind::bilstm:
            fwd_ = lstm_from(reg, "context.cmm.fwd");
            bwd_ = lstm_from(reg, "context.cmm.bwd");
            break;
        case CmmKind::lstm: fwd_ = lstm_from(reg, "context.cmm.fwd"); break;
        case CmmKind::transformer:
            cmm_pos_ = reg.get("context.cmm.positional_embedding");
            for (std::size_t l = 1; l <= prompts.cmm_layers; ++l) {
                cmm_blocks_.emplace_back(reg, "context.cmm.layer." + std::to_string(l), model.vision_heads);
            }
            break;
    }
}

template <typename T>
Var<T> ContextGenerator<T>::modulate(const Var<T>& cls) const {
    switch (kind_) {
        case CmmKind::bilstm: return concat<T>({fwd_.run(cls, false), bwd_.run(cls, true)}, 2);
        case CmmKind::lstm: return fwd_.run(cls, false);
        case CmmKind::transformer: {
            auto x = add(cls, slice(cmm_pos_, 0, 0, cls.shape()[1]));
            for (const auto& blk : cmm_blocks_) x = blk.forward(x);
            return x;
        }
    }
    return cls;
}

template <typename T>
Var<T> ContextGenerator<T>::generate(const Var<T>& cls) const {
    const std::size_t b = cls.shape()[0], f = cls.shape()[1];
    auto y = add(matmul(modulate(cls), fc_w_), fc_b_);
    return reshape(y, {b, f, video_len_, width_});
}

template struct LstmWeights<float>;
template struct LstmWeights<double>;
template class ContextGenerator<float>;
template class ContextGenerator<double>;

}  // namespace voplab
