#include "voplab/model/transformer.hpp"

#include <cmath>

namespace voplab {

template <typename T>
Tensor<T> causal_mask(std::size_t n) {
    Tensor<T> m(Shape{n, n});
    for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t k = q + 1; k < n; ++k) m[q * n + k] = static_cast<T>(kMaskedLogit);
    }
    return m;
}

template <typename T>
Var<T> Adapter<T>::forward(const Var<T>& h) const {
    return add(matmul(relu(add(matmul(h, down_w), down_b)), up_w), up_b);
}

namespace {
template <typename T>
std::optional<Adapter<T>> find_adapter(const ParamRegistry<T>& reg, const std::string& p) {
    if (!reg.contains(p + ".down.weight")) return std::nullopt;
    return Adapter<T>{reg.get(p + ".down.weight"), reg.get(p + ".down.bias"), reg.get(p + ".up.weight"),
                      reg.get(p + ".up.bias")};
}
}  // namespace

template <typename T>
TransformerBlock<T>::TransformerBlock(const ParamRegistry<T>& reg, const std::string& p,
                                      std::size_t heads)
    : heads_(heads),
      ln1_w_(reg.get(p + ".ln_1.weight")),
      ln1_b_(reg.get(p + ".ln_1.bias")),
      in_w_(reg.get(p + ".attn.in_proj.weight")),
      in_b_(reg.get(p + ".attn.in_proj.bias")),
      out_w_(reg.get(p + ".attn.out_proj.weight")),
      out_b_(reg.get(p + ".attn.out_proj.bias")),
      ln2_w_(reg.get(p + ".ln_2.weight")),
      ln2_b_(reg.get(p + ".ln_2.bias")),
      fc_w_(reg.get(p + ".mlp.c_fc.weight")),
      fc_b_(reg.get(p + ".mlp.c_fc.bias")),
      proj_w_(reg.get(p + ".mlp.c_proj.weight")),
      proj_b_(reg.get(p + ".mlp.c_proj.bias")),
      adapter_attn_(find_adapter(reg, p + ".adapter_attn")),
      adapter_ffn_(find_adapter(reg, p + ".adapter_ffn")) {}

template <typename T>
Var<T> TransformerBlock<T>::attention(const Var<T>& h, const Var<T>& mask) const {
    const Shape& s = h.shape();
    if (s.size() != 3) throw shape_error("attention", s, "must be (B, S, d)");
    const std::size_t b = s[0], n = s[1], d = s[2], dh = d / heads_;
    auto qkv = add(matmul(h, in_w_), in_b_);
    auto split_heads = [&](std::size_t part) {
        return permute(reshape(slice(qkv, 2, part * d, d), {b, n, heads_, dh}), {0, 2, 1, 3});
    };
    auto q = split_heads(0), k = split_heads(1), v = split_heads(2);
    auto scores = scale(matmul(q, k, true), T(1) / std::sqrt(T(dh)));
    if (mask.defined()) scores = add(scores, mask);
    auto ctx = matmul(softmax(scores, -1), v);
    auto merged = reshape(permute(ctx, {0, 2, 1, 3}), {b, n, d});
    return add(matmul(merged, out_w_), out_b_);
}

template <typename T>
Var<T> TransformerBlock<T>::forward(const Var<T>& x, const Var<T>& mask) const {
    auto h = layer_norm(x, ln1_w_, ln1_b_);
    auto y = add(x, attention(h, mask));
    if (adapter_attn_) y = add(y, adapter_attn_->forward(h));
    auto h2 = layer_norm(y, ln2_w_, ln2_b_);
    auto z = add(y, add(matmul(gelu(add(matmul(h2, fc_w_), fc_b_)), proj_w_), proj_b_));
    if (adapter_ffn_) z = add(z, adapter_ffn_->forward(h2));
    return z;
}

template Tensor<float> causal_mask<float>(std::size_t);
template Tensor<double> causal_mask<double>(std::size_t);
template struct Adapter<float>;
template struct Adapter<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;

}  // namespace voplab
