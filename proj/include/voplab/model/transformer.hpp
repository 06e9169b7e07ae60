#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "voplab/tensor/autograd.hpp"
#include "voplab/tensor/params.hpp"

namespace voplab {

// Additive attention mask value for blocked positions.
inline constexpr double kMaskedLogit = -1e9;

// (n, n) additive mask blocking keys to the right of each query.
template <typename T>
Tensor<T> causal_mask(std::size_t n);

// Bottleneck added in parallel to a sublayer: up(relu(down(h))).
template <typename T>
struct Adapter {
    Var<T> down_w, down_b, up_w, up_b;

    Var<T> forward(const Var<T>& h) const;
};

// Pre-LN residual block:
//   h = ln_1(x);  x = x + attn(h) [+ adapter_attn(h)]
//   h = ln_2(x);  x = x + mlp(h)  [+ adapter_ffn(h)]
template <typename T>
class TransformerBlock {
public:
    TransformerBlock(const ParamRegistry<T>& registry, const std::string& prefix, std::size_t heads);

    // x: (B, S, d); mask: (S, S) additive or undefined.
    Var<T> forward(const Var<T>& x, const Var<T>& mask = Var<T>()) const;

    Var<T> attention(const Var<T>& h, const Var<T>& mask) const;

private:
    std::size_t heads_;
    Var<T> ln1_w_, ln1_b_, in_w_, in_b_, out_w_, out_b_;
    Var<T> ln2_w_, ln2_b_, fc_w_, fc_b_, proj_w_, proj_b_;
    std::optional<Adapter<T>> adapter_attn_;
    std::optional<Adapter<T>> adapter_ffn_;
};

}  // namespace voplab
