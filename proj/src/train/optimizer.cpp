#include "voplab/train/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace voplab {

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (step > total_steps) throw std::invalid_argument("cosine_lr: step beyond the schedule");
    if (total_steps == 0) return lr0;
    if (step == total_steps) return 0.0;
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
}

template <typename T>
void AdamW<T>::step(ParamRegistry<T>& params, double lr) {
    last_decayed_.clear();
    const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
    const T eps = static_cast<T>(config_.eps);
    const T decay = static_cast<T>(1.0 - lr * config_.weight_decay);
    for (auto& g : params.groups()) {
        if (!g.trainable || !g.tensor.has_grad()) continue;
        auto& state = moments_[g.name];
        Tensor<T>& p = g.tensor.value_mut();
        const Tensor<T>& grad = g.tensor.grad();
        if (state.m.empty()) {
            state.m = Tensor<T>(p.shape());
            state.v = Tensor<T>(p.shape());
        }
        ++state.steps;
        const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, double(state.steps)));
        const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, double(state.steps)));
        const T step_size = static_cast<T>(lr);
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const T gi = grad[i];
            state.m[i] = b1 * state.m[i] + (T(1) - b1) * gi;
            state.v[i] = b2 * state.v[i] + (T(1) - b2) * gi * gi;
            const T mhat = state.m[i] / c1;
            const T vhat = state.v[i] / c2;
            p[i] = p[i] * decay - step_size * mhat / (std::sqrt(vhat) + eps);
        }
        last_decayed_.insert(g.name);
    }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace voplab
