#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>

#include "voplab/tensor/params.hpp"

namespace voplab {

// lr0 * (1 + cos(pi * step / total)) / 2, no warmup. Throws on step > total.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.2;
};

template <typename T>
struct AdamMoments {
    Tensor<T> m;
    Tensor<T> v;
    std::size_t steps = 0;  // updates applied to this group
};

// Decoupled weight decay: p <- p - lr * wd * p, then the bias-corrected
// adaptive step. Only trainable groups holding a gradient are touched.
template <typename T>
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    void step(ParamRegistry<T>& params, double lr);

    const AdamWConfig& config() const { return config_; }
    std::map<std::string, AdamMoments<T>>& moments() { return moments_; }
    const std::map<std::string, AdamMoments<T>>& moments() const { return moments_; }
    // Names decayed by the most recent step.
    const std::set<std::string>& last_decayed() const { return last_decayed_; }

private:
    AdamWConfig config_;
    std::map<std::string, AdamMoments<T>> moments_;
    std::set<std::string> last_decayed_;
};

}  // namespace voplab
