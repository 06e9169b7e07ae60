#pragma once

#include <random>

#include "voplab/model/spec.hpp"

namespace fixtures {

inline voplab::TextBatch random_text(const voplab::ModelSpec& spec, std::size_t batch, std::size_t length,
                                     std::mt19937_64& rng) {
    voplab::TextBatch t;
    t.batch = batch;
    t.length = length;
    std::uniform_int_distribution<int> tok(1, static_cast<int>(spec.vocab) - 1);
    std::uniform_int_distribution<std::size_t> eos(0, length - 1);
    for (std::size_t i = 0; i < batch * length; ++i) t.token_ids.push_back(tok(rng));
    for (std::size_t b = 0; b < batch; ++b) t.eos_index.push_back(eos(rng));
    return t;
}

template <typename T>
voplab::VideoBatch<T> random_video(const voplab::ModelSpec& spec, std::size_t batch, std::mt19937_64& rng) {
    voplab::Tensor<T> f({batch, spec.frames, 3, spec.image_side, spec.image_side});
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : f.values()) v = static_cast<T>(nd(rng));
    return {f};
}

}  // namespace fixtures
