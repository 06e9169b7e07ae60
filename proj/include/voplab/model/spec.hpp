#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "voplab/tensor/tensor.hpp"

namespace voplab {

// Architecture of both towers. Layer indices are 1-based everywhere.
struct ModelSpec {
    std::size_t layers = 12;  // K, per encoder
    std::size_t text_width = 512;
    std::size_t vision_width = 768;
    std::size_t embed_dim = 512;
    std::size_t text_heads = 8;
    std::size_t vision_heads = 12;
    std::size_t max_text_len = 77;
    std::size_t frames = 12;
    std::size_t patch = 32;
    std::size_t image_side = 224;
    std::size_t vocab = 49408;
    std::size_t mlp_ratio = 4;

    std::size_t patches() const {
        const std::size_t per_side = image_side / patch;
        return per_side * per_side;
    }
    std::size_t patch_dim() const { return 3 * patch * patch; }

    // Throws std::invalid_argument naming the violated constraint.
    void validate() const;

    // ViT-B/32 text/vision towers.
    static ModelSpec clip_vit_b32();
    // Desk-scale configuration used by the test-suite.
    static ModelSpec toy();
};

// Pre-tokenized text; row-major (batch, length) ids.
struct TextBatch {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::vector<int> token_ids;
    std::vector<std::size_t> eos_index;

    void validate(const ModelSpec& spec) const;
};

// Frames (batch, F, 3, side, side).
template <typename T>
struct VideoBatch {
    Tensor<T> frames;

    std::size_t batch() const { return frames.rank() == 5 ? frames.dim(0) : 0; }
    void validate(const ModelSpec& spec) const;
};

// Cuts every frame into non-overlapping patches: (B*F, M, 3*p*p), channel-major
// inside a patch to match a (3, p, p) convolution kernel.
template <typename T>
Tensor<T> patchify(const Tensor<T>& frames, const ModelSpec& spec);

}  // namespace voplab
