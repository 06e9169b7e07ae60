#include "voplab/model/spec.hpp"

#include <stdexcept>
#include <string>

namespace voplab {

namespace {
void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("model spec: " + what);
}
}  // namespace

void ModelSpec::validate() const {
    require(layers >= 1, "layers must be >= 1");
    require(text_width > 0 && vision_width > 0 && embed_dim > 0, "widths must be positive");
    require(text_heads > 0 && text_width % text_heads == 0, "text_width must be divisible by text_heads");
    require(vision_heads > 0 && vision_width % vision_heads == 0,
            "vision_width must be divisible by vision_heads");
    require(patch > 0 && image_side % patch == 0, "image_side must be divisible by patch");
    require(frames >= 1, "frames must be >= 1");
    require(max_text_len >= 1, "max_text_len must be >= 1");
    require(vocab >= 2, "vocab must be >= 2");
    require(mlp_ratio >= 1, "mlp_ratio must be >= 1");
}

ModelSpec ModelSpec::clip_vit_b32() { return ModelSpec{}; }

ModelSpec ModelSpec::toy() {
    ModelSpec s;
    s.layers = 4;
    s.text_width = 32;
    s.vision_width = 48;
    s.embed_dim = 32;
    s.text_heads = 4;
    s.vision_heads = 4;
    s.max_text_len = 8;
    s.frames = 4;
    s.patch = 4;
    s.image_side = 12;
    s.vocab = 64;
    s.mlp_ratio = 4;
    return s;
}

void TextBatch::validate(const ModelSpec& spec) const {
    if (token_ids.size() != batch * length) {
        throw std::invalid_argument("text batch: expected " + std::to_string(batch * length) +
                                    " token ids, got " + std::to_string(token_ids.size()));
    }
    if (length == 0 || length > spec.max_text_len) {
        throw std::invalid_argument("text batch: length " + std::to_string(length) +
                                    " outside [1, " + std::to_string(spec.max_text_len) + "]");
    }
    if (eos_index.size() != batch) throw std::invalid_argument("text batch: one eos index per sample required");
    for (std::size_t e : eos_index) {
        if (e >= length) {
            throw std::invalid_argument("text batch: eos index " + std::to_string(e) +
                                        " must be < sequence length " + std::to_string(length));
        }
    }
    for (int id : token_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= spec.vocab) {
            throw std::invalid_argument("text batch: token id " + std::to_string(id) +
                                        " outside vocabulary of " + std::to_string(spec.vocab));
        }
    }
}

template <typename T>
void VideoBatch<T>::validate(const ModelSpec& spec) const {
    const Shape want{batch(), spec.frames, 3, spec.image_side, spec.image_side};
    if (frames.rank() != 5 || frames.shape() != want) {
        throw ShapeError("video batch: frames " + shape_str(frames.shape()) + " do not match " +
                         shape_str(want));
    }
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& frames, const ModelSpec& spec) {
    const std::size_t b = frames.dim(0), f = frames.dim(1);
    const std::size_t side = spec.image_side, p = spec.patch, per = side / p;
    const std::size_t m = per * per, pd = 3 * p * p;
    Tensor<T> out(Shape{b * f, m, pd});
    const T* src = frames.data();
    T* dst = out.data();
    for (std::size_t fr = 0; fr < b * f; ++fr) {
        const T* img = src + fr * 3 * side * side;
        for (std::size_t py = 0; py < per; ++py) {
            for (std::size_t px = 0; px < per; ++px) {
                T* row = dst + (fr * m + py * per + px) * pd;
                for (std::size_t c = 0; c < 3; ++c) {
                    for (std::size_t y = 0; y < p; ++y) {
                        for (std::size_t x = 0; x < p; ++x) {
                            row[(c * p + y) * p + x] =
                                img[(c * side + py * p + y) * side + px * p + x];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template struct VideoBatch<float>;
template struct VideoBatch<double>;
template Tensor<float> patchify<float>(const Tensor<float>&, const ModelSpec&);
template Tensor<double> patchify<double>(const Tensor<double>&, const ModelSpec&);

}  // namespace voplab
