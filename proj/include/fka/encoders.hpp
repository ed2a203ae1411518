#pragma once

#include <span>
#include <string>
#include <vector>

#include "fka/nn.hpp"

namespace fka {

struct ImageEncoderConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t layers = 4;
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t mlp_dim = 128;
    std::vector<std::size_t> taps = {1, 2, 3, 4};  // 1-based layer indices

    void validate() const;
    std::size_t grid() const { return image_size / patch_size; }
    std::size_t patches() const { return grid() * grid(); }
};

struct TextEncoderConfig {
    std::size_t vocab = 0;
    std::size_t max_len = 16;  // tokens, not counting cls
    std::size_t layers = 2;
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t mlp_dim = 128;

    void validate() const;
};

struct EncodedImage {
    std::vector<Tensor> cls_per_layer;    // [1 × C] per layer
    std::vector<Tensor> patches_per_layer;  // [hw × C] per layer
    Tensor fused_cls;                      // Σ over taps, [1 × C]
    Tensor fused_patches;                  // Σ over taps, [hw × C]

    /// cls row followed by the patch rows.
    Tensor fused() const;
};

struct EncodedText {
    Tensor cls;     // [1 × C]
    Tensor tokens;  // [(1 + n) × C], row 0 is cls
};

class ImageEncoder {
  public:
    ImageEncoder() = default;
    ImageEncoder(ParameterStore& store, const std::string& name, const ImageEncoderConfig& config, Rng& rng);

    /// pixels: image_size × image_size × 3, row-major, values in [0, 1].
    EncodedImage encode(std::span<const float> pixels) const;
    const ImageEncoderConfig& config() const { return config_; }

  private:
    ImageEncoderConfig config_;
    Linear patch_embed_;
    Tensor cls_;
    Tensor pos_;
    std::vector<TransformerBlock> blocks_;
};

class TextEncoder {
  public:
    TextEncoder() = default;
    TextEncoder(ParameterStore& store, const std::string& name, const TextEncoderConfig& config, Rng& rng);

    EncodedText encode(std::span<const int> ids) const;
    const TextEncoderConfig& config() const { return config_; }

  private:
    TextEncoderConfig config_;
    Tensor table_;
    Tensor cls_;
    Tensor pos_;
    std::vector<TransformerBlock> blocks_;
    LayerNorm final_ln_;
};

/// Flattens image_size² pixels into [hw × patch²·3] rows, patches row-major,
/// pixels within a patch row-major, channels innermost.
Tensor patchify(std::span<const float> pixels, std::size_t image_size, std::size_t patch_size);

/// Mean cls feature per class prompt set: returns [n_sets × C].
Tensor encode_class_prompts(const TextEncoder& encoder, const std::vector<std::vector<std::vector<int>>>& sets);

/// Templates × states for the "natural" and "unnatural" classes.
std::vector<std::vector<std::string>> default_class_prompts();

} // namespace fka
