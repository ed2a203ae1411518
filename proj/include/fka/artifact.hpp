#pragma once

#include <string>

#include "fka/box.hpp"
#include "fka/nn.hpp"

namespace fka {

struct ArtifactConfig {
    std::size_t shared_dim = 64;  // projection dim for pixel/class similarity
    std::size_t agg_heads = 4;
    bool log_softmax_map = true;  // false: plain softmax probabilities
};

struct ArtifactOutput {
    Tensor f_h;        // [H·W × C] pixel-decoder features, rows row-major
    Tensor w;          // [H·W × 2] similarity scores
    Tensor m_s;        // [H·W × 2] per-pixel map (log-probabilities by default)
    Tensor u_agg;      // [1 × C]
    Tensor box;        // [4] x1, y1, x2, y2
    Tensor map_embedding;    // [1 × C_lm]
    Tensor token_embedding;  // [1 × C_lm]
    std::size_t side = 0;    // H = W
};

class ArtifactModule {
  public:
    ArtifactModule() = default;
    /// patch_dim: width of u_v^pat; text_dim: width of the class features.
    ArtifactModule(ParameterStore& store, const std::string& name, std::size_t patch_dim, std::size_t text_dim,
                   std::size_t grid, std::size_t lm_dim, const ArtifactConfig& config, Rng& rng);

    /// u_pat [hw × C] → F_h [(4√hw)² × C].
    Tensor pixel_decode(const Tensor& u_pat) const;
    /// ⟨normalize(proj F_h), normalize(proj F_p)⟩ → [H·W × 2].
    Tensor similarity(const Tensor& f_h, const Tensor& class_features) const;
    Tensor segmentation(const Tensor& w) const;
    Tensor aggregate(const Tensor& u_pat) const;
    Tensor predict_box(const Tensor& u_agg) const;
    Tensor map_embedding(const Tensor& m_s) const;
    Tensor token_embedding(const Tensor& u_agg) const;

    ArtifactOutput operator()(const Tensor& u_pat, const Tensor& class_features) const;

    std::size_t side() const { return 4 * grid_; }
    const ArtifactConfig& config() const { return config_; }

    // Exposed for tests.
    Tensor deconv1_w, deconv1_b, deconv2_w, deconv2_b;
    Linear pixel_proj, class_proj;
    Tensor query_token;
    LayerNorm agg_ln;
    Tensor agg_out_w, agg_out_b;
    Linear box_fc1, box_fc2;
    Tensor conv1_w, conv1_b, conv2_w, conv2_b;
    Linear map_proj, token_proj;

  private:
    ArtifactConfig config_;
    std::size_t grid_ = 0;
    std::size_t dim_ = 0;
};

/// Plain-number box from the head output tensor.
BBox to_bbox(const Tensor& box);

} // namespace fka
