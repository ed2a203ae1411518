#pragma once

#include <string>

#include "fka/nn.hpp"

namespace fka {

struct CrossModalConfig {
    std::size_t dim = 64;     // shared attention dimension after the adapters
    std::size_t heads = 1;
    bool residual = true;     // u = adapted query + attention
};

struct CrossModalOutput {
    Tensor u_v;  // [(1 + hw) × dim], image rows as queries
    Tensor u_t;  // [(1 + n) × dim], text rows as queries

    Tensor u_v_cls() const { return slice_rows(u_v, 0, 1); }
    Tensor u_v_patches() const { return slice_rows(u_v, 1, u_v.dim(0)); }
    Tensor u_t_cls() const { return slice_rows(u_t, 0, 1); }
};

/// One attention branch: queries from one modality, keys/values from the other.
struct CrossAttentionBranch {
    LayerNorm ln_q, ln_k;
    Linear q_proj, k_proj;
    Tensor out_w, out_b;  // only with heads > 1
    std::size_t heads = 1;

    CrossAttentionBranch() = default;
    CrossAttentionBranch(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng);
    /// Attention(q_src, kv_src, kv_src) with normalized, projected queries
    /// and keys; values are kv_src itself.
    Tensor operator()(const Tensor& q_src, const Tensor& kv_src) const;
};

class CrossModal {
  public:
    CrossModal() = default;
    CrossModal(ParameterStore& store, const std::string& name, std::size_t image_dim, std::size_t text_dim,
               std::size_t lm_dim, const CrossModalConfig& config, Rng& rng);

    /// f_v: [(1 + hw) × C_img] fused image rows (cls first); f_t: [(1 + n) × C_text].
    CrossModalOutput operator()(const Tensor& f_v, const Tensor& f_t) const;
    /// concat(u_v cls, u_t cls) → linear → [1 × C_lm].
    Tensor semantic(const Tensor& u_v_cls, const Tensor& u_t_cls) const;

    const Linear& image_adapter() const { return image_adapter_; }
    const Linear& text_adapter() const { return text_adapter_; }
    const Linear& projector() const { return projector_; }
    const CrossModalConfig& config() const { return config_; }

  private:
    CrossModalConfig config_;
    Linear image_adapter_, text_adapter_;
    CrossAttentionBranch image_branch_, text_branch_;
    Linear projector_;
};

} // namespace fka
