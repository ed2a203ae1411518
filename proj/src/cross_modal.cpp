#include "fka/cross_modal.hpp"

#include "fka/errors.hpp"

namespace fka {

CrossAttentionBranch::CrossAttentionBranch(ParameterStore& store, const std::string& name, std::size_t dim,
                                           std::size_t heads_, Rng& rng)
    : heads(heads_) {
    if (heads == 0 || dim % heads != 0) throw ConfigError(name + ": dim not divisible by heads");
    ln_q = LayerNorm(store, name + ".ln_q", dim);
    ln_k = LayerNorm(store, name + ".ln_k", dim);
    q_proj = Linear(store, name + ".q", dim, dim, rng);
    k_proj = Linear(store, name + ".k", dim, dim, rng);
    if (heads > 1) {
        out_w = store.uniform(name + ".out.weight", Shape{dim, dim}, dim, rng);
        out_b = store.zeros(name + ".out.bias", Shape{dim});
    }
}

Tensor CrossAttentionBranch::operator()(const Tensor& q_src, const Tensor& kv_src) const {
    if (kv_src.dim(0) == 0) throw InputError("cross attention over an empty sequence");
    auto q = q_proj(ln_q(q_src));
    auto k = k_proj(ln_k(kv_src));
    if (heads == 1) return attention(q, k, kv_src);
    return multi_head_attention(q, k, kv_src, heads, out_w, out_b);
}

CrossModal::CrossModal(ParameterStore& store, const std::string& name, std::size_t image_dim, std::size_t text_dim,
                       std::size_t lm_dim, const CrossModalConfig& config, Rng& rng)
    : config_(config) {
    image_adapter_ = Linear(store, name + ".image_adapter", image_dim, config.dim, rng);
    text_adapter_ = Linear(store, name + ".text_adapter", text_dim, config.dim, rng);
    image_branch_ = CrossAttentionBranch(store, name + ".image_branch", config.dim, config.heads, rng);
    text_branch_ = CrossAttentionBranch(store, name + ".text_branch", config.dim, config.heads, rng);
    projector_ = Linear(store, name + ".semantic_projector", 2 * config.dim, lm_dim, rng);
}

CrossModalOutput CrossModal::operator()(const Tensor& f_v, const Tensor& f_t) const {
    if (f_t.rank() != 2 || f_t.dim(0) == 0) throw InputError("cross-modal reasoning needs a non-empty text sequence");
    const auto a_v = image_adapter_(f_v);
    const auto a_t = text_adapter_(f_t);
    CrossModalOutput out;
    out.u_v = image_branch_(a_v, a_t);
    out.u_t = text_branch_(a_t, a_v);
    if (config_.residual) {
        out.u_v = add(a_v, out.u_v);
        out.u_t = add(a_t, out.u_t);
    }
    return out;
}

Tensor CrossModal::semantic(const Tensor& u_v_cls, const Tensor& u_t_cls) const {
    return projector_(concat_cols(std::vector<Tensor>{u_v_cls, u_t_cls}));
}

} // namespace fka
