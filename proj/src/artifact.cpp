#include "fka/artifact.hpp"

#include <cmath>

#include "fka/errors.hpp"

namespace fka {

ArtifactModule::ArtifactModule(ParameterStore& store, const std::string& name, std::size_t patch_dim,
                               std::size_t text_dim, std::size_t grid, std::size_t lm_dim, const ArtifactConfig& config,
                               Rng& rng)
    : config_(config), grid_(grid), dim_(patch_dim) {
    const std::size_t c = patch_dim;
    if (config.agg_heads == 0 || c % config.agg_heads != 0) throw ConfigError(name + ": dim not divisible by heads");
    deconv1_w = store.uniform(name + ".deconv1.weight", Shape{2, 2, c, c}, c, rng);
    deconv1_b = store.zeros(name + ".deconv1.bias", Shape{c});
    deconv2_w = store.uniform(name + ".deconv2.weight", Shape{2, 2, c, c}, c, rng);
    deconv2_b = store.zeros(name + ".deconv2.bias", Shape{c});
    pixel_proj = Linear(store, name + ".pixel_proj", c, config.shared_dim, rng);
    class_proj = Linear(store, name + ".class_proj", text_dim, config.shared_dim, rng);

    query_token = store.uniform(name + ".query_token", Shape{1, c}, 1, rng);
    agg_ln = LayerNorm(store, name + ".agg_ln", c);
    agg_out_w = store.uniform(name + ".agg_out.weight", Shape{c, c}, c, rng);
    agg_out_b = store.zeros(name + ".agg_out.bias", Shape{c});
    box_fc1 = Linear(store, name + ".box_fc1", c, c, rng);
    box_fc2 = Linear(store, name + ".box_fc2", c, 4, rng);

    conv1_w = store.uniform(name + ".map_conv1.weight", Shape{2, 2, 2, 16}, 8, rng);
    conv1_b = store.zeros(name + ".map_conv1.bias", Shape{16});
    conv2_w = store.uniform(name + ".map_conv2.weight", Shape{2, 2, 16, 32}, 64, rng);
    conv2_b = store.zeros(name + ".map_conv2.bias", Shape{32});
    const std::size_t flat = (side() / 4) * (side() / 4) * 32;
    map_proj = Linear(store, name + ".map_proj", flat, lm_dim, rng);
    token_proj = Linear(store, name + ".token_proj", c, lm_dim, rng);
}

Tensor ArtifactModule::pixel_decode(const Tensor& u_pat) const {
    const std::size_t hw = u_pat.dim(0);
    const auto g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(hw))));
    if (g * g != hw) throw ConfigError("pixel decoder needs a square patch grid, got " + std::to_string(hw) + " patches");
    if (g != grid_ || u_pat.dim(1) != dim_) {
        throw DimensionError("pixel decoder built for " + std::to_string(grid_ * grid_) + "x" + std::to_string(dim_) +
                             ", got " + shape_str(u_pat.shape()));
    }
    auto x = reshape(u_pat, Shape{g, g, dim_});
    x = relu(transposed_conv2d(x, deconv1_w, deconv1_b, 2));
    x = transposed_conv2d(x, deconv2_w, deconv2_b, 2);
    const std::size_t side = x.dim(0);
    return reshape(x, Shape{side * side, dim_});
}

Tensor ArtifactModule::similarity(const Tensor& f_h, const Tensor& class_features) const {
    auto h = l2_normalize_rows(pixel_proj(f_h));
    auto p = l2_normalize_rows(class_proj(class_features));
    return matmul(h, transpose(p));
}

Tensor ArtifactModule::segmentation(const Tensor& w) const {
    return config_.log_softmax_map ? log_softmax(w) : softmax(w);
}

Tensor ArtifactModule::aggregate(const Tensor& u_pat) const {
    if (u_pat.dim(0) == 0) throw InputError("artifact aggregation over an empty patch set");
    auto kv = agg_ln(u_pat);
    return multi_head_attention(query_token, kv, kv, config_.agg_heads, agg_out_w, agg_out_b);
}

Tensor ArtifactModule::predict_box(const Tensor& u_agg) const {
    // sigmoid → (cx, cy, w, h); half extents are scaled by the distance to the
    // nearest border so the box always stays inside the unit square.
    auto s = sigmoid(box_fc2(relu(box_fc1(u_agg))));
    auto cx = slice_cols(s, 0, 1), cy = slice_cols(s, 1, 2);
    auto w = slice_cols(s, 2, 3), h = slice_cols(s, 3, 4);
    auto room_x = minimum(cx, add_scalar(mul_scalar(cx, -1.0f), 1.0f));
    auto room_y = minimum(cy, add_scalar(mul_scalar(cy, -1.0f), 1.0f));
    auto hx = mul(w, room_x), hy = mul(h, room_y);
    return reshape(concat_cols(std::vector<Tensor>{sub(cx, hx), sub(cy, hy), add(cx, hx), add(cy, hy)}), Shape{4});
}

Tensor ArtifactModule::map_embedding(const Tensor& m_s) const {
    const std::size_t s = side();
    auto x = reshape(m_s, Shape{s, s, 2});
    x = relu(conv2d(x, conv1_w, conv1_b, 2));
    x = relu(conv2d(x, conv2_w, conv2_b, 2));
    return map_proj(reshape(x, Shape{1, x.numel()}));
}

Tensor ArtifactModule::token_embedding(const Tensor& u_agg) const { return token_proj(u_agg); }

ArtifactOutput ArtifactModule::operator()(const Tensor& u_pat, const Tensor& class_features) const {
    ArtifactOutput out;
    out.side = side();
    out.f_h = pixel_decode(u_pat);
    out.w = similarity(out.f_h, class_features);
    out.m_s = segmentation(out.w);
    out.u_agg = aggregate(u_pat);
    out.box = predict_box(out.u_agg);
    out.map_embedding = map_embedding(out.m_s);
    out.token_embedding = token_embedding(out.u_agg);
    return out;
}

BBox to_bbox(const Tensor& box) {
    if (box.numel() != 4) throw DimensionError("box tensor " + shape_str(box.shape()));
    return {box[0], box[1], box[2], box[3]};
}

} // namespace fka
