#include "fka/nn.hpp"

#include <cmath>

namespace fka {

Tensor ParameterStore::add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    value.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, value});
    return value;
}

Tensor ParameterStore::uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
    return add(name, Tensor(std::move(shape), std::move(data)));
}

Tensor ParameterStore::zeros(const std::string& name, Shape shape) { return add(name, Tensor::zeros(shape)); }

Tensor ParameterStore::ones(const std::string& name, Shape shape) { return add(name, Tensor::full(shape, 1.0f)); }

std::vector<NamedParameter> ParameterStore::with_prefix(std::string_view prefix) const {
    std::vector<NamedParameter> out;
    for (const auto& e : entries_)
        if (std::string_view(e.name).starts_with(prefix)) out.push_back(e);
    return out;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].value;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
}

void ParameterStore::set_trainable(std::string_view prefix, bool trainable) {
    for (auto& e : entries_)
        if (std::string_view(e.name).starts_with(prefix)) e.value.set_requires_grad(trainable);
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool with_bias) {
    weight = store.uniform(name + ".weight", Shape{in, out}, in, rng);
    if (with_bias) bias = store.zeros(name + ".bias", Shape{out});
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim) {
    gamma = store.ones(name + ".gamma", Shape{dim});
    beta = store.zeros(name + ".beta", Shape{dim});
}

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name, std::size_t dim,
                                   std::size_t heads_, std::size_t mlp_dim, Rng& rng)
    : heads(heads_) {
    if (heads == 0 || dim % heads != 0) {
        throw ConfigError(name + ": dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads));
    }
    ln_attn = LayerNorm(store, name + ".ln_attn", dim);
    q_proj = Linear(store, name + ".q", dim, dim, rng);
    k_proj = Linear(store, name + ".k", dim, dim, rng);
    v_proj = Linear(store, name + ".v", dim, dim, rng);
    out_w = store.uniform(name + ".out.weight", Shape{dim, dim}, dim, rng);
    out_b = store.zeros(name + ".out.bias", Shape{dim});
    ln_mlp = LayerNorm(store, name + ".ln_mlp", dim);
    fc1 = Linear(store, name + ".fc1", dim, mlp_dim, rng);
    fc2 = Linear(store, name + ".fc2", mlp_dim, dim, rng);
}

Tensor TransformerBlock::operator()(const Tensor& x, const Tensor& mask) const {
    auto h = ln_attn(x);
    auto attn = multi_head_attention(q_proj(h), k_proj(h), v_proj(h), heads, out_w, out_b, mask);
    auto y = add(x, attn);
    return add(y, fc2(gelu(fc1(ln_mlp(y)))));
}

} // namespace fka
