#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fka/ops.hpp"
#include "fka/rng.hpp"
#include "fka/tensor.hpp"

namespace fka {

struct NamedParameter {
    std::string name;
    Tensor value;
};

/// Owns every learnable tensor of a model under a unique dotted name, in
/// registration order. The order is the checkpoint order.
class ParameterStore {
  public:
    /// Uniform in ±1/√fan_in.
    Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
    Tensor zeros(const std::string& name, Shape shape);
    Tensor ones(const std::string& name, Shape shape);
    Tensor add(const std::string& name, Tensor value);

    const std::vector<NamedParameter>& entries() const { return entries_; }
    std::vector<NamedParameter> with_prefix(std::string_view prefix) const;
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t scalar_count() const;

    /// Sets requires_grad on every parameter whose name starts with `prefix`.
    void set_trainable(std::string_view prefix, bool trainable);

  private:
    std::vector<NamedParameter> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Rng for one module, independent of how many other modules exist.
inline Rng module_rng(std::uint64_t seed, std::string_view module) { return Rng(hash_combine(seed, hash_string(module))); }

struct Linear {
    Tensor weight;  // [in × out]
    Tensor bias;    // [out], may be undefined

    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           bool with_bias = true);
    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

/// Pre-norm transformer block: x + MHA(LN x), then x + MLP(LN x).
struct TransformerBlock {
    LayerNorm ln_attn;
    Linear q_proj, k_proj, v_proj;
    Tensor out_w, out_b;
    LayerNorm ln_mlp;
    Linear fc1, fc2;
    std::size_t heads = 1;

    TransformerBlock() = default;
    TransformerBlock(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                     std::size_t mlp_dim, Rng& rng);
    Tensor operator()(const Tensor& x, const Tensor& mask = {}) const;
};

} // namespace fka
