#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fka/tensor.hpp"

// Differentiable operations. Every function records a backward rule when
// grad mode is on and at least one input requires grad. Defined for float and
// double.
//
// Broadcasting is deliberately narrow: binary elementwise ops accept equal
// shapes, a one-element operand, or a row vector matching the last dimension.

namespace fka {

// Elementwise.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> maximum(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> minimum(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s);
template <typename T> BasicTensor<T> mul_scalar(const BasicTensor<T>& a, T s);
template <typename T> BasicTensor<T> pow_scalar(const BasicTensor<T>& a, T p);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> abs(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
/// tanh approximation of GELU.
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& a);

// Reductions.
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);

// Structure.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin, std::size_t end);
template <typename T> BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t begin, std::size_t end);
template <typename T> BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& parts);
template <typename T> BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts);
/// Row gather: out[i] = table[ids[i]].
template <typename T> BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int> ids);
/// out[i] = x[i, idx[i]] for a rank-2 x.
template <typename T> BasicTensor<T> pick(const BasicTensor<T>& x, std::span<const int> idx);

// Linear algebra.
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x·W + b with W stored [in × out]. `b` may be undefined.
template <typename T> BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

// Normalization.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x, int axis = -1);
template <typename T> BasicTensor<T> log_softmax(const BasicTensor<T>& x, int axis = -1);
/// Normalizes each row of a rank-2 x; gamma/beta may be undefined.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          T eps = T(1e-5));
template <typename T> BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x, T eps = T(1e-12));

// Attention.
/// out[i] = Σ_j softmax_j(<Q[i],K[j]>/√D) V[j]. `mask`, when defined, is an
/// additive [q × k] constant (large negative entries block a key).
template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         const BasicTensor<T>& mask = {});
/// Heads attend over contiguous column slices of width D/heads; the
/// concatenated result passes through the output projection (w_out, b_out).
template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                                    std::size_t heads, const BasicTensor<T>& w_out, const BasicTensor<T>& b_out,
                                    const BasicTensor<T>& mask = {});

// Convolution on [h × w × c] inputs with kernels [k × k × c_in × c_out], no
// padding. Transposed: h' = (h-1)·stride + k. Forward: h' = (h-k)/stride + 1.
template <typename T>
BasicTensor<T> transposed_conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                                 std::size_t stride);
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      std::size_t stride);

/// Additive causal mask [n × n]: 0 on and below the diagonal, -1e9 above.
template <typename T> BasicTensor<T> causal_mask(std::size_t n);

} // namespace fka
