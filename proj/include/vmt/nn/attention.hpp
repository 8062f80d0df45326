#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vmt/nn/params.hpp"

namespace vmt::nn {

/// softmax(Q Kᵀ / sqrt(d_k)) V for Q [n, d], K [m, d], V [m, d_v].
///
/// With `causal`, query i sees keys 0..i+offset (offset = m - n, so a block
/// of new queries appended after cached keys lines up with the end).
/// `weights_out`, when given, receives the post-softmax weight matrix.
template <Real T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal,
                               const ForwardContext& ctx = {}, Tensor<T>* weights_out = nullptr) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("attention expects matrices, got Q " + to_string(q.shape()) + ", K " + to_string(k.shape()) +
                     ", V " + to_string(v.shape()));
  }
  if (k.dim(0) != v.dim(0)) {
    throw ShapeError("attention: K " + to_string(k.shape()) + " and V " + to_string(v.shape()) + " differ in length");
  }
  if (q.dim(1) != k.dim(1)) {
    throw ShapeError("attention: Q " + to_string(q.shape()) + " and K " + to_string(k.shape()) + " differ in d_k");
  }
  if (causal && q.dim(0) > k.dim(0)) {
    throw ShapeError("causal mask needs at least as many keys as queries, got Q " + to_string(q.shape()) + " and K " +
                     to_string(k.shape()));
  }
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(q.dim(1)));
  auto scores = scale(matmul_nt(q, k), inv_sqrt);
  if (causal) scores = mask_future(scores, k.dim(0) - q.dim(0));
  auto weights = softmax(scores);
  if (weights_out) *weights_out = weights;
  return matmul(ctx.drop(weights), v);
}

enum class CrossAttentionMode {
  Standard,      // Q from the decoder, K and V from the encoder
  PaperLiteral,  // Q and K from the encoder, V from the decoder
};

/// Multi-head attention with per-head projections packed column-wise into
/// [H, H] matrices (head j owns columns j*d_k .. (j+1)*d_k) and an output
/// projection W^O. No projection biases.
template <Real T>
struct MultiHeadAttention {
  Tensor<T> w_q, w_k, w_v, w_o;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParamStore<T>& store, const std::string& prefix, std::size_t width, std::size_t heads,
                                   Rng& rng) {
    if (heads == 0 || width % heads != 0) {
      throw ShapeError("attention heads (" + std::to_string(heads) + ") must divide the width " + std::to_string(width));
    }
    MultiHeadAttention m;
    m.w_q = store.add(prefix + ".w_q", {width, width}, Init::XavierUniform, rng);
    m.w_k = store.add(prefix + ".w_k", {width, width}, Init::XavierUniform, rng);
    m.w_v = store.add(prefix + ".w_v", {width, width}, Init::XavierUniform, rng);
    m.w_o = store.add(prefix + ".w_o", {width, width}, Init::XavierUniform, rng);
    m.heads = heads;
    return m;
  }

  std::size_t width() const { return w_q.dim(0); }
  std::size_t head_dim() const { return width() / heads; }

  /// Attention over already-projected Q [n, H], K [m, H], V [m, H]; returns
  /// the W^O-projected result [n, H].
  Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal, const ForwardContext& ctx) const {
    if (heads == 1) return matmul(scaled_dot_attention(q, k, v, causal, ctx), w_o);
    const std::size_t d = head_dim();
    std::vector<Tensor<T>> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      outs.push_back(scaled_dot_attention(slice(q, 1, h * d, (h + 1) * d), slice(k, 1, h * d, (h + 1) * d),
                                          slice(v, 1, h * d, (h + 1) * d), causal, ctx));
    }
    return matmul(concat(outs, 1), w_o);
  }

  /// Self-attention (intra-attention) over x [n, H].
  Tensor<T> self_attention(const Tensor<T>& x, bool causal, const ForwardContext& ctx) const {
    return attend(matmul(x, w_q), matmul(x, w_k), matmul(x, w_v), causal, ctx);
  }

  /// Decoder-to-encoder attention (inter-attention): dec [n, H], enc [m, H].
  Tensor<T> cross_attention(const Tensor<T>& dec, const Tensor<T>& enc, CrossAttentionMode mode, const ForwardContext& ctx) const {
    if (mode == CrossAttentionMode::Standard) return attend(matmul(dec, w_q), matmul(enc, w_k), matmul(enc, w_v), false, ctx);
    return literal_attend(literal_weights(enc, ctx), matmul(dec, w_v));
  }

  // Encoder-side queries and keys leave no decoder axis to attend along, so
  // the literal assignment attends across feature channels instead: per
  // head A = softmax(Q_hᵀ K_h / sqrt(d_k)) is [d_k, d_k] and each decoder row
  // mixes its own value channels, out_h = V_h Aᵀ. Rows stay independent,
  // which keeps the decoder causal.
  std::vector<Tensor<T>> literal_weights(const Tensor<T>& enc, const ForwardContext& ctx) const {
    auto q = matmul(enc, w_q), k = matmul(enc, w_k);
    const std::size_t d = head_dim();
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(d));
    std::vector<Tensor<T>> weights;
    for (std::size_t h = 0; h < heads; ++h) {
      auto qh = slice(q, 1, h * d, (h + 1) * d), kh = slice(k, 1, h * d, (h + 1) * d);
      weights.push_back(ctx.drop(softmax(scale(matmul(transpose(qh), kh), inv_sqrt))));
    }
    return weights;
  }

  Tensor<T> literal_attend(const std::vector<Tensor<T>>& weights, const Tensor<T>& v) const {
    const std::size_t d = head_dim();
    std::vector<Tensor<T>> outs;
    for (std::size_t h = 0; h < heads; ++h) outs.push_back(matmul_nt(slice(v, 1, h * d, (h + 1) * d), weights[h]));
    return matmul(heads == 1 ? outs.front() : concat(outs, 1), w_o);
  }
};

}  // namespace vmt::nn
