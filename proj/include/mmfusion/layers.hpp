#pragma once

// Attention and transformer-encoder building blocks.

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mmfusion/ops.hpp"

namespace mmf {

using Rng = std::mt19937_64;

/// Uniform in +-sqrt(1/fan_in).
template <class T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng);

template <class T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]

  static Linear create(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

template <class T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;
  T eps = T(1e-5);

  static LayerNormParams create(std::size_t d);
  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gain, bias, eps); }
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

/// Packed projections: each of W_Q, W_K, W_V is one [d_model x d_model]
/// matrix whose column blocks of width d_model/heads belong to one head.
template <class T>
struct MultiHeadAttentionParams {
  std::size_t heads = 1;
  std::size_t d_model = 0;
  Tensor<T> w_q, w_k, w_v, w_o;

  static MultiHeadAttentionParams create(std::size_t d_model, std::size_t heads, Rng& rng);
  void validate() const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

template <class T>
struct TransformerLayerParams {
  MultiHeadAttentionParams<T> attention;
  Linear<T> ffn_in;   // d_model -> d_ff
  Linear<T> ffn_out;  // d_ff -> d_model
  LayerNormParams<T> norm1;
  LayerNormParams<T> norm2;
  double dropout = 0.1;
  bool pre_norm = false;

  static TransformerLayerParams create(std::size_t d_model, std::size_t heads, std::size_t d_ff,
                                       double dropout, bool pre_norm, Rng& rng);
  std::size_t d_model() const { return attention.d_model; }
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

/// softmax(Q K^T / sqrt(d_k)) V.
template <class T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);

/// Queries are projected from x_q, keys and values from x_kv. Passing the same
/// tensor twice gives self-attention.
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& x_q, const Tensor<T>& x_kv,
                               const MultiHeadAttentionParams<T>& params);

/// PE[pos][2i] = sin(pos / 10000^(2i/d)), PE[pos][2i+1] = cos(same).
template <class T>
Tensor<T> sinusoidal_positional_encoding(std::size_t length, std::size_t d_model);

/// Adds positional encoding to a [T x d] sequence.
template <class T>
Tensor<T> add_positional_encoding(const Tensor<T>& x);

/// Dropout settings for a forward pass. `rng` may be null when not training.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;
};

/// Self-attention encoder layer. Post-norm:
///   y = LN1(x + Drop(MHA(x, x)));  out = LN2(y + Drop(FFN(y))).
template <class T>
Tensor<T> transformer_layer_forward(const Tensor<T>& x, const TransformerLayerParams<T>& params,
                                    ForwardMode mode);

/// Same layer with queries taken from `query_source` while keys, values and the
/// residual path come from `x`.
template <class T>
Tensor<T> cross_transformer_layer_forward(const Tensor<T>& x, const Tensor<T>& query_source,
                                          const TransformerLayerParams<T>& params,
                                          ForwardMode mode);

template <class T>
Tensor<T> mean_pool(const Tensor<T>& x) {
  return mean_rows(x);
}

}  // namespace mmf
