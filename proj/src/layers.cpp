#include "mmfusion/layers.hpp"

#include <cmath>

namespace mmf {

template <class T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values), true);
}

template <class T>
Linear<T> Linear<T>::create(std::size_t in, std::size_t out, Rng& rng) {
  if (in == 0 || out == 0) throw ConfigError("linear layer dimensions must be positive");
  Linear l;
  l.weight = uniform_fan_in<T>({in, out}, in, rng);
  l.bias = uniform_fan_in<T>({out}, in, rng);
  return l;
}

template <class T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  return add_bias(matmul(x, weight), bias);
}

template <class T>
void Linear<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

template <class T>
LayerNormParams<T> LayerNormParams<T>::create(std::size_t d) {
  LayerNormParams p;
  p.gain = Tensor<T>({d}, std::vector<T>(d, T(1)), true);
  p.bias = Tensor<T>({d}, std::vector<T>(d, T(0)), true);
  return p;
}

template <class T>
void LayerNormParams<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

template <class T>
MultiHeadAttentionParams<T> MultiHeadAttentionParams<T>::create(std::size_t d_model,
                                                                std::size_t heads, Rng& rng) {
  MultiHeadAttentionParams p;
  p.heads = heads;
  p.d_model = d_model;
  p.validate();
  p.w_q = uniform_fan_in<T>({d_model, d_model}, d_model, rng);
  p.w_k = uniform_fan_in<T>({d_model, d_model}, d_model, rng);
  p.w_v = uniform_fan_in<T>({d_model, d_model}, d_model, rng);
  p.w_o = uniform_fan_in<T>({d_model, d_model}, d_model, rng);
  return p;
}

template <class T>
void MultiHeadAttentionParams<T>::validate() const {
  if (heads == 0 || d_model == 0)
    throw ConfigError("attention: heads and d_model must be positive");
  if (d_model % heads != 0)
    throw ConfigError("attention: d_model " + std::to_string(d_model) +
                      " is not divisible by head count " + std::to_string(heads));
  const Shape sq{d_model, d_model};
  for (const auto* w : {&w_q, &w_k, &w_v, &w_o})
    if (w->defined() && w->shape() != sq)
      throw ConfigError("attention: projection shape " + shape_str(w->shape()) +
                        " inconsistent with d_model " + std::to_string(d_model));
}

template <class T>
void MultiHeadAttentionParams<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".w_q", w_q);
  out.emplace_back(prefix + ".w_k", w_k);
  out.emplace_back(prefix + ".w_v", w_v);
  out.emplace_back(prefix + ".w_o", w_o);
}

template <class T>
TransformerLayerParams<T> TransformerLayerParams<T>::create(std::size_t d_model, std::size_t heads,
                                                            std::size_t d_ff, double dropout,
                                                            bool pre_norm, Rng& rng) {
  if (d_ff == 0) throw ConfigError("transformer: feed-forward width must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("transformer: dropout must be in [0,1)");
  TransformerLayerParams p;
  p.attention = MultiHeadAttentionParams<T>::create(d_model, heads, rng);
  p.ffn_in = Linear<T>::create(d_model, d_ff, rng);
  p.ffn_out = Linear<T>::create(d_ff, d_model, rng);
  p.norm1 = LayerNormParams<T>::create(d_model);
  p.norm2 = LayerNormParams<T>::create(d_model);
  p.dropout = dropout;
  p.pre_norm = pre_norm;
  return p;
}

template <class T>
void TransformerLayerParams<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  attention.collect(prefix + ".attn", out);
  ffn_in.collect(prefix + ".ffn_in", out);
  ffn_out.collect(prefix + ".ffn_out", out);
  norm1.collect(prefix + ".norm1", out);
  norm2.collect(prefix + ".norm2", out);
}

template <class T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k,
                                       const Tensor<T>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw ShapeError("attention: Q, K, V must be matrices");
  if (q.dim(1) != k.dim(1))
    throw ShapeError("attention: Q " + shape_str(q.shape()) + " and K " + shape_str(k.shape()) +
                     " disagree on d_k");
  if (k.dim(0) != v.dim(0))
    throw ShapeError("attention: K " + shape_str(k.shape()) + " and V " + shape_str(v.shape()) +
                     " disagree on sequence length");
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(q.dim(1)));
  auto weights = softmax(scale(matmul_nt(q, k), inv_sqrt_dk), 1);
  return matmul(weights, v);
}

template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& x_q, const Tensor<T>& x_kv,
                               const MultiHeadAttentionParams<T>& params) {
  params.validate();
  const std::size_t d = params.d_model;
  if (x_q.rank() != 2 || x_kv.rank() != 2 || x_q.dim(1) != d || x_kv.dim(1) != d)
    throw ShapeError("multi_head_attention: inputs " + shape_str(x_q.shape()) + ", " +
                     shape_str(x_kv.shape()) + " do not match d_model " + std::to_string(d));
  const auto q = matmul(x_q, params.w_q);
  const auto k = matmul(x_kv, params.w_k);
  const auto v = matmul(x_kv, params.w_v);
  if (params.heads == 1) return matmul(scaled_dot_product_attention(q, k, v), params.w_o);
  const std::size_t dk = d / params.heads;
  std::vector<Tensor<T>> heads;
  heads.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    const std::size_t b = h * dk, e = b + dk;
    heads.push_back(scaled_dot_product_attention(slice_cols(q, b, e), slice_cols(k, b, e),
                                                 slice_cols(v, b, e)));
  }
  return matmul(concat_cols(heads), params.w_o);
}

template <class T>
Tensor<T> sinusoidal_positional_encoding(std::size_t length, std::size_t d_model) {
  if (length == 0) throw ContractError("positional encoding: length must be >= 1");
  if (d_model == 0 || d_model % 2 != 0)
    throw ContractError("positional encoding: d_model must be even, got " +
                        std::to_string(d_model));
  std::vector<T> pe(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / double(d_model));
      const double angle = static_cast<double>(pos) * freq;
      pe[pos * d_model + 2 * i] = static_cast<T>(std::sin(angle));
      pe[pos * d_model + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  return Tensor<T>({length, d_model}, std::move(pe));
}

template <class T>
Tensor<T> add_positional_encoding(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("positional encoding: expected [T x d]");
  return add(x, sinusoidal_positional_encoding<T>(x.dim(0), x.dim(1)));
}

namespace {

template <class T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double rate, ForwardMode mode) {
  if (!mode.training || rate <= 0.0) return x;
  if (!mode.rng) throw ContractError("dropout in training mode needs an rng");
  return dropout(x, rate, *mode.rng);
}

template <class T>
Tensor<T> encoder_layer(const Tensor<T>& x, const Tensor<T>& query_source,
                        const TransformerLayerParams<T>& p, ForwardMode mode) {
  if (x.rank() != 2 || x.dim(1) != p.d_model() || query_source.rank() != 2 ||
      query_source.dim(1) != p.d_model())
    throw ShapeError("transformer layer: input " + shape_str(x.shape()) +
                     " does not match d_model " + std::to_string(p.d_model()));
  if (query_source.dim(0) != x.dim(0))
    throw ShapeError("transformer layer: query sequence length differs from residual stream");
  auto ffn = [&](const Tensor<T>& y) { return p.ffn_out.forward(relu(p.ffn_in.forward(y))); };
  if (p.pre_norm) {
    const auto xn = p.norm1.forward(x);
    const auto qn = query_source.node() == x.node() ? xn : p.norm1.forward(query_source);
    const auto y = add(x, maybe_dropout(multi_head_attention(qn, xn, p.attention), p.dropout, mode));
    return add(y, maybe_dropout(ffn(p.norm2.forward(y)), p.dropout, mode));
  }
  const auto attn = multi_head_attention(query_source, x, p.attention);
  const auto y = p.norm1.forward(add(x, maybe_dropout(attn, p.dropout, mode)));
  return p.norm2.forward(add(y, maybe_dropout(ffn(y), p.dropout, mode)));
}

}  // namespace

template <class T>
Tensor<T> transformer_layer_forward(const Tensor<T>& x, const TransformerLayerParams<T>& params,
                                    ForwardMode mode) {
  return encoder_layer(x, x, params, mode);
}

template <class T>
Tensor<T> cross_transformer_layer_forward(const Tensor<T>& x, const Tensor<T>& query_source,
                                          const TransformerLayerParams<T>& params,
                                          ForwardMode mode) {
  return encoder_layer(x, query_source, params, mode);
}

#define MMF_INSTANTIATE(T)                                                                     \
  template Tensor<T> uniform_fan_in<T>(Shape, std::size_t, Rng&);                             \
  template struct Linear<T>;                                                                   \
  template struct LayerNormParams<T>;                                                          \
  template struct MultiHeadAttentionParams<T>;                                                 \
  template struct TransformerLayerParams<T>;                                                   \
  template Tensor<T> scaled_dot_product_attention<T>(const Tensor<T>&, const Tensor<T>&,      \
                                                     const Tensor<T>&);                        \
  template Tensor<T> multi_head_attention<T>(const Tensor<T>&, const Tensor<T>&,              \
                                             const MultiHeadAttentionParams<T>&);              \
  template Tensor<T> sinusoidal_positional_encoding<T>(std::size_t, std::size_t);             \
  template Tensor<T> add_positional_encoding<T>(const Tensor<T>&);                            \
  template Tensor<T> transformer_layer_forward<T>(const Tensor<T>&,                           \
                                                  const TransformerLayerParams<T>&, ForwardMode); \
  template Tensor<T> cross_transformer_layer_forward<T>(                                      \
      const Tensor<T>&, const Tensor<T>&, const TransformerLayerParams<T>&, ForwardMode);

MMF_INSTANTIATE(float)
MMF_INSTANTIATE(double)
#undef MMF_INSTANTIATE

}  // namespace mmf
