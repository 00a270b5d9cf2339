#pragma once

// Differentiable ops over Tensor.
//
// Broadcasting is deliberately narrow: add_bias adds a rank-1 [d] vector to
// every row of a [... x d] tensor, and scale multiplies by a constant. All
// other binary ops require equal shapes.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mmfusion/kernels.hpp"
#include "mmfusion/tensor.hpp"

namespace mmf {

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// Rank-1 tensors act as a single row.
inline std::pair<std::size_t, std::size_t> as_matrix(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw ShapeError("expected a vector or matrix, got " + shape_str(s));
}

template <class T>
void axpy(std::vector<T>& dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

/// C = A * B for A [m x k] (or [k]) and B [k x n].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto [m, k] = detail::as_matrix(a.shape());
  if (b.rank() != 2 || b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  const std::size_t n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::gemm(kernels::Trans::No, kernels::Trans::No, m, n, k, a.data().data(),
                b.data().data(), out.data(), false);
  Shape shape = a.rank() == 1 ? Shape{n} : Shape{m, n};
  return detail::make_result<T>(std::move(shape), std::move(out), {&a, &b},
                                [m, n, k](Node<T>& self, const auto& in) {
    const auto& A = in[0];
    const auto& B = in[1];
    if (A->requires_grad)  // dA = dC * B^T
      kernels::gemm(kernels::Trans::No, kernels::Trans::Yes, m, k, n, self.grad.data(),
                    B->data.data(), A->ensure_grad().data(), true);
    if (B->requires_grad)  // dB = A^T * dC
      kernels::gemm(kernels::Trans::Yes, kernels::Trans::No, k, n, m, A->data.data(),
                    self.grad.data(), B->ensure_grad().data(), true);
  });
}

/// C = A * B^T for A [m x k] and B [n x k].
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) +
                     " * " + shape_str(b.shape()) + "^T");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(m * n);
  kernels::gemm(kernels::Trans::No, kernels::Trans::Yes, m, n, k, a.data().data(),
                b.data().data(), out.data(), false);
  return detail::make_result<T>({m, n}, std::move(out), {&a, &b},
                                [m, n, k](Node<T>& self, const auto& in) {
    const auto& A = in[0];
    const auto& B = in[1];
    if (A->requires_grad)  // dA = dC * B
      kernels::gemm(kernels::Trans::No, kernels::Trans::No, m, k, n, self.grad.data(),
                    B->data.data(), A->ensure_grad().data(), true);
    if (B->requires_grad)  // dB = dC^T * A
      kernels::gemm(kernels::Trans::Yes, kernels::Trans::No, n, k, m, self.grad.data(),
                    A->data.data(), B->ensure_grad().data(), true);
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b},
                                [](Node<T>& self, const auto& in) {
    for (const auto& p : in)
      if (p->requires_grad) detail::axpy(p->ensure_grad(), std::span<const T>(self.grad));
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b},
                                [](Node<T>& self, const auto& in) {
    const auto& A = in[0];
    const auto& B = in[1];
    if (A->requires_grad) {
      auto& g = A->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B->data[i];
    }
    if (B->requires_grad) {
      auto& g = B->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A->data[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  return detail::make_result<T>(x.shape(), std::move(out), {&x},
                                [c](Node<T>& self, const auto& in) {
    auto& g = in[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

/// x [... x d] + b [d], broadcast over leading axes.
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (b.rank() != 1 || x.rank() == 0 || x.shape().back() != b.dim(0))
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match " +
                     shape_str(x.shape()));
  const std::size_t d = b.dim(0);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + b[i % d];
  return detail::make_result<T>(x.shape(), std::move(out), {&x, &b},
                                [d](Node<T>& self, const auto& in) {
    if (in[0]->requires_grad) detail::axpy(in[0]->ensure_grad(), std::span<const T>(self.grad));
    if (in[1]->requires_grad) {
      auto& g = in[1]->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return detail::make_result<T>(x.shape(), std::move(out), {&x},
                                [](Node<T>& self, const auto& in) {
    auto& g = in[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[0]->data[i] > T(0)) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    // Evaluate on the side where exp cannot overflow.
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return detail::make_result<T>(x.shape(), std::move(out), {&x},
                                [](Node<T>& self, const auto& in) {
    auto& g = in[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.data[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

/// Softmax along `axis`, with max subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                     shape_str(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  std::vector<T> out(x.numel());
  if (inner == 1) {
    kernels::softmax_rows(outer, n, x.data().data(), out.data());
  } else {
    std::vector<T> row(n), res(n);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        for (std::size_t j = 0; j < n; ++j) row[j] = x[(o * n + j) * inner + i];
        kernels::softmax_rows_serial(std::size_t{1}, n, row.data(), res.data());
        for (std::size_t j = 0; j < n; ++j) out[(o * n + j) * inner + i] = res[j];
      }
  }
  return detail::make_result<T>(s, std::move(out), {&x},
                                [outer, inner, n](Node<T>& self, const auto& in) {
    auto& g = in[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const auto idx = (o * n + j) * inner + i;
          dot += self.grad[idx] * self.data[idx];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const auto idx = (o * n + j) * inner + i;
          g[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

/// Normalizes each slice along the last axis to zero mean and unit
/// (population) variance, then applies gain and bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError("layer_norm: empty last axis");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mean) * is;
      out[r * d + j] = xhat[r * d + j] * gain[j] + bias[j];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self,
                                                                      const auto& in) {
        const auto& X = in[0];
        const auto& G = in[1];
        const auto& B = in[2];
        if (G->requires_grad) {
          auto& gg = G->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gg[i % d] += self.grad[i] * xhat[i];
        }
        if (B->requires_grad) {
          auto& gb = B->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % d] += self.grad[i];
        }
        if (X->requires_grad) {
          auto& gx = X->ensure_grad();
          std::vector<T> dxhat(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = self.grad[r * d + j] * G->data[j];
              m1 += dxhat[j];
              m2 += dxhat[j] * xhat[r * d + j];
            }
            m1 /= T(d);
            m2 /= T(d);
            for (std::size_t j = 0; j < d; ++j)
              gx[r * d + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * d + j] * m2);
          }
        }
      });
}

/// Mean over the time (first) axis: [T x d] -> [d].
template <class T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("mean_pool: expected [T x d], got " + shape_str(x.shape()));
  const std::size_t t = x.dim(0), d = x.dim(1);
  if (t == 0) throw ShapeError("mean_pool: empty sequence");
  std::vector<T> out(d, T(0));
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t j = 0; j < d; ++j) out[j] += x[r * d + j];
  for (auto& v : out) v /= T(t);
  return detail::make_result<T>({d}, std::move(out), {&x}, [t, d](Node<T>& self, const auto& in) {
    auto& g = in[0]->ensure_grad();
    const T inv = T(1) / T(t);
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[j] * inv;
  });
}

/// Concatenates along the last (feature) axis. Inputs share all leading dims.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto [rows, first_w] = detail::as_matrix(parts[0].shape());
  (void)first_w;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto [r, w] = detail::as_matrix(p.shape());
    if (r != rows || p.rank() != parts[0].rank())
      throw ShapeError("concat: leading shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    widths.push_back(w);
    total += w;
  }
  std::vector<T> out(rows * total);
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto src = parts[i].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data() + r * widths[i], widths[i], out.data() + r * total + off);
    off += widths[i];
  }
  Shape shape = parts[0].rank() == 1 ? Shape{total} : Shape{rows, total};
  return detail::make_result_n<T>(std::move(shape), std::move(out), parts,
                                  [rows, total, widths](Node<T>& self, const auto& in) {
    std::size_t o = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i]->requires_grad) {
        auto& g = in[i]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[i]; ++j)
            g[r * widths[i] + j] += self.grad[r * total + o + j];
      }
      o += widths[i];
    }
  });
}

/// Columns [begin, end) of a [T x d] (or [d]) tensor.
template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const auto [rows, d] = detail::as_matrix(x.shape());
  if (begin >= end || end > d)
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for width " + std::to_string(d));
  const std::size_t w = end - begin;
  std::vector<T> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().data() + r * d + begin, w, out.data() + r * w);
  Shape shape = x.rank() == 1 ? Shape{w} : Shape{rows, w};
  return detail::make_result<T>(std::move(shape), std::move(out), {&x},
                                [rows, d, w, begin](Node<T>& self, const auto& in) {
    auto& g = in[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) g[r * d + begin + j] += self.grad[r * w + j];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return detail::make_result<T>({1}, {s}, {&x}, [](Node<T>& self, const auto& in) {
    auto& g = in[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

/// sum_i weights[i] * terms[i] over scalar tensors, accumulated left to right.
template <class T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size() || terms.empty())
    throw ShapeError("weighted_sum: " + std::to_string(terms.size()) + " terms vs " +
                     std::to_string(weights.size()) + " weights");
  T s = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].numel() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    s += weights[i] * terms[i].item();
  }
  return detail::make_result_n<T>({1}, {s}, terms, [weights](Node<T>& self, const auto& in) {
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i]->requires_grad) in[i]->ensure_grad()[0] += weights[i] * self.grad[0];
  });
}

/// Inverted dropout; identity when rate == 0.
template <class T, class Rng>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const T s = T(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? s : T(0);
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

}  // namespace mmf
