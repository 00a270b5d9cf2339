#pragma once

#include <cmath>
#include <vector>

#include "mmfusion/layers.hpp"

namespace mmf {

template <class T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update with bias correction over every parameter in `params`,
/// reading gradients from the parameters' own grad buffers (missing = 0).
/// Weight decay is coupled L2: g += wd * param before the moment updates.
template <class T>
void adam_step(NamedParams<T>& params, AdamState<T>& state, double lr, double wd) {
  if (state.first_moment.empty()) {
    for (const auto& [name, p] : params) {
      state.first_moment.emplace_back(p.numel(), T(0));
      state.second_moment.emplace_back(p.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size())
    throw ShapeError("adam: state tracks " + std::to_string(state.first_moment.size()) +
                     " tensors, got " + std::to_string(params.size()));
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].second;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.numel())
      throw ShapeError("adam: moment size mismatch for " + params[k].first);
    auto values = p.mutable_data();
    const auto grad = p.grad();
    const bool has = !grad.empty();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T g = (has ? grad[i] : T(0)) + static_cast<T>(wd) * values[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      values[i] = static_cast<T>(static_cast<double>(values[i]) -
                                 lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace mmf
