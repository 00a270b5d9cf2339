#pragma once

// Task losses and the intermediate-supervision loss combination.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmfusion/fusion.hpp"

namespace mmf {

inline constexpr double kProbabilityClamp = 1e-7;

/// -[y ln p + (1-y) ln(1-p)] for a scalar probability tensor, with p clamped
/// to [1e-7, 1-1e-7]. The gradient is zero where the clamp is active.
template <class T>
Tensor<T> bce_loss(const Tensor<T>& p, double y) {
  if (y != 0.0 && y != 1.0) throw DataError("bce: label must be 0 or 1, got " + std::to_string(y));
  if (p.numel() != 1) throw ShapeError("bce: expected a scalar prediction");
  const double raw = static_cast<double>(p.item());
  const double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;
  const double pc = std::clamp(raw, lo, hi);
  const double loss = -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
  const bool clamped = raw < lo || raw > hi;
  return detail::make_result<T>({1}, {static_cast<T>(loss)}, {&p},
                                [y, pc, clamped](Node<T>& self, const auto& in) {
    if (clamped) return;
    const double d = -y / pc + (1.0 - y) / (1.0 - pc);
    in[0]->ensure_grad()[0] += static_cast<T>(d) * self.grad[0];
  });
}

/// (pred - y)^2 for a scalar prediction tensor.
template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, double y) {
  if (pred.numel() != 1) throw ShapeError("mse: expected a scalar prediction");
  const T diff = pred.item() - static_cast<T>(y);
  return detail::make_result<T>({1}, {diff * diff}, {&pred},
                                [diff](Node<T>& self, const auto& in) {
    in[0]->ensure_grad()[0] += T(2) * diff * self.grad[0];
  });
}

template <class T>
Tensor<T> task_loss(const Tensor<T>& prediction, double y, Task task) {
  return task == Task::Detection ? bce_loss(prediction, y) : mse_loss(prediction, y);
}

/// Batch means over plain values.
double bce_value(std::span<const double> p, std::span<const double> y);
double mse_value(std::span<const double> pred, std::span<const double> y);

/// Per-topology weights over (supervised layers..., final head).
class LossWeights {
 public:
  /// Defaults: 0.35 / 0.35 / 0.3 split between first stage, second stage and
  /// final head, with parallel layers sharing their stage weight equally.
  static LossWeights defaults();

  const std::vector<double>& get(Topology t) const { return table_.at(t); }
  /// Replaces a row; it must have one entry per supervised layer plus one and
  /// sum (left to right) to exactly 1.0.
  void set(Topology t, std::vector<double> weights);

  static double sum(const std::vector<double>& w);

 private:
  std::map<Topology, std::vector<double>> table_;
};

/// Weighted sum of the task loss over every intermediate prediction followed
/// by the final prediction.
template <class T>
Tensor<T> combined_loss(const ForwardOutput<T>& out, double y, const std::vector<double>& weights,
                        Task task) {
  if (weights.size() != out.intermediates.size() + 1)
    throw ConfigError("combined loss: " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(out.intermediates.size()) + " intermediate outputs + final");
  std::vector<Tensor<T>> terms;
  terms.reserve(weights.size());
  for (const auto& [tag, pred] : out.intermediates) terms.push_back(task_loss(pred, y, task));
  terms.push_back(task_loss(out.final, y, task));
  std::vector<T> w(weights.begin(), weights.end());
  return weighted_sum(terms, w);
}

}  // namespace mmf
