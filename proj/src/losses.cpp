#include "mmfusion/losses.hpp"

namespace mmf {

double bce_value(std::span<const double> p, std::span<const double> y) {
  if (p.size() != y.size() || p.empty()) throw ShapeError("bce: batch size mismatch or empty batch");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0)
      throw DataError("bce: label must be 0 or 1, got " + std::to_string(y[i]));
    const double pc = std::clamp(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    s += -(y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc));
  }
  return s / static_cast<double>(p.size());
}

double mse_value(std::span<const double> pred, std::span<const double> y) {
  if (pred.size() != y.size() || pred.empty())
    throw ShapeError("mse: batch size mismatch or empty batch");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
  return s / static_cast<double>(pred.size());
}

LossWeights LossWeights::defaults() {
  LossWeights w;
  w.table_[Topology::OneStream] = {1.0};
  w.table_[Topology::FaceOnly] = {1.0};
  w.table_[Topology::PoseOnly] = {1.0};
  w.table_[Topology::CrossAttention] = {1.0};
  // tf1, tf2, final
  w.table_[Topology::OneToOne] = {0.35, 0.35, 0.3};
  // tf1, then tf2/tf3 sharing 0.35 equally, then FF
  w.table_[Topology::OneToTwo] = {0.35, 0.35 * 0.5, 0.35 * 0.5, 0.3};
  // tf1/tf2 (parallel first stage), tf3, final
  w.table_[Topology::TwoToOne] = {0.35 * 0.5, 0.35 * 0.5, 0.35, 0.3};
  w.table_[Topology::CrossToOne] = {0.35 * 0.5, 0.35 * 0.5, 0.35, 0.3};
  return w;
}

double LossWeights::sum(const std::vector<double>& w) {
  double s = 0;
  for (double v : w) s += v;
  return s;
}

void LossWeights::set(Topology t, std::vector<double> weights) {
  const auto expected = supervised_layers(t).size() + 1;
  if (weights.size() != expected)
    throw ConfigError("loss weights for " + std::string(topology_name(t)) + ": expected " +
                      std::to_string(expected) + " values, got " + std::to_string(weights.size()));
  if (sum(weights) != 1.0)
    throw ConfigError("loss weights for " + std::string(topology_name(t)) + " must sum to 1");
  table_[t] = std::move(weights);
}

}  // namespace mmf
