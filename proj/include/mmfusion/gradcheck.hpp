#pragma once

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mmfusion/tensor.hpp"

namespace mmf {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool finite = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string failure;  // location of the first non-finite evaluation, if any
};

/// Compares tape gradients of `f` against central differences for every
/// element of every parameter. Error per element is
/// |g - g_fd| / max(1, |g|, |g_fd|). `f` must build its graph on the active
/// tape and be deterministic.
template <class T>
GradcheckReport finite_diff_gradcheck(const std::function<Tensor<T>()>& f,
                                      NamedParams<T> params,
                                      double h = 1e-5, double tol = 1e-4) {
  if (!(h > 0.0)) throw ContractError("gradcheck: step must be positive");
  GradcheckReport report;
  report.tolerance = tol;

  for (auto& [name, p] : params) p.zero_grad();
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    auto out = f();
    if (!std::isfinite(static_cast<double>(out.item()))) {
      report.failure = "non-finite value at unperturbed point";
      return report;
    }
    backward(out, tape);
  }

  auto eval = [&] {
    // No tape: plain evaluation.
    return static_cast<double>(f().item());
  };

  bool ok = true;
  for (auto& [name, p] : params) {
    GradcheckEntry entry;
    entry.name = name;
    std::vector<T> analytic(p.numel(), T(0));
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T orig = values[i];
      values[i] = static_cast<T>(orig + h);
      const double fp = eval();
      values[i] = static_cast<T>(orig - h);
      const double fm = eval();
      values[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        entry.finite = false;
        ok = false;
        if (report.failure.empty())
          report.failure = "non-finite value perturbing " + name + "[" + std::to_string(i) + "]";
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double g = static_cast<double>(analytic[i]);
      const double err =
          std::abs(g - numeric) / std::max({1.0, std::abs(g), std::abs(numeric)});
      if (err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(entry);
  }
  for (auto& [name, p] : params) p.zero_grad();
  report.passed = ok && report.max_rel_error <= tol;
  return report;
}

}  // namespace mmf
