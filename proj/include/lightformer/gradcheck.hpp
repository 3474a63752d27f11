// Central finite-difference check of reverse-mode gradients.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lightformer/tensor.hpp"

namespace lightformer {

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool ok = true;            // false on NaN in either the analytic or numeric side
  std::string worst;         // "input 2 entry 17" for the largest (or failing) entry
};

// f maps the given inputs to a scalar tensor and must be re-invocable; inputs
// are perturbed in place for the numeric side. Relative error per entry is
// |analytic - central difference| / max(1, |analytic|).
template <typename F>
GradCheckReport grad_check(F&& f, std::vector<Tensor<double>>& inputs, double step) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  Tensor<double> loss = f(inputs);
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) {
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.values().size(), 0.0));
  }

  GradCheckReport report;
  const auto eval = [&]() {
    NoGradGuard off;
    return f(inputs).values()[0];
  };
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + step;
      const double up = eval();
      vals[i] = saved - step;
      const double down = eval();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[ti][i];
      const std::string where = "input " + std::to_string(ti) + " entry " + std::to_string(i);
      if (std::isnan(a) || std::isnan(numeric)) {
        report.ok = false;
        report.worst = where + " (nan)";
        return report;
      }
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = where;
      }
    }
  }
  return report;
}

}  // namespace lightformer
