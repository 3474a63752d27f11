// Named parameters and the Adam optimizer (bias-corrected form).

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lightformer/tensor.hpp"

namespace lightformer {

template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> tensor;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment accumulators per parameter, zero at creation.
template <typename S>
struct AdamState {
  std::map<std::string, std::pair<std::vector<S>, std::vector<S>>> moments;
  long step_count = 0;
};

template <typename S>
void adam_step(std::vector<Parameter<S>>& params, AdamState<S>& state, const AdamConfig& cfg) {
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
  for (auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw ContractError("adam_step: parameter \"" + p.name + "\" has no gradient");
    }
    const auto& g = p.tensor.grad();
    auto& [m, v] = state.moments[p.name];
    if (m.empty()) {
      m.assign(g.size(), S(0));
      v.assign(g.size(), S(0));
    }
    auto& vals = p.tensor.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      const double update = cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      vals[i] = static_cast<S>(static_cast<double>(vals[i]) - update);
    }
  }
}

}  // namespace lightformer
