// Shared helpers for the test suites.

#pragma once

#include <cmath>
#include <vector>

#include "lightformer/rng.hpp"
#include "lightformer/tensor.hpp"

namespace testutil {

template <typename S>
lightformer::Tensor<S> random_tensor(lightformer::Rng& rng, lightformer::Shape shape,
                                     double lo = -1.0, double hi = 1.0) {
  std::vector<S> data(static_cast<std::size_t>(lightformer::shape_numel(shape)));
  for (auto& v : data) v = static_cast<S>(rng.uniform(lo, hi));
  return lightformer::Tensor<S>::from_data(std::move(shape), std::move(data));
}

// Binds stream() temporaries.
template <typename S>
lightformer::Tensor<S> random_tensor(lightformer::Rng&& rng, lightformer::Shape shape,
                                     double lo = -1.0, double hi = 1.0) {
  lightformer::Rng local = rng;
  return random_tensor<S>(local, std::move(shape), lo, hi);
}

template <typename S>
double max_abs_diff(const lightformer::Tensor<S>& a, const std::vector<S>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.values()[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <typename S>
double max_abs_diff(const lightformer::Tensor<S>& a, const lightformer::Tensor<S>& b) {
  return max_abs_diff(a, b.values());
}

template <typename S>
bool all_finite(const std::vector<S>& v) {
  for (S x : v) {
    if (!std::isfinite(static_cast<double>(x))) return false;
  }
  return true;
}

}  // namespace testutil
