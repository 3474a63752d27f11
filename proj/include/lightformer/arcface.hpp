// Multi-weight arcface class decoder: per-class banks of cluster centres,
// cosine similarity with a max over each class's centres, and an additive
// angular margin on the target class during training.

#pragma once

#include <cmath>
#include <string>

#include "lightformer/ops.hpp"
#include "lightformer/rng.hpp"

namespace lightformer {

inline constexpr double kCosineClamp = 1e-7;
inline constexpr double kPi = 3.14159265358979323846;

template <typename S>
struct ClusterCenterBank {
  Tensor<S> centers;  // [classes, centers_per_class, dim]
  double margin = 0.5;
  double scale = 64.0;

  int classes() const { return centers.dim(0); }
  int centers_per_class() const { return centers.dim(1); }
  int dim() const { return centers.dim(2); }
};

// Centres start as unit-normalized spherically symmetric draws.
template <typename S>
ClusterCenterBank<S> make_cluster_bank(int classes, int centers_per_class, int dim, double margin,
                                       double scale, Rng rng) {
  if (classes < 2 || centers_per_class < 1 || dim < 1) {
    throw ContractError("cluster bank: need >= 2 classes, >= 1 centre, dim >= 1");
  }
  std::vector<S> data(static_cast<std::size_t>(classes) * centers_per_class * dim);
  for (int c = 0; c < classes * centers_per_class; ++c) {
    double norm_sq = 0;
    std::vector<double> raw(static_cast<std::size_t>(dim));
    for (auto& v : raw) {
      v = rng.normal();
      norm_sq += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (int d = 0; d < dim; ++d) {
      data[static_cast<std::size_t>(c) * dim + d] = static_cast<S>(raw[static_cast<std::size_t>(d)] * inv);
    }
  }
  ClusterCenterBank<S> bank;
  bank.centers =
      Tensor<S>::from_data({classes, centers_per_class, dim}, std::move(data)).set_requires_grad();
  bank.margin = margin;
  bank.scale = scale;
  return bank;
}

namespace detail {

template <typename S>
Tensor<S> as_row(const Tensor<S>& embedding, int dim) {
  if (embedding.rank() == 1 && embedding.dim(0) == dim) return reshape(embedding, {1, dim});
  if (embedding.rank() == 2 && embedding.dim(0) == 1 && embedding.dim(1) == dim) return embedding;
  throw ShapeError("arcface: embedding " + shape_str(embedding.shape()) + " does not match dim " +
                   std::to_string(dim));
}

}  // namespace detail

// Per-class cosine of the normalized embedding against the nearest of the
// class's normalized centres. Gradient flows only to the winning centre; ties
// resolve to the lowest centre index.
template <typename S>
Tensor<S> class_cosines(const Tensor<S>& embedding, const ClusterCenterBank<S>& bank) {
  Tensor<S> e = detail::as_row(embedding, bank.dim());
  double norm_sq = 0;
  for (S v : e.values()) norm_sq += static_cast<double>(v) * static_cast<double>(v);
  if (!(norm_sq > 0)) throw ContractError("class_cosines: zero embedding");

  Tensor<S> e_n = l2_normalize(e, 1);
  Tensor<S> flat = reshape(bank.centers, {bank.classes() * bank.centers_per_class(), bank.dim()});
  Tensor<S> c_n = l2_normalize(flat, 1);
  Tensor<S> sims = matmul(e_n, transpose(c_n));  // [1, classes*w]
  Tensor<S> per_class = reduce_max(reshape(sims, {bank.classes(), bank.centers_per_class()}), 1);
  return clamp(per_class, static_cast<S>(-1.0 + kCosineClamp), static_cast<S>(1.0 - kCosineClamp));
}

// Scaled cosine logits. With a target class (training) the additive angular
// margin moves the target's angle by m, capped at pi; without one (inference,
// or margin zero) the logits are exactly scale * class_cosines.
template <typename S>
Tensor<S> arcface_logits(const Tensor<S>& embedding, const ClusterCenterBank<S>& bank,
                         int target = -1) {
  Tensor<S> cosines = class_cosines(embedding, bank);
  const S s = static_cast<S>(bank.scale);
  if (target < 0 || bank.margin == 0.0) return mul_scalar(cosines, s);
  if (target >= bank.classes()) {
    throw ContractError("arcface_logits: target " + std::to_string(target) + " out of range for " +
                        std::to_string(bank.classes()) + " classes");
  }
  std::vector<Tensor<S>> parts;
  parts.reserve(static_cast<std::size_t>(bank.classes()));
  for (int c = 0; c < bank.classes(); ++c) {
    Tensor<S> piece = slice(cosines, 0, c, 1);
    if (c == target) {
      Tensor<S> theta = add_scalar(acos(piece), static_cast<S>(bank.margin));
      piece = cos(clamp(theta, S(0), static_cast<S>(kPi)));
    }
    parts.push_back(mul_scalar(piece, s));
  }
  return concat(parts, 0);
}

// Margin-free class probabilities; the argmax is the predicted status.
template <typename S>
Tensor<S> decode(const Tensor<S>& embedding, const ClusterCenterBank<S>& bank) {
  return softmax(arcface_logits(embedding, bank), 0);
}

}  // namespace lightformer
