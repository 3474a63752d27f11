// Differentiable operations over Tensor<S>.
//
// Every op computes eagerly, validates shapes up front, and records a
// backward closure when the tape is active. Matrix products go through Eigen
// maps over the flat row-major storage; everything else is plain loops so the
// adjoint of each op is visible next to its forward.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lightformer/tensor.hpp"

namespace lightformer {

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

template <typename S>
bool tape_active(std::initializer_list<const Tensor<S>*> inputs) {
  if (!grad_mode()) return false;
  for (const Tensor<S>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename S, typename F>
void record(Tensor<S>& out, std::vector<std::shared_ptr<TensorNode<S>>> parents, F&& fn) {
  out.node()->requires_grad = true;
  out.node()->parents = std::move(parents);
  out.node()->backward = std::forward<F>(fn);
}

template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

// Decomposes a shape around one axis: index = (o * n + i) * inner + r.
struct AxisSpan {
  std::int64_t outer, n, inner;
};

inline AxisSpan axis_span(const Shape& shape, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape));
  }
  AxisSpan s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) {
    s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

template <typename S, typename FwdF, typename DerF>
Tensor<S> unary_op(const Tensor<S>& x, FwdF fwd, DerF der) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  if (tape_active<S>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    record(out, {xn}, [xn, on, der] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& gx = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * der(xn->values[i], on->values[i]);
      }
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary and scalar ops

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a, b);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  if (detail::tape_active<S>({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    detail::record(out, {an, bn}, [an, bn, on] {
      an->accumulate(on->grad);
      bn->accumulate(on->grad);
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("sub", a, b);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  if (detail::tape_active<S>({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    detail::record(out, {an, bn}, [an, bn, on] {
      const auto& g = on->grad;
      if (g.empty()) return;
      an->accumulate(g);
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a, b);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  if (detail::tape_active<S>({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    detail::record(out, {an, bn}, [an, bn, on] {
      const auto& g = on->grad;
      if (g.empty()) return;
      if (an->requires_grad) {
        auto& ga = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->values[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->values[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return detail::unary_op(
      x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
  return detail::unary_op(
      x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return mul(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, S c) {
  return mul_scalar(a, c);
}
template <typename S>
Tensor<S> operator*(S c, const Tensor<S>& a) {
  return mul_scalar(a, c);
}

// ---------------------------------------------------------------------------
// elementwise unary ops

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::unary_op(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return detail::unary_op(
      x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return detail::unary_op(
      x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& x) {
  return detail::unary_op(
      x, [](S v) { return std::sqrt(v); },
      [](S, S y) { return S(1) / (S(2) * y); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return detail::unary_op(
      x,
      [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> cos(const Tensor<S>& x) {
  return detail::unary_op(
      x, [](S v) { return std::cos(v); }, [](S v, S) { return -std::sin(v); });
}

template <typename S>
Tensor<S> acos(const Tensor<S>& x) {
  return detail::unary_op(
      x, [](S v) { return std::acos(v); },
      [](S v, S) { return S(-1) / std::sqrt(S(1) - v * v); });
}

// Subgradient: clamped entries block the flow.
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  return detail::unary_op(
      x, [lo, hi](S v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](S v, S) { return (v > lo && v < hi) ? S(1) : S(0); });
}

// ---------------------------------------------------------------------------
// shape ops

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<S> out = Tensor<S>::from_data(std::move(shape), x.values());
  if (detail::tape_active<S>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    detail::record(out, {xn}, [xn, on] { xn->accumulate(on->grad); });
  }
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) {
    throw ShapeError("transpose: expected a rank-2 tensor, got " + shape_str(x.shape()));
  }
  const int r = x.dim(0), c = x.dim(1);
  Tensor<S> out = Tensor<S>::zeros({c, r});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      ov[static_cast<std::size_t>(j) * r + i] = xv[static_cast<std::size_t>(i) * c + j];
    }
  }
  if (detail::tape_active<S>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    detail::record(out, {xn}, [xn, on, r, c] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& gx = xn->grad_buffer();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
          gx[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& base = parts.front().shape();
  auto span = detail::axis_span(base, axis, "concat");
  std::int64_t total_n = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(base.size())) {
      throw ShapeError("concat: rank mismatch between " + shape_str(base) + " and " +
                       shape_str(p.shape()));
    }
    for (int d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != base[static_cast<std::size_t>(d)]) {
        throw ShapeError("concat: shapes " + shape_str(base) + " and " + shape_str(p.shape()) +
                         " differ off axis " + std::to_string(axis));
      }
    }
    total_n += p.dim(axis);
  }
  Shape out_shape = base;
  out_shape[static_cast<std::size_t>(axis)] = static_cast<int>(total_n);
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  auto& ov = out.values();
  std::int64_t pos = 0;
  for (const auto& p : parts) {
    const auto& pv = p.values();
    const std::int64_t n = p.dim(axis);
    for (std::int64_t o = 0; o < span.outer; ++o) {
      std::copy_n(pv.begin() + o * n * span.inner, n * span.inner,
                  ov.begin() + (o * total_n + pos) * span.inner);
    }
    pos += n;
  }
  bool any_grad = false;
  for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
  if (grad_mode() && any_grad) {
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::vector<std::int64_t> offsets;
    std::int64_t at = 0;
    for (const auto& p : parts) {
      parents.push_back(p.node());
      offsets.push_back(at);
      at += p.dim(axis);
    }
    auto on = out.node();
    detail::record(out, parents, [on, span, total_n, offsets] {
      const auto& g = on->grad;
      if (g.empty()) return;
      for (std::size_t pi = 0; pi < on->parents.size(); ++pi) {
        auto& pn = on->parents[pi];
        if (!pn->requires_grad) continue;
        auto& gp = pn->grad_buffer();
        const std::int64_t n = static_cast<std::int64_t>(pn->values.size()) / (span.outer * span.inner);
        for (std::int64_t o = 0; o < span.outer; ++o) {
          const S* src = g.data() + (o * total_n + offsets[pi]) * span.inner;
          S* dst = gp.data() + o * n * span.inner;
          for (std::int64_t i = 0; i < n * span.inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

// Contiguous range along one axis.
template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, int start, int len) {
  auto span = detail::axis_span(x.shape(), axis, "slice");
  if (start < 0 || len <= 0 || start + len > span.n) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of bounds for axis " + std::to_string(axis) + " of " +
                     shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t o = 0; o < span.outer; ++o) {
    std::copy_n(xv.begin() + (o * span.n + start) * span.inner, static_cast<std::int64_t>(len) * span.inner,
                ov.begin() + o * len * span.inner);
  }
  if (detail::tape_active<S>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    detail::record(out, {xn}, [xn, on, span, start, len] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& gx = xn->grad_buffer();
      for (std::int64_t o = 0; o < span.outer; ++o) {
        const S* src = g.data() + o * len * span.inner;
        S* dst = gx.data() + (o * span.n + start) * span.inner;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(len) * span.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::zeros({1});
  S acc = S(0);
  for (S v : x.values()) acc += v;
  out.values()[0] = acc;
  if (detail::tape_active<S>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    detail::record(out, {xn}, [xn, on] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& gx = xn->grad_buffer();
      for (auto& v : gx) v += g[0];
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return mul_scalar(sum(x), S(1) / static_cast<S>(x.numel()));
}

namespace detail {

inline Shape drop_axis(const Shape& shape, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i != axis) out.push_back(shape[static_cast<std::size_t>(i)]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace detail

template <typename S>
Tensor<S> sum(const Tensor<S>& x, int axis) {
  auto span = detail::axis_span(x.shape(), axis, "sum");
  Tensor<S> out = Tensor<S>::zeros(detail::drop_axis(x.shape(), axis));
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t o = 0; o < span.outer; ++o) {
    for (std::int64_t i = 0; i < span.n; ++i) {
      for (std::int64_t r = 0; r < span.inner; ++r) {
        ov[static_cast<std::size_t>(o * span.inner + r)] += xv[static_cast<std::size_t>((o * span.n + i) * span.inner + r)];
      }
    }
  }
  if (detail::tape_active<S>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    detail::record(out, {xn}, [xn, on, span] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& gx = xn->grad_buffer();
      for (std::int64_t o = 0; o < span.outer; ++o) {
        for (std::int64_t i = 0; i < span.n; ++i) {
          for (std::int64_t r = 0; r < span.inner; ++r) {
            gx[static_cast<std::size_t>((o * span.n + i) * span.inner + r)] += g[static_cast<std::size_t>(o * span.inner + r)];
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x, int axis) {
  auto span = detail::axis_span(x.shape(), axis, "mean");
  return mul_scalar(sum(x, axis), S(1) / static_cast<S>(span.n));
}

// Maximum along an axis; the gradient routes to the first position attaining
// the maximum so tie-breaking is deterministic.
template <typename S>
Tensor<S> reduce_max(const Tensor<S>& x, int axis) {
  auto span = detail::axis_span(x.shape(), axis, "reduce_max");
  Tensor<S> out = Tensor<S>::zeros(detail::drop_axis(x.shape(), axis));
  const auto& xv = x.values();
  auto& ov = out.values();
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(span.outer * span.inner));
  for (std::int64_t o = 0; o < span.outer; ++o) {
    for (std::int64_t r = 0; r < span.inner; ++r) {
      std::int64_t best = (o * span.n) * span.inner + r;
      S best_v = xv[static_cast<std::size_t>(best)];
      for (std::int64_t i = 1; i < span.n; ++i) {
        const std::int64_t ix = (o * span.n + i) * span.inner + r;
        if (xv[static_cast<std::size_t>(ix)] > best_v) {
          best_v = xv[static_cast<std::size_t>(ix)];
          best = ix;
        }
      }
      ov[static_cast<std::size_t>(o * span.inner + r)] = best_v;
      argmax[static_cast<std::size_t>(o * span.inner + r)] = best;
    }
  }
  if (detail::tape_active<S>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    detail::record(out, {xn}, [xn, on, argmax = std::move(argmax)] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& gx = xn->grad_buffer();
      for (std::size_t j = 0; j < g.size(); ++j) gx[static_cast<std::size_t>(argmax[j])] += g[j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalizations

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  auto span = detail::axis_span(x.shape(), axis, "softmax");
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t o = 0; o < span.outer; ++o) {
    for (std::int64_t r = 0; r < span.inner; ++r) {
      const auto at = [&](std::int64_t i) { return static_cast<std::size_t>((o * span.n + i) * span.inner + r); };
      S mx = xv[at(0)];
      for (std::int64_t i = 1; i < span.n; ++i) mx = std::max(mx, xv[at(i)]);
      S denom = S(0);
      for (std::int64_t i = 0; i < span.n; ++i) {
        const S e = std::exp(xv[at(i)] - mx);
        ov[at(i)] = e;
        denom += e;
      }
      for (std::int64_t i = 0; i < span.n; ++i) ov[at(i)] /= denom;
    }
  }
  if (detail::tape_active<S>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    detail::record(out, {xn}, [xn, on, span] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& gx = xn->grad_buffer();
      for (std::int64_t o = 0; o < span.outer; ++o) {
        for (std::int64_t r = 0; r < span.inner; ++r) {
          const auto at = [&](std::int64_t i) { return static_cast<std::size_t>((o * span.n + i) * span.inner + r); };
          S dot = S(0);
          for (std::int64_t i = 0; i < span.n; ++i) dot += g[at(i)] * on->values[at(i)];
          for (std::int64_t i = 0; i < span.n; ++i) {
            gx[at(i)] += on->values[at(i)] * (g[at(i)] - dot);
          }
        }
      }
    });
  }
  return out;
}

// Normalizes the last dimension of x to zero mean / unit variance, then
// applies the per-feature affine pair.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  const int d = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
    throw ShapeError("layer_norm: feature dim " + std::to_string(d) + " does not match gamma " +
                     shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()));
  }
  if (!(eps > S(0))) throw ContractError("layer_norm: eps must be positive");
  const std::int64_t rows = x.numel() / d;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  std::vector<S> xhat(xv.size());
  std::vector<S> inv_sigma(static_cast<std::size_t>(rows));
  for (std::int64_t row = 0; row < rows; ++row) {
    const S* xp = xv.data() + row * d;
    S mu = S(0);
    for (int i = 0; i < d; ++i) mu += xp[i];
    mu /= static_cast<S>(d);
    S var = S(0);
    for (int i = 0; i < d; ++i) var += (xp[i] - mu) * (xp[i] - mu);
    var /= static_cast<S>(d);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(row)] = inv;
    for (int i = 0; i < d; ++i) {
      const S h = (xp[i] - mu) * inv;
      xhat[static_cast<std::size_t>(row * d + i)] = h;
      ov[static_cast<std::size_t>(row * d + i)] = gamma.values()[static_cast<std::size_t>(i)] * h +
                                                  beta.values()[static_cast<std::size_t>(i)];
    }
  }
  if (detail::tape_active<S>({&x, &gamma, &beta})) {
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto on = out.node();
    detail::record(out, {xn, gn, bn},
                   [xn, gn, bn, on, d, rows, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)] {
      const auto& g = on->grad;
      if (g.empty()) return;
      for (std::int64_t row = 0; row < rows; ++row) {
        const S* gp = g.data() + row * d;
        const S* hp = xhat.data() + row * d;
        if (gn->requires_grad) {
          auto& gg = gn->grad_buffer();
          for (int i = 0; i < d; ++i) gg[static_cast<std::size_t>(i)] += gp[i] * hp[i];
        }
        if (bn->requires_grad) {
          auto& gb = bn->grad_buffer();
          for (int i = 0; i < d; ++i) gb[static_cast<std::size_t>(i)] += gp[i];
        }
        if (xn->requires_grad) {
          auto& gx = xn->grad_buffer();
          S mean_dh = S(0), mean_dh_h = S(0);
          for (int i = 0; i < d; ++i) {
            const S dh = gp[i] * gn->values[static_cast<std::size_t>(i)];
            mean_dh += dh;
            mean_dh_h += dh * hp[i];
          }
          mean_dh /= static_cast<S>(d);
          mean_dh_h /= static_cast<S>(d);
          const S inv = inv_sigma[static_cast<std::size_t>(row)];
          for (int i = 0; i < d; ++i) {
            const S dh = gp[i] * gn->values[static_cast<std::size_t>(i)];
            gx[static_cast<std::size_t>(row * d + i)] += inv * (dh - mean_dh - hp[i] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

// Scales each line along the axis to unit Euclidean norm.
template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& x, int axis) {
  auto span = detail::axis_span(x.shape(), axis, "l2_normalize");
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  std::vector<S> inv_norm(static_cast<std::size_t>(span.outer * span.inner));
  for (std::int64_t o = 0; o < span.outer; ++o) {
    for (std::int64_t r = 0; r < span.inner; ++r) {
      const auto at = [&](std::int64_t i) { return static_cast<std::size_t>((o * span.n + i) * span.inner + r); };
      S sq = S(0);
      for (std::int64_t i = 0; i < span.n; ++i) sq += xv[at(i)] * xv[at(i)];
      const S norm = std::sqrt(sq);
      if (!(norm > S(0))) {
        throw ContractError("l2_normalize: zero vector along axis " + std::to_string(axis));
      }
      const S inv = S(1) / norm;
      inv_norm[static_cast<std::size_t>(o * span.inner + r)] = inv;
      for (std::int64_t i = 0; i < span.n; ++i) ov[at(i)] = xv[at(i)] * inv;
    }
  }
  if (detail::tape_active<S>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    detail::record(out, {xn}, [xn, on, span, inv_norm = std::move(inv_norm)] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& gx = xn->grad_buffer();
      for (std::int64_t o = 0; o < span.outer; ++o) {
        for (std::int64_t r = 0; r < span.inner; ++r) {
          const auto at = [&](std::int64_t i) { return static_cast<std::size_t>((o * span.n + i) * span.inner + r); };
          S dot = S(0);
          for (std::int64_t i = 0; i < span.n; ++i) dot += g[at(i)] * on->values[at(i)];
          const S inv = inv_norm[static_cast<std::size_t>(o * span.inner + r)];
          for (std::int64_t i = 0; i < span.n; ++i) {
            gx[at(i)] += (g[at(i)] - on->values[at(i)] * dot) * inv;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out = Tensor<S>::zeros({m, n});
  detail::MatMap<S>(out.values().data(), m, n).noalias() =
      detail::ConstMatMap<S>(a.values().data(), m, k) *
      detail::ConstMatMap<S>(b.values().data(), k, n);
  if (detail::tape_active<S>({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    detail::record(out, {an, bn}, [an, bn, on, m, k, n] {
      const auto& g = on->grad;
      if (g.empty()) return;
      detail::ConstMatMap<S> gm(g.data(), m, n);
      if (an->requires_grad) {
        detail::MatMap<S>(an->grad_buffer().data(), m, k).noalias() +=
            gm * detail::ConstMatMap<S>(bn->values.data(), k, n).transpose();
      }
      if (bn->requires_grad) {
        detail::MatMap<S>(bn->grad_buffer().data(), k, n).noalias() +=
            detail::ConstMatMap<S>(an->values.data(), m, k).transpose() * gm;
      }
    });
  }
  return out;
}

// out[r, c] = m[r, c] + b[c]
template <typename S>
Tensor<S> add_bias_per_col(const Tensor<S>& m, const Tensor<S>& b) {
  if (m.rank() != 2 || b.rank() != 1 || b.dim(0) != m.dim(1)) {
    throw ShapeError("add_bias_per_col: shapes " + shape_str(m.shape()) + " and " +
                     shape_str(b.shape()) + " do not fit");
  }
  const int rows = m.dim(0), cols = m.dim(1);
  Tensor<S> out = Tensor<S>::zeros(m.shape());
  const auto& mv = m.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      ov[static_cast<std::size_t>(r) * cols + c] = mv[static_cast<std::size_t>(r) * cols + c] + bv[static_cast<std::size_t>(c)];
    }
  }
  if (detail::tape_active<S>({&m, &b})) {
    auto mn = m.node();
    auto bn = b.node();
    auto on = out.node();
    detail::record(out, {mn, bn}, [mn, bn, on, rows, cols] {
      const auto& g = on->grad;
      if (g.empty()) return;
      mn->accumulate(g);
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < cols; ++c) gb[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(r) * cols + c];
        }
      }
    });
  }
  return out;
}

// out[r, c] = m[r, c] + b[r]
template <typename S>
Tensor<S> add_bias_per_row(const Tensor<S>& m, const Tensor<S>& b) {
  if (m.rank() != 2 || b.rank() != 1 || b.dim(0) != m.dim(0)) {
    throw ShapeError("add_bias_per_row: shapes " + shape_str(m.shape()) + " and " +
                     shape_str(b.shape()) + " do not fit");
  }
  const int rows = m.dim(0), cols = m.dim(1);
  Tensor<S> out = Tensor<S>::zeros(m.shape());
  const auto& mv = m.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      ov[static_cast<std::size_t>(r) * cols + c] = mv[static_cast<std::size_t>(r) * cols + c] + bv[static_cast<std::size_t>(r)];
    }
  }
  if (detail::tape_active<S>({&m, &b})) {
    auto mn = m.node();
    auto bn = b.node();
    auto on = out.node();
    detail::record(out, {mn, bn}, [mn, bn, on, rows, cols] {
      const auto& g = on->grad;
      if (g.empty()) return;
      mn->accumulate(g);
      if (bn->requires_grad) {
        auto& gb = bn->grad_buffer();
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < cols; ++c) gb[static_cast<std::size_t>(r)] += g[static_cast<std::size_t>(r) * cols + c];
        }
      }
    });
  }
  return out;
}

// x[R, K] * w[K, C] + b[C]
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add_bias_per_col(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// convolution

// Unfolds [C, H, W] into [C*kh*kw, Ho*Wo] with zero padding; the adjoint is
// the corresponding scatter-add (col2im).
template <typename S>
Tensor<S> im2col(const Tensor<S>& x, int kh, int kw, int stride, int pad) {
  if (x.rank() != 3) throw ShapeError("im2col: expected [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  if (kh <= 0 || kw <= 0 || stride <= 0 || pad < 0 || ho <= 0 || wo <= 0) {
    throw ShapeError("im2col: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " stride " + std::to_string(stride) + " pad " + std::to_string(pad) +
                     " does not fit " + shape_str(x.shape()));
  }
  Tensor<S> out = Tensor<S>::zeros({c * kh * kw, ho * wo});
  const auto& xv = x.values();
  auto& ov = out.values();
  const std::int64_t cols = static_cast<std::int64_t>(ho) * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const std::int64_t row = (static_cast<std::int64_t>(ch) * kh + i) * kw + j;
        for (int oy = 0; oy < ho; ++oy) {
          const int y = oy * stride - pad + i;
          if (y < 0 || y >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int xx = ox * stride - pad + j;
            if (xx < 0 || xx >= w) continue;
            ov[static_cast<std::size_t>(row * cols + oy * wo + ox)] =
                xv[static_cast<std::size_t>((static_cast<std::int64_t>(ch) * h + y) * w + xx)];
          }
        }
      }
    }
  }
  if (detail::tape_active<S>({&x})) {
    auto xn = x.node();
    auto on = out.node();
    detail::record(out, {xn}, [xn, on, c, h, w, kh, kw, stride, pad, ho, wo, cols] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& gx = xn->grad_buffer();
      for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < kh; ++i) {
          for (int j = 0; j < kw; ++j) {
            const std::int64_t row = (static_cast<std::int64_t>(ch) * kh + i) * kw + j;
            for (int oy = 0; oy < ho; ++oy) {
              const int y = oy * stride - pad + i;
              if (y < 0 || y >= h) continue;
              for (int ox = 0; ox < wo; ++ox) {
                const int xx = ox * stride - pad + j;
                if (xx < 0 || xx >= w) continue;
                gx[static_cast<std::size_t>((static_cast<std::int64_t>(ch) * h + y) * w + xx)] +=
                    g[static_cast<std::size_t>(row * cols + oy * wo + ox)];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// 2-D convolution of one image: x [Cin, H, W], w [Cout, Cin, kh, kw], b [Cout].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4 || x.dim(0) != w.dim(1)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " vs kernel " + shape_str(w.shape()));
  }
  const int cout = w.dim(0);
  const int kh = w.dim(2), kw = w.dim(3);
  const int ho = (x.dim(1) + 2 * pad - kh) / stride + 1;
  const int wo = (x.dim(2) + 2 * pad - kw) / stride + 1;
  Tensor<S> cols = im2col(x, kh, kw, stride, pad);
  Tensor<S> wmat = reshape(w, {cout, w.dim(1) * kh * kw});
  Tensor<S> out2 = add_bias_per_row(matmul(wmat, cols), b);
  return reshape(out2, {cout, ho, wo});
}

}  // namespace lightformer
