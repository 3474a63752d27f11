// Attention building blocks: multi-head attention, the query-over-history
// temporal self-attention, bilinear feature sampling, deformable spatial
// cross-attention, and the encoder layer combining them with post-norm
// residuals and a feed-forward block.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lightformer/ops.hpp"
#include "lightformer/rng.hpp"

namespace lightformer {

// Backbone output for one frame, laid out [C, H, W]. Normalized coordinates
// map u in [0,1] across the width and v in [0,1] across the height.
template <typename S>
struct FeatureMap {
  Tensor<S> data;

  FeatureMap() = default;
  explicit FeatureMap(Tensor<S> t) : data(std::move(t)) {
    if (!data.defined() || data.rank() != 3) {
      throw ContractError("FeatureMap expects a [C,H,W] tensor");
    }
  }
  int channels() const { return data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
};

enum class HistoryMode { last, all };

// Embeddings E^1..E^{i-1} preserved across buffer steps. In mode last only
// the newest entry is kept, matching the single E^{i-1} of the update rule;
// mode all keeps the whole bank.
template <typename S>
class HistoryBank {
 public:
  explicit HistoryBank(HistoryMode mode = HistoryMode::all) : mode_(mode) {}

  void push(Tensor<S> embedding) {
    if (mode_ == HistoryMode::last) entries_.clear();
    entries_.push_back(std::move(embedding));
  }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  HistoryMode mode() const { return mode_; }
  const std::vector<Tensor<S>>& entries() const { return entries_; }

  // Key/value content for temporal self-attention: [n, D].
  Tensor<S> stacked() const {
    if (entries_.empty()) throw ContractError("HistoryBank: stacked() on an empty bank");
    if (entries_.size() == 1) return entries_.front();
    return concat(entries_, 0);
  }

 private:
  HistoryMode mode_;
  std::vector<Tensor<S>> entries_;
};

template <typename S>
struct AttentionParams {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
  int num_heads = 1;
};

template <typename S>
struct DeformableParams {
  Tensor<S> ref_w, ref_b;  // D -> 2*heads, reference point logits
  Tensor<S> off_w, off_b;  // D -> heads*points*2, offsets in cells
  Tensor<S> att_w, att_b;  // D -> heads*points, attention logits
  Tensor<S> val_w, val_b;  // D -> D
  Tensor<S> out_w, out_b;  // D -> D
  int num_heads = 1;
  int points = 1;
};

template <typename S>
struct LayerNormParams {
  Tensor<S> gamma, beta;
};

template <typename S>
struct EncoderParams {
  AttentionParams<S> tsa;
  DeformableParams<S> sca;
  Tensor<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  LayerNormParams<S> ln1, ln2, ln3;
  S ln_eps = S(1e-5);
};

// One sampling location of deformable attention, for inspection in tests and
// tools; weights of one head sum to 1.
struct SamplingPoint {
  double u = 0, v = 0;
  double weight = 0;
};

// ---------------------------------------------------------------------------
// initialization

template <typename S>
Tensor<S> uniform_init(Rng rng, Shape shape, double bound) {
  std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<S>(rng.uniform(-bound, bound));
  return Tensor<S>::from_data(std::move(shape), std::move(data)).set_requires_grad();
}

template <typename S>
Tensor<S> xavier_init(Rng rng, int fan_in, int fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_init<S>(rng, {fan_in, fan_out}, bound);
}

template <typename S>
Tensor<S> zeros_param(Shape shape) {
  return Tensor<S>::zeros(std::move(shape)).set_requires_grad();
}

template <typename S>
AttentionParams<S> make_attention_params(int dim, int num_heads, Rng rng) {
  if (num_heads < 1 || dim % num_heads != 0) {
    throw ContractError("attention: dim " + std::to_string(dim) + " not divisible by heads " +
                        std::to_string(num_heads));
  }
  AttentionParams<S> p;
  p.num_heads = num_heads;
  p.wq = xavier_init<S>(rng.stream("wq"), dim, dim);
  p.wk = xavier_init<S>(rng.stream("wk"), dim, dim);
  p.wv = xavier_init<S>(rng.stream("wv"), dim, dim);
  p.wo = xavier_init<S>(rng.stream("wo"), dim, dim);
  p.bq = zeros_param<S>({dim});
  p.bk = zeros_param<S>({dim});
  p.bv = zeros_param<S>({dim});
  p.bo = zeros_param<S>({dim});
  return p;
}

// Offsets and attention logits start at zero so every head initially reads
// its reference point with uniform weights.
template <typename S>
DeformableParams<S> make_deformable_params(int dim, int num_heads, int points, Rng rng) {
  if (num_heads < 1 || points < 1 || dim % num_heads != 0) {
    throw ContractError("deformable: bad heads/points for dim " + std::to_string(dim));
  }
  DeformableParams<S> p;
  p.num_heads = num_heads;
  p.points = points;
  p.ref_w = xavier_init<S>(rng.stream("ref_w"), dim, 2 * num_heads);
  p.ref_b = zeros_param<S>({2 * num_heads});
  p.off_w = zeros_param<S>({dim, num_heads * points * 2});
  p.off_b = zeros_param<S>({num_heads * points * 2});
  p.att_w = zeros_param<S>({dim, num_heads * points});
  p.att_b = zeros_param<S>({num_heads * points});
  p.val_w = xavier_init<S>(rng.stream("val_w"), dim, dim);
  p.val_b = zeros_param<S>({dim});
  p.out_w = xavier_init<S>(rng.stream("out_w"), dim, dim);
  p.out_b = zeros_param<S>({dim});
  return p;
}

template <typename S>
EncoderParams<S> make_encoder_params(int dim, int num_heads, int points, Rng rng) {
  EncoderParams<S> p;
  p.tsa = make_attention_params<S>(dim, num_heads, rng.stream("tsa"));
  p.sca = make_deformable_params<S>(dim, num_heads, points, rng.stream("sca"));
  const int hidden = 4 * dim;
  p.ffn_w1 = xavier_init<S>(rng.stream("ffn_w1"), dim, hidden);
  p.ffn_b1 = zeros_param<S>({hidden});
  p.ffn_w2 = xavier_init<S>(rng.stream("ffn_w2"), hidden, dim);
  p.ffn_b2 = zeros_param<S>({dim});
  for (auto* ln : {&p.ln1, &p.ln2, &p.ln3}) {
    ln->gamma = Tensor<S>::ones({dim}).set_requires_grad();
    ln->beta = zeros_param<S>({dim});
  }
  return p;
}

// ---------------------------------------------------------------------------
// attention ops

// Scaled dot-product attention per head over projected q/k/v, heads
// concatenated and output-projected. q is [Lq, D], k and v are [Lk, D].
template <typename S>
Tensor<S> multihead_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                              const AttentionParams<S>& p) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("multihead_attention: inputs must be rank 2");
  }
  const int dim = q.dim(1);
  if (k.dim(1) != dim || v.dim(1) != dim || k.dim(0) != v.dim(0)) {
    throw ShapeError("multihead_attention: q " + shape_str(q.shape()) + ", k " +
                     shape_str(k.shape()) + ", v " + shape_str(v.shape()) + " do not agree");
  }
  if (dim % p.num_heads != 0) {
    throw ShapeError("multihead_attention: dim " + std::to_string(dim) +
                     " not divisible by heads " + std::to_string(p.num_heads));
  }
  const int head_dim = dim / p.num_heads;
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(head_dim)));
  Tensor<S> qp = linear(q, p.wq, p.bq);
  Tensor<S> kp = linear(k, p.wk, p.bk);
  Tensor<S> vp = linear(v, p.wv, p.bv);
  std::vector<Tensor<S>> heads;
  heads.reserve(static_cast<std::size_t>(p.num_heads));
  for (int h = 0; h < p.num_heads; ++h) {
    Tensor<S> qh = slice(qp, 1, h * head_dim, head_dim);
    Tensor<S> kh = slice(kp, 1, h * head_dim, head_dim);
    Tensor<S> vh = slice(vp, 1, h * head_dim, head_dim);
    Tensor<S> scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    Tensor<S> attn = softmax(scores, 1);
    heads.push_back(matmul(attn, vh));
  }
  return linear(concat(heads, 1), p.wo, p.bo);
}

// Attention of the running query over the preserved history embeddings. With
// no history yet the key/value content is the query itself, so the layer is
// plain self-attention over q.
template <typename S>
Tensor<S> temporal_self_attention(const Tensor<S>& q, const HistoryBank<S>& history,
                                  const AttentionParams<S>& p) {
  const Tensor<S> kv = history.empty() ? q : history.stacked();
  return multihead_attention(q, kv, kv, p);
}

// Bilinear interpolation of map at the normalized location loc = (u, v),
// differentiable with respect to both the map values and the location.
template <typename S>
Tensor<S> bilinear_sample(const FeatureMap<S>& map, const Tensor<S>& loc) {
  if (!map.data.defined()) throw ContractError("bilinear_sample: empty feature map");
  if (loc.numel() != 2) {
    throw ShapeError("bilinear_sample: location must hold 2 values, got " +
                     shape_str(loc.shape()));
  }
  const int c = map.channels(), h = map.height(), w = map.width();
  const S u = loc.values()[0], v = loc.values()[1];
  S x = u * static_cast<S>(w - 1);
  S y = v * static_cast<S>(h - 1);
  x = std::min(std::max(x, S(0)), static_cast<S>(w - 1));
  y = std::min(std::max(y, S(0)), static_cast<S>(h - 1));
  const int x0 = std::min(static_cast<int>(x), w - 1);
  const int y0 = std::min(static_cast<int>(y), h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const S fx = x - static_cast<S>(x0);
  const S fy = y - static_cast<S>(y0);

  Tensor<S> out = Tensor<S>::zeros({c});
  const auto& m = map.data.values();
  auto& ov = out.values();
  const auto at = [&](int ch, int yy, int xx) {
    return m[static_cast<std::size_t>((static_cast<std::int64_t>(ch) * h + yy) * w + xx)];
  };
  for (int ch = 0; ch < c; ++ch) {
    ov[static_cast<std::size_t>(ch)] = (S(1) - fy) * ((S(1) - fx) * at(ch, y0, x0) + fx * at(ch, y0, x1)) +
                                       fy * ((S(1) - fx) * at(ch, y1, x0) + fx * at(ch, y1, x1));
  }
  if (detail::tape_active<S>({&map.data, &loc})) {
    auto mn = map.data.node();
    auto ln = loc.node();
    auto on = out.node();
    detail::record(out, {mn, ln}, [mn, ln, on, c, h, w, x0, x1, y0, y1, fx, fy] {
      const auto& g = on->grad;
      if (g.empty()) return;
      const auto ix = [&](int ch, int yy, int xx) {
        return static_cast<std::size_t>((static_cast<std::int64_t>(ch) * h + yy) * w + xx);
      };
      if (mn->requires_grad) {
        auto& gm = mn->grad_buffer();
        for (int ch = 0; ch < c; ++ch) {
          gm[ix(ch, y0, x0)] += g[static_cast<std::size_t>(ch)] * (S(1) - fy) * (S(1) - fx);
          gm[ix(ch, y0, x1)] += g[static_cast<std::size_t>(ch)] * (S(1) - fy) * fx;
          gm[ix(ch, y1, x0)] += g[static_cast<std::size_t>(ch)] * fy * (S(1) - fx);
          gm[ix(ch, y1, x1)] += g[static_cast<std::size_t>(ch)] * fy * fx;
        }
      }
      if (ln->requires_grad) {
        auto& gl = ln->grad_buffer();
        const auto& m = mn->values;
        S du = S(0), dv = S(0);
        for (int ch = 0; ch < c; ++ch) {
          const S gc = g[static_cast<std::size_t>(ch)];
          const S top = m[ix(ch, y0, x1)] - m[ix(ch, y0, x0)];
          const S bot = m[ix(ch, y1, x1)] - m[ix(ch, y1, x0)];
          du += gc * ((S(1) - fy) * top + fy * bot);
          const S left = m[ix(ch, y1, x0)] - m[ix(ch, y0, x0)];
          const S right = m[ix(ch, y1, x1)] - m[ix(ch, y0, x1)];
          dv += gc * ((S(1) - fx) * left + fx * right);
        }
        gl[0] += du * static_cast<S>(w - 1);
        gl[1] += dv * static_cast<S>(h - 1);
      }
    });
  }
  return out;
}

// Deformable attention of a single query over one feature map. Per head, a
// sigmoid-squashed projection of the query picks a reference point; learned
// offsets (scaled to cells via 1/W, 1/H) shift the K sampling locations,
// which are clamped to the unit square; softmax over K logits weights the
// value-projected samples.
template <typename S>
Tensor<S> deformable_attention(const Tensor<S>& q, const FeatureMap<S>& map,
                               const DeformableParams<S>& p,
                               std::vector<SamplingPoint>* trace = nullptr) {
  if (q.rank() != 2 || q.dim(0) != 1) {
    throw ShapeError("deformable_attention: query must be [1,D], got " + shape_str(q.shape()));
  }
  const int dim = q.dim(1);
  if (map.channels() != dim) {
    throw ShapeError("deformable_attention: map channels " + std::to_string(map.channels()) +
                     " != query dim " + std::to_string(dim));
  }
  const int heads = p.num_heads, k = p.points;
  const int head_dim = dim / heads;
  if (trace) trace->clear();

  Tensor<S> ref = sigmoid(linear(q, p.ref_w, p.ref_b));      // [1, 2*heads]
  Tensor<S> offsets = linear(q, p.off_w, p.off_b);           // [1, heads*k*2]
  Tensor<S> logits = linear(q, p.att_w, p.att_b);            // [1, heads*k]
  const Tensor<S> cell = Tensor<S>::from_data(
      {1, 2}, {S(1) / static_cast<S>(map.width()), S(1) / static_cast<S>(map.height())});

  std::vector<Tensor<S>> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor<S> ref_h = slice(ref, 1, 2 * h, 2);               // [1, 2]
    Tensor<S> weights = softmax(slice(logits, 1, h * k, k), 1);  // [1, k]
    std::vector<Tensor<S>> samples;
    samples.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      Tensor<S> off = slice(offsets, 1, (h * k + i) * 2, 2);
      Tensor<S> loc = clamp(add(ref_h, mul(off, cell)), S(0), S(1));
      Tensor<S> sample = bilinear_sample(map, reshape(loc, {2}));
      samples.push_back(slice(linear(reshape(sample, {1, dim}), p.val_w, p.val_b), 1,
                              h * head_dim, head_dim));
      if (trace) {
        trace->push_back(SamplingPoint{static_cast<double>(loc.values()[0]),
                                       static_cast<double>(loc.values()[1]),
                                       static_cast<double>(weights.values()[static_cast<std::size_t>(i)])});
      }
    }
    head_outputs.push_back(matmul(weights, concat(samples, 0)));  // [1, head_dim]
  }
  return linear(concat(head_outputs, 1), p.out_w, p.out_b);
}

// Encoder layer: post-norm residual TSA (skipped when ablated), deformable
// spatial cross-attention, then a ReLU feed-forward of hidden width 4*D.
template <typename S>
Tensor<S> encoder_layer(const Tensor<S>& q, const FeatureMap<S>& map, const HistoryBank<S>& history,
                        const EncoderParams<S>& p, bool ablate_tsa = false) {
  Tensor<S> x1 = q;
  if (!ablate_tsa) {
    x1 = layer_norm(add(q, temporal_self_attention(q, history, p.tsa)), p.ln1.gamma, p.ln1.beta,
                    p.ln_eps);
  }
  Tensor<S> x2 = layer_norm(add(x1, deformable_attention(x1, map, p.sca)), p.ln2.gamma, p.ln2.beta,
                            p.ln_eps);
  Tensor<S> ffn = linear(relu(linear(x2, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
  return layer_norm(add(x2, ffn), p.ln3.gamma, p.ln3.beta, p.ln_eps);
}

}  // namespace lightformer
