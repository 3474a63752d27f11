// The standard gradient-check battery: every differentiable building block of
// the model, in double precision, against central finite differences over
// three seeds. Shared by the gradcheck CLI command and the acceptance suite.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lightformer/arcface.hpp"
#include "lightformer/attention.hpp"
#include "lightformer/gradcheck.hpp"
#include "lightformer/train.hpp"

namespace lightformer {

struct GradCheckRow {
  std::string name;
  double max_rel_error = 0;
  bool ok = false;
};

namespace detail {

template <typename Make>
GradCheckRow run_gradcheck_case(const std::string& name, double tolerance, Make&& make) {
  GradCheckRow row;
  row.name = name;
  row.ok = true;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto [fn, inputs] = make(seed);
    auto report = grad_check(fn, inputs, 1e-6);
    row.max_rel_error = std::max(row.max_rel_error, report.max_rel_error);
    row.ok = row.ok && report.ok && report.max_rel_error < tolerance;
  }
  return row;
}

template <typename S>
Tensor<S> gradcheck_rand(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<S>(rng.uniform(lo, hi));
  return Tensor<S>::from_data(std::move(shape), std::move(data));
}

}  // namespace detail

// Runs every entry and reports the worst relative error per operation.
inline std::vector<GradCheckRow> run_gradcheck_suite(double tolerance = 1e-4) {
  using T = Tensor<double>;
  using Inputs = std::vector<T>;
  using Fn = std::function<T(Inputs&)>;
  using detail::gradcheck_rand;
  std::vector<GradCheckRow> rows;

  rows.push_back(detail::run_gradcheck_case("matmul", tolerance, [](std::uint64_t seed) {
    Rng rng(seed * 11 + 1);
    Inputs inputs = {gradcheck_rand<double>(rng, {3, 4}), gradcheck_rand<double>(rng, {4, 2})};
    auto r = gradcheck_rand<double>(rng, {3, 2});
    Fn fn = [r](Inputs& in) { return sum(mul(matmul(in[0], in[1]), r)); };
    return std::make_pair(fn, inputs);
  }));

  rows.push_back(detail::run_gradcheck_case("softmax", tolerance, [](std::uint64_t seed) {
    Rng rng(seed * 13 + 2);
    Inputs inputs = {gradcheck_rand<double>(rng, {3, 5}, -2, 2)};
    auto r = gradcheck_rand<double>(rng, {3, 5});
    Fn fn = [r](Inputs& in) { return sum(mul(softmax(in[0], 1), r)); };
    return std::make_pair(fn, inputs);
  }));

  rows.push_back(detail::run_gradcheck_case("layer_norm", tolerance, [](std::uint64_t seed) {
    Rng rng(seed * 17 + 3);
    Inputs inputs = {gradcheck_rand<double>(rng, {3, 6}, -2, 2), gradcheck_rand<double>(rng, {6}),
                     gradcheck_rand<double>(rng, {6})};
    auto r = gradcheck_rand<double>(rng, {3, 6});
    Fn fn = [r](Inputs& in) { return sum(mul(layer_norm(in[0], in[1], in[2], 1e-5), r)); };
    return std::make_pair(fn, inputs);
  }));

  rows.push_back(detail::run_gradcheck_case("conv2d", tolerance, [](std::uint64_t seed) {
    Rng rng(seed * 19 + 4);
    Inputs inputs = {gradcheck_rand<double>(rng, {2, 5, 6}), gradcheck_rand<double>(rng, {3, 2, 3, 3}),
                     gradcheck_rand<double>(rng, {3})};
    auto r = gradcheck_rand<double>(rng, {3, 3, 3});
    Fn fn = [r](Inputs& in) { return sum(mul(conv2d(in[0], in[1], in[2], 2, 1), r)); };
    return std::make_pair(fn, inputs);
  }));

  rows.push_back(detail::run_gradcheck_case("multihead_attention", tolerance, [](std::uint64_t seed) {
    Rng rng(seed * 23 + 5);
    auto p = make_attention_params<double>(8, 2, rng.stream("p"));
    Inputs inputs = {gradcheck_rand<double>(rng, {2, 8}), gradcheck_rand<double>(rng, {3, 8}),
                     gradcheck_rand<double>(rng, {3, 8}), p.wq, p.wk, p.wv, p.wo,
                     p.bq, p.bk, p.bv, p.bo};
    auto r = gradcheck_rand<double>(rng, {2, 8});
    Fn fn = [r, p](Inputs& in) {
      AttentionParams<double> pp = p;
      pp.wq = in[3];
      pp.wk = in[4];
      pp.wv = in[5];
      pp.wo = in[6];
      pp.bq = in[7];
      pp.bk = in[8];
      pp.bv = in[9];
      pp.bo = in[10];
      return sum(mul(multihead_attention(in[0], in[1], in[2], pp), r));
    };
    return std::make_pair(fn, inputs);
  }));

  rows.push_back(detail::run_gradcheck_case("bilinear_sample", tolerance, [](std::uint64_t seed) {
    Rng rng(seed * 29 + 6);
    Inputs inputs = {gradcheck_rand<double>(rng, {3, 3, 5}),
                     T::from_data({2}, {rng.uniform(0.1, 0.45), rng.uniform(0.55, 0.9)})};
    auto r = gradcheck_rand<double>(rng, {3});
    Fn fn = [r](Inputs& in) {
      return sum(mul(bilinear_sample(FeatureMap<double>(in[0]), in[1]), r));
    };
    return std::make_pair(fn, inputs);
  }));

  rows.push_back(detail::run_gradcheck_case("deformable_attention", tolerance, [](std::uint64_t seed) {
    Rng rng(seed * 31 + 7);
    auto p = make_deformable_params<double>(8, 2, 2, rng.stream("p"));
    p.off_w = gradcheck_rand<double>(rng, {8, 8}, -0.3, 0.3);
    p.off_b = gradcheck_rand<double>(rng, {8}, -0.3, 0.3);
    p.att_w = gradcheck_rand<double>(rng, {8, 4});
    Inputs inputs = {gradcheck_rand<double>(rng, {1, 8}), gradcheck_rand<double>(rng, {8, 3, 5}),
                     p.ref_w, p.off_w, p.att_w, p.val_w, p.out_w};
    auto r = gradcheck_rand<double>(rng, {1, 8});
    Fn fn = [r, p](Inputs& in) {
      DeformableParams<double> pp = p;
      pp.ref_w = in[2];
      pp.off_w = in[3];
      pp.att_w = in[4];
      pp.val_w = in[5];
      pp.out_w = in[6];
      return sum(mul(deformable_attention(in[0], FeatureMap<double>(in[1]), pp), r));
    };
    return std::make_pair(fn, inputs);
  }));

  rows.push_back(detail::run_gradcheck_case("encoder_layer", tolerance, [](std::uint64_t seed) {
    Rng rng(seed * 37 + 8);
    auto p = make_encoder_params<double>(8, 2, 2, rng.stream("p"));
    p.sca.off_w = gradcheck_rand<double>(rng, {8, 8}, -0.3, 0.3);
    p.sca.att_w = gradcheck_rand<double>(rng, {8, 4});
    Inputs inputs = {gradcheck_rand<double>(rng, {1, 8}), gradcheck_rand<double>(rng, {8, 3, 5}),
                     gradcheck_rand<double>(rng, {1, 8}), p.tsa.wq, p.tsa.wv, p.sca.val_w,
                     p.ffn_w1, p.ffn_w2, p.ln1.gamma, p.ln3.beta};
    auto r = gradcheck_rand<double>(rng, {1, 8});
    Fn fn = [r, p](Inputs& in) {
      EncoderParams<double> pp = p;
      pp.tsa.wq = in[3];
      pp.tsa.wv = in[4];
      pp.sca.val_w = in[5];
      pp.ffn_w1 = in[6];
      pp.ffn_w2 = in[7];
      pp.ln1.gamma = in[8];
      pp.ln3.beta = in[9];
      HistoryBank<double> bank;
      bank.push(in[2]);
      return sum(mul(encoder_layer(in[0], FeatureMap<double>(in[1]), bank, pp), r));
    };
    return std::make_pair(fn, inputs);
  }));

  rows.push_back(detail::run_gradcheck_case("arcface_logits", tolerance, [](std::uint64_t seed) {
    Rng rng(seed * 41 + 9);
    auto bank = make_cluster_bank<double>(2, 3, 6, 0.5, 8.0, rng.stream("bank"));
    Inputs inputs = {gradcheck_rand<double>(rng, {6}, 0.2, 1.0), bank.centers};
    auto r = gradcheck_rand<double>(rng, {2});
    Fn fn = [r, bank](Inputs& in) {
      ClusterCenterBank<double> b = bank;
      b.centers = in[1];
      return sum(mul(arcface_logits(in[0], b, 1), r));
    };
    return std::make_pair(fn, inputs);
  }));

  rows.push_back(detail::run_gradcheck_case("cross_entropy", tolerance, [](std::uint64_t seed) {
    Rng rng(seed * 43 + 10);
    Inputs inputs = {gradcheck_rand<double>(rng, {5}, -3, 3)};
    Fn fn = [](Inputs& in) { return cross_entropy(in[0], 2); };
    return std::make_pair(fn, inputs);
  }));

  return rows;
}

}  // namespace lightformer
