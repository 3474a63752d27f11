#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lightformer/arcface.hpp"
#include "lightformer/gradcheck.hpp"
#include "test_util.hpp"

using namespace lightformer;
using testutil::random_tensor;

namespace {

// Enumerates every centre with plain loops: normalize, dot, per-class max,
// clamp, margin on the target angle, scale.
std::vector<double> arcface_oracle(const std::vector<double>& embedding,
                                   const ClusterCenterBank<double>& bank, int target) {
  const int classes = bank.classes(), w = bank.centers_per_class(), dim = bank.dim();
  double en = 0;
  for (double v : embedding) en += v * v;
  en = std::sqrt(en);
  std::vector<double> logits(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    double best = -2.0;
    for (int k = 0; k < w; ++k) {
      double dot = 0, cn = 0;
      for (int d = 0; d < dim; ++d) {
        const double cv = bank.centers.at(c, k, d);
        dot += embedding[static_cast<std::size_t>(d)] * cv;
        cn += cv * cv;
      }
      best = std::max(best, dot / (en * std::sqrt(cn)));
    }
    best = std::min(std::max(best, -1.0 + kCosineClamp), 1.0 - kCosineClamp);
    double theta = std::acos(best);
    if (c == target && bank.margin != 0.0) theta = std::min(theta + bank.margin, kPi);
    logits[static_cast<std::size_t>(c)] = bank.scale * ((c == target && bank.margin != 0.0) ? std::cos(theta) : best);
  }
  return logits;
}

ClusterCenterBank<double> bank_from(std::vector<double> centers, int classes, int w, int dim,
                                    double margin, double scale) {
  ClusterCenterBank<double> bank;
  bank.centers = Tensor<double>::from_data({classes, w, dim}, std::move(centers));
  bank.margin = margin;
  bank.scale = scale;
  return bank;
}

}  // namespace

TEST_CASE("class cosine of an embedding equal to a centre is 1 (clamped)") {
  Rng rng(201);
  auto bank = make_cluster_bank<double>(2, 3, 8, 0.5, 64.0, rng.stream("bank"));
  std::vector<double> e(8);
  for (int d = 0; d < 8; ++d) e[static_cast<std::size_t>(d)] = bank.centers.at(0, 1, d);
  auto cosines = class_cosines(Tensor<double>::from_data({8}, e), bank);
  CHECK(cosines.values()[0] == doctest::Approx(1.0 - kCosineClamp).epsilon(1e-12));
  CHECK(cosines.values()[1] < 1.0 - kCosineClamp);
}

TEST_CASE("w=1 reduces to the plain per-class cosine") {
  Rng rng(203);
  auto bank = make_cluster_bank<double>(2, 1, 6, 0.5, 64.0, rng.stream("bank"));
  auto e = random_tensor<double>(rng, {6});
  auto got = class_cosines(e, bank);
  double en = 0;
  for (double v : e.values()) en += v * v;
  en = std::sqrt(en);
  for (int c = 0; c < 2; ++c) {
    double dot = 0, cn = 0;
    for (int d = 0; d < 6; ++d) {
      dot += e.values()[static_cast<std::size_t>(d)] * bank.centers.at(c, 0, d);
      cn += bank.centers.at(c, 0, d) * bank.centers.at(c, 0, d);
    }
    CHECK(got.values()[static_cast<std::size_t>(c)] == doctest::Approx(dot / (en * std::sqrt(cn))).epsilon(1e-12));
  }
}

TEST_CASE("orthogonal and antipodal centres give cosines [1, 0]") {
  auto bank = bank_from({1, 0, 0, 1, /* class 1 */ -1, 0, 0, -1}, 2, 2, 2, 0.5, 64.0);
  auto cosines = class_cosines(Tensor<double>::from_data({2}, {1, 0}), bank);
  CHECK(cosines.values()[0] == doctest::Approx(1.0 - kCosineClamp).epsilon(1e-12));
  CHECK(cosines.values()[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zero embedding is rejected") {
  Rng rng(207);
  auto bank = make_cluster_bank<double>(2, 2, 4, 0.5, 64.0, rng.stream("bank"));
  CHECK_THROWS_AS(class_cosines(Tensor<double>::zeros({4}), bank), ContractError);
}

TEST_CASE("target logit at theta ~ 0 follows the closed form s*cos(m)") {
  Rng rng(209);
  auto bank = make_cluster_bank<double>(2, 1, 8, 0.5, 2.0, rng.stream("bank"));
  std::vector<double> e(8);
  for (int d = 0; d < 8; ++d) e[static_cast<std::size_t>(d)] = bank.centers.at(0, 0, d);
  auto logits = arcface_logits(Tensor<double>::from_data({8}, e), bank, 0);
  // theta is acos(1 - 1e-7) rather than exactly 0 because of the clamp
  CHECK(logits.values()[0] == doctest::Approx(2.0 * std::cos(0.5)).epsilon(1e-3));
}

TEST_CASE("margin zero leaves logits exactly s * cosines") {
  Rng rng(211);
  auto bank = make_cluster_bank<double>(2, 3, 5, 0.0, 64.0, rng.stream("bank"));
  auto e = random_tensor<double>(rng, {5});
  auto cosines = class_cosines(e, bank);
  auto logits = arcface_logits(e, bank, 1);
  for (int c = 0; c < 2; ++c) {
    CHECK(logits.values()[static_cast<std::size_t>(c)] == 64.0 * cosines.values()[static_cast<std::size_t>(c)]);
  }
}

TEST_CASE("arcface logits match the enumeration oracle") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 100 + 213);
    auto bank = make_cluster_bank<double>(2, 3, 6, 0.5, 64.0, rng.stream("bank"));
    auto e = random_tensor<double>(rng, {6}, -2, 2);
    const int target = static_cast<int>(rng.uniform_int(0, 1));
    auto got = arcface_logits(e, bank, target);
    auto want = arcface_oracle(e.values(), bank, target);
    CHECK(testutil::max_abs_diff(got, want) < 1e-10);
  }
}

TEST_CASE("decode is symmetric for an equidistant embedding") {
  // both class centres at 45 degrees from the embedding
  const double r = std::sqrt(0.5);
  auto bank = bank_from({r, r, r, -r}, 2, 1, 2, 0.5, 64.0);
  auto probs = decode(Tensor<double>::from_data({2}, {1, 0}), bank);
  CHECK(probs.values()[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(probs.values()[1] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("decode saturates when the embedding sits on a centre") {
  auto bank = bank_from({1, 0, 0, 0, /* stop */ 0, 1, 0, 0}, 2, 1, 4, 0.5, 64.0);
  auto probs = decode(Tensor<double>::from_data({4}, {1, 0, 0, 0}), bank);
  CHECK(probs.values()[0] > 1.0 - 1e-9);
}

TEST_CASE("decode matches the oracle through softmax") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 100 + 223);
    auto bank = make_cluster_bank<double>(2, 4, 5, 0.5, 16.0, rng.stream("bank"));
    auto e = random_tensor<double>(rng, {5}, -2, 2);
    auto got = decode(e, bank);
    auto logits = arcface_oracle(e.values(), bank, -1);
    const double mx = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
    CHECK(got.values()[0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-10));
    CHECK(got.values()[1] == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-10));
  }
}

TEST_CASE("decoder depends only on the embedding direction") {
  Rng rng(227);
  auto bank = make_cluster_bank<double>(2, 3, 6, 0.5, 64.0, rng.stream("bank"));
  auto e = random_tensor<double>(rng, {6}, -1, 1);
  for (double scale : {1e-3, 0.5, 7.0, 1e4}) {
    auto scaled = mul_scalar(e, scale);
    CHECK(testutil::max_abs_diff(class_cosines(scaled, bank), class_cosines(e, bank)) < 1e-9);
    CHECK(testutil::max_abs_diff(arcface_logits(scaled, bank, 1), arcface_logits(e, bank, 1)) < 1e-9);
    CHECK(testutil::max_abs_diff(decode(scaled, bank), decode(e, bank)) < 1e-9);
  }
}

TEST_CASE("the margin can only lower the target logit") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Rng rng(seed + 229);
    auto bank = make_cluster_bank<double>(2, 2, 5, 0.5, 64.0, rng.stream("bank"));
    auto e = random_tensor<double>(rng, {5}, -2, 2);
    const int target = static_cast<int>(rng.uniform_int(0, 1));
    auto with_margin = arcface_logits(e, bank, target);
    bank.margin = 0.0;
    auto without = arcface_logits(e, bank, target);
    CHECK(with_margin.values()[static_cast<std::size_t>(target)] <=
          without.values()[static_cast<std::size_t>(target)] + 1e-12);
  }
}

TEST_CASE("decode argmax equals class_cosines argmax") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng(seed + 233);
    auto bank = make_cluster_bank<double>(2, 3, 4, 0.5, 64.0, rng.stream("bank"));
    auto e = random_tensor<double>(rng, {4}, -2, 2);
    auto cosines = class_cosines(e, bank);
    auto probs = decode(e, bank);
    const int a = cosines.values()[0] >= cosines.values()[1] ? 0 : 1;
    const int b = probs.values()[0] >= probs.values()[1] ? 0 : 1;
    CHECK(a == b);
  }
}

TEST_CASE("target out of range is rejected") {
  Rng rng(239);
  auto bank = make_cluster_bank<double>(2, 1, 4, 0.5, 64.0, rng.stream("bank"));
  CHECK_THROWS_AS(arcface_logits(random_tensor<double>(rng, {4}), bank, 2), ContractError);
}

TEST_CASE("arcface logits pass grad_check away from the clamp boundaries") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed * 41 + 241);
    auto bank = make_cluster_bank<double>(2, 3, 6, 0.5, 8.0, rng.stream("bank"));
    std::vector<Tensor<double>> inputs = {
        random_tensor<double>(rng, {6}, 0.2, 1.0),  // generic direction, cosines interior
        bank.centers,
    };
    auto r = random_tensor<double>(rng, {2});
    auto report = grad_check(
        [&](std::vector<Tensor<double>>& in) {
          ClusterCenterBank<double> b = bank;
          b.centers = in[1];
          return sum(mul(arcface_logits(in[0], b, 1), r));
        },
        inputs, 1e-6);
    INFO("seed ", seed, " worst ", report.worst);
    CHECK(report.ok);
    CHECK(report.max_rel_error < 1e-4);
  }
}
