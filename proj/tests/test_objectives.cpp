#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "burstkit/objectives.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace burstkit;
namespace obj = burstkit::objectives;
using test::grad_check;
using test::rand_tensor;

TEST_SUITE("objectives") {

TEST_CASE("ccc endpoints and guard") {
  std::vector<double> up = {1, 2, 3}, down = {3, 2, 1};
  CHECK(obj::ccc(up, up) == doctest::Approx(1.0));
  CHECK(obj::ccc(up, down) == doctest::Approx(-1.0));
  std::vector<double> flat = {2, 2, 2};
  CHECK(obj::ccc(flat, up) == doctest::Approx(0.0));
  CHECK(obj::ccc(flat, flat) == 0.0);  // degenerate denominator guard
  CHECK_THROWS_AS(obj::ccc({1.0}, {1.0}), ValidationError);
  CHECK_THROWS_AS(obj::ccc({1, 2}, {1, 2, 3}), ValidationError);
}

TEST_CASE("ccc symmetries") {
  Rng rng(31);
  for (int it = 0; it < 10; ++it) {
    std::vector<double> p(8), t(8);
    for (auto& v : p) v = rand_uniform(rng, -2, 2);
    for (auto& v : t) v = rand_uniform(rng, -2, 2);
    double base = obj::ccc(p, t);
    CHECK(obj::ccc(t, p) == doctest::Approx(base).epsilon(1e-12));
    double c = rand_uniform(rng, -5, 5);
    std::vector<double> ps = p, ts = t;
    for (auto& v : ps) v += c;
    for (auto& v : ts) v += c;
    CHECK(obj::ccc(ps, ts) == doctest::Approx(base).epsilon(1e-9));
    double a = rand_uniform(rng, 0.1, 4.0);
    ps = p;
    ts = t;
    for (auto& v : ps) v *= a;
    for (auto& v : ts) v *= a;
    CHECK(obj::ccc(ps, ts) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("mean ccc over columns") {
  // Two columns: one perfect, one anti-perfect.
  std::vector<double> pred = {1, 3, 2, 2, 3, 1};  // rows: (1,3),(2,2),(3,1)
  std::vector<double> target = {1, 1, 2, 2, 3, 3};
  CHECK(obj::mean_ccc(pred, target, 3, 2) == doctest::Approx(0.0));
  CHECK(obj::mean_ccc(target, target, 3, 2) == doctest::Approx(1.0));
  // Identical column permutation of both matrices leaves the value unchanged.
  std::vector<double> pred_sw = {3, 1, 2, 2, 1, 3}, target_sw = {1, 1, 2, 2, 3, 3};
  CHECK(obj::mean_ccc(pred_sw, target_sw, 3, 2) ==
        doctest::Approx(obj::mean_ccc(pred, target, 3, 2)));
}

TEST_CASE("emotion loss hits -1 on a perfect batch and gradchecks") {
  Rng rng(41);
  TensorD target = rand_tensor(rng, {4, 3}, 0.0, 1.0);
  TensorD pred = TensorD::from_data(target.shape(), target.value());
  CHECK(obj::loss_emotion(pred, target).item() == doctest::Approx(-1.0));
  TensorD noisy = rand_tensor(rng, {4, 3}, 0.0, 1.0);
  auto rep = grad_check(
      [&target](std::vector<TensorD>& p) { return obj::loss_emotion(p[0], target); },
      {noisy}, rng, 12);
  CAPTURE(rep.describe());
  CHECK(rep.ok);
  CHECK_THROWS_AS(obj::loss_emotion(rand_tensor(rng, {1, 3}), rand_tensor(rng, {1, 3})),
                  ValidationError);
}

TEST_CASE("bigger batches stabilize the emotion loss") {
  Rng rng(43);
  const std::size_t pop = 1000, k = 3;
  std::vector<double> target(pop * k), pred(pop * k);
  for (std::size_t i = 0; i < pop * k; ++i) {
    target[i] = rand_uniform(rng);
    pred[i] = 0.8 * target[i] + 0.2 * rand_uniform(rng);
  }
  auto batch_loss_var = [&](std::size_t bs) {
    std::vector<double> losses;
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<double> bp(bs * k), bt(bs * k);
      for (std::size_t r = 0; r < bs; ++r) {
        std::size_t idx = rand_index(rng, pop);
        for (std::size_t j = 0; j < k; ++j) {
          bp[r * k + j] = pred[idx * k + j];
          bt[r * k + j] = target[idx * k + j];
        }
      }
      losses.push_back(-obj::mean_ccc(bp, bt, bs, k));
    }
    double m = std::accumulate(losses.begin(), losses.end(), 0.0) / losses.size();
    double v = 0;
    for (double l : losses) v += (l - m) * (l - m);
    return v / losses.size();
  };
  CHECK(batch_loss_var(4) > batch_loss_var(64));
}

TEST_CASE("age loss values and hand gradient") {
  TensorD pred = TensorD::from_data({3, 1}, {1, 2, 3}, true);
  TensorD target = TensorD::from_data({3, 1}, {0, 0, 0});
  TensorD l = obj::loss_age(pred, target);
  CHECK(l.item() == doctest::Approx(14.0 / 3.0));
  backward(l);
  CHECK(pred.grad()[0] == doctest::Approx(2.0 / 3.0));
  CHECK(pred.grad()[1] == doctest::Approx(4.0 / 3.0));
  CHECK(pred.grad()[2] == doctest::Approx(2.0));
  TensorD same = TensorD::from_data({2, 1}, {5, 6});
  CHECK(obj::loss_age(same, same).item() == 0.0);
  TensorD shifted = TensorD::from_data({2, 1}, {7, 8});
  CHECK(obj::loss_age(shifted, same).item() == doctest::Approx(4.0));
}

TEST_CASE("country loss values and gradcheck through softmax") {
  TensorD onehot = TensorD::from_data({2, 3}, {1, 0, 0, 0, 1, 0});
  CHECK(obj::loss_country(onehot, {0, 1}).item() == doctest::Approx(0.0));
  TensorD uniform = TensorD::filled({2, 4}, 0.25);
  CHECK(obj::loss_country(uniform, {3, 0}).item() == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(obj::loss_country(uniform, {4, 0}), ValidationError);
  Rng rng(47);
  TensorD logits = rand_tensor(rng, {4, 3});
  std::vector<int> labels = {0, 2, 1, 2};
  auto rep = grad_check(
      [&labels](std::vector<TensorD>& p) {
        return obj::loss_country(softmax(p[0]), labels);
      },
      {logits}, rng, 12);
  CAPTURE(rep.describe());
  CHECK(rep.ok);
}

TEST_CASE("multitask loss weighting") {
  obj::TaskWeights w;
  auto emo = TensorD::scalar(-0.5);
  auto cty = TensorD::scalar(1.386);
  auto age = TensorD::scalar(10.0);
  TensorD total = obj::loss_multitask<double>(emo, cty, age, w);
  CHECK(total.item() == doctest::Approx(-2.5 + 0.05 * 1.386 + 0.5));
  obj::TaskWeights solo{5.0, 0.0, 0.0};
  CHECK(obj::loss_multitask<double>(emo, std::nullopt, std::nullopt, solo).item() ==
        doctest::Approx(-2.5));
  obj::TaskWeights zero{0.0, 0.0, 0.0};
  CHECK_THROWS_AS(obj::loss_multitask<double>(emo, cty, age, zero), ValidationError);
  CHECK_THROWS_AS(obj::loss_multitask<double>(emo, std::nullopt, std::nullopt, w),
                  ValidationError);
  obj::TaskWeights negative{5.0, -0.1, 0.05};
  CHECK_THROWS_AS(obj::loss_multitask<double>(emo, cty, age, negative), ValidationError);
}

TEST_CASE("uar endpoints, exclusion rule and errors") {
  CHECK(obj::uar({0, 1, 2, 3}, {0, 1, 2, 3}, 4) == doctest::Approx(1.0));
  // Constant majority-class prediction on a balanced 4-class split.
  CHECK(obj::uar({0, 0, 0, 0, 0, 0, 0, 0}, {0, 0, 1, 1, 2, 2, 3, 3}, 4) ==
        doctest::Approx(0.25));
  CHECK(obj::uar({0, 0, 1, 0}, {0, 0, 1, 1}, 2) == doctest::Approx(0.75));
  // A class absent from ground truth is excluded from the average.
  CHECK(obj::uar({0, 1}, {0, 1}, 5) == doctest::Approx(1.0));
  CHECK(obj::uar({1, 0}, {0, 1}, 3) == doctest::Approx(0.0));
  CHECK_THROWS_AS(obj::uar({}, {}, 4), ValidationError);
  CHECK_THROWS_AS(obj::uar({0, 7}, {0, 1}, 4), ValidationError);
}

TEST_CASE("mae basics and scale equivariance") {
  CHECK(obj::mae({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(obj::mae({26, 26, 26}, {25, 26, 30}) == doctest::Approx(5.0 / 3.0));
  Rng rng(53);
  std::vector<double> p(6), t(6);
  for (auto& v : p) v = rand_uniform(rng, 10, 80);
  for (auto& v : t) v = rand_uniform(rng, 10, 80);
  double a = -2.5;
  std::vector<double> pa = p, ta = t;
  for (auto& v : pa) v *= a;
  for (auto& v : ta) v *= a;
  CHECK(obj::mae(pa, ta) == doctest::Approx(std::abs(a) * obj::mae(p, t)));
  CHECK_THROWS_AS(obj::mae({}, {}), ValidationError);
}

TEST_CASE("harmonic mean formula matches published rows") {
  auto h1 = obj::harmonic_mean_score(0.569, 0.513, 4.093);
  REQUIRE(h1.defined);
  CHECK(std::abs(h1.value - 0.385) < 0.001);
  auto h2 = obj::harmonic_mean_score(0.648, 0.596, 3.722);
  REQUIRE(h2.defined);
  CHECK(std::abs(h2.value - 0.432) < 0.001);
  auto h3 = obj::harmonic_mean_score(1.0, 1.0, 1.0);
  REQUIRE(h3.defined);
  CHECK(h3.value == doctest::Approx(1.0));
  CHECK_FALSE(obj::harmonic_mean_score(0.0, 0.5, 4.0).defined);
  CHECK_FALSE(obj::harmonic_mean_score(-0.1, 0.5, 4.0).defined);
  CHECK_FALSE(obj::harmonic_mean_score(0.5, 0.0, 4.0).defined);
  // Perfect-predictor boundary: MAE floored at 1e-6.
  auto h4 = obj::harmonic_mean_score(1.0, 1.0, 0.0);
  REQUIRE(h4.defined);
  CHECK(h4.value == doctest::Approx(3.0 / (2.0 + 1e-6)));
}

TEST_CASE("harmonic mean is monotone in each argument") {
  Rng rng(59);
  for (int it = 0; it < 50; ++it) {
    double c = rand_uniform(rng, 0.05, 1.0);
    double u = rand_uniform(rng, 0.05, 1.0);
    double m = rand_uniform(rng, 0.01, 10.0);
    double base = obj::harmonic_mean_score(c, u, m).value;
    CHECK(obj::harmonic_mean_score(c + 0.01, u, m).value > base);
    CHECK(obj::harmonic_mean_score(c, u + 0.01, m).value > base);
    CHECK(obj::harmonic_mean_score(c, u, m + 0.01).value < base);
  }
}

TEST_CASE("score_predictions joins the metrics and survives shuffling") {
  Rng rng(61);
  const std::size_t n = 40, k = 3;
  std::vector<double> emo(n * k), age(n);
  std::vector<int> cty(n);
  for (auto& v : emo) v = rand_uniform(rng);
  for (auto& v : age) v = rand_uniform(rng, 18, 70);
  for (auto& v : cty) v = static_cast<int>(rand_index(rng, 4));
  // Oracle predictor.
  auto s = obj::score_predictions(emo, emo, n, k, cty, cty, 4, age, age);
  CHECK(s.mean_ccc == doctest::Approx(1.0));
  CHECK(s.uar == doctest::Approx(1.0));
  CHECK(s.mae == 0.0);
  REQUIRE(s.harmonic.defined);
  CHECK(s.harmonic.value == doctest::Approx(3.0 / (2.0 + 1e-6)));
  REQUIRE(s.per_emotion_ccc.size() == k);
  // Constant-age predictor equals the brute-force mean absolute deviation.
  std::vector<double> const_age(n, 26.0);
  double brute = 0;
  for (double a : age) brute += std::abs(26.0 - a);
  brute /= n;
  auto s2 = obj::score_predictions(emo, emo, n, k, cty, cty, 4, const_age, age);
  CHECK(s2.mae == doctest::Approx(brute).epsilon(1e-15));
  // Joint permutation of the rows leaves every metric unchanged.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle_vec(perm, rng);
  std::vector<double> emo_p(n * k), age_p(n), const_age_p(n);
  std::vector<int> cty_p(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) emo_p[i * k + j] = emo[perm[i] * k + j];
    age_p[i] = age[perm[i]];
    const_age_p[i] = const_age[perm[i]];
    cty_p[i] = cty[perm[i]];
  }
  auto s3 =
      obj::score_predictions(emo_p, emo_p, n, k, cty_p, cty_p, 4, const_age_p, age_p);
  CHECK(s3.mean_ccc == doctest::Approx(s2.mean_ccc).epsilon(1e-12));
  CHECK(s3.uar == doctest::Approx(s2.uar).epsilon(1e-12));
  CHECK(s3.mae == doctest::Approx(s2.mae).epsilon(1e-12));
}

TEST_CASE("metrics csv layout") {
  CHECK(obj::metrics_csv_header(2) ==
        "model_id,split,mean_ccc,uar,mae,harmonic_mean,ccc_emo_1,ccc_emo_2");
  obj::TaskScores s;
  s.mean_ccc = 0.5;
  s.uar = 0.25;
  s.mae = 4.0;
  s.harmonic = obj::harmonic_mean_score(0.5, 0.25, 4.0);
  s.per_emotion_ccc = {0.4, 0.6};
  std::string row = obj::metrics_csv_row("m1", "val", s);
  CHECK(row == "m1,val,0.5,0.25,4,0.3,0.4,0.6");
  s.harmonic = obj::harmonic_mean_score(-0.5, 0.25, 4.0);
  CHECK(obj::metrics_csv_row("m1", "val", s).find("undefined") != std::string::npos);
}

}  // TEST_SUITE
