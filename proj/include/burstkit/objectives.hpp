#pragma once

// Task losses (differentiable, templated) and evaluation metrics (double).

#include <optional>
#include <string>
#include <vector>

#include "burstkit/common.hpp"
#include "burstkit/tensor.hpp"

namespace burstkit::objectives {

// ---------------------------------------------------------------------------
// Metrics (plain double, non-differentiable path)
// ---------------------------------------------------------------------------

// Lin's concordance correlation coefficient with population (1/n) moments:
// 2*cov / (var_p + var_t + (mean_p - mean_t)^2); 0 when the denominator
// vanishes (< 1e-12). Requires n >= 2.
double ccc(const std::vector<double>& pred, const std::vector<double>& target);

// Per-column CCC of two row-major n x k matrices.
std::vector<double> column_ccc(const std::vector<double>& pred,
                               const std::vector<double>& target, std::size_t n,
                               std::size_t k);
double mean_ccc(const std::vector<double>& pred, const std::vector<double>& target,
                std::size_t n, std::size_t k);

// Mean per-class recall over the classes present in `truth`; classes never
// observed in the ground truth are excluded from the average.
double uar(const std::vector<int>& pred, const std::vector<int>& truth, int n_classes);

double mae(const std::vector<double>& pred, const std::vector<double>& target);

struct HarmonicMean {
  bool defined = false;
  double value = 0.0;
};

// Competition metric 3 / (1/mean_ccc + 1/uar + mae): the harmonic mean of
// mean_ccc, uar and inverted MAE. MAE is floored at 1e-6 to guard the
// perfect-predictor singularity; non-positive mean_ccc or uar leaves the
// score undefined.
HarmonicMean harmonic_mean_score(double mean_ccc_v, double uar_v, double mae_v);

struct TaskScores {
  double mean_ccc = 0.0;
  double uar = 0.0;
  double mae = 0.0;
  HarmonicMean harmonic;
  std::vector<double> per_emotion_ccc;
};

// Metrics over aligned prediction/target arrays for one split.
// emo_* are n x k row-major; country labels are class indices; ages in years.
TaskScores score_predictions(const std::vector<double>& emo_pred,
                             const std::vector<double>& emo_true, std::size_t n,
                             std::size_t k, const std::vector<int>& country_pred,
                             const std::vector<int>& country_true, int n_classes,
                             const std::vector<double>& age_pred,
                             const std::vector<double>& age_true);

std::string metrics_csv_header(std::size_t k);
std::string metrics_csv_row(const std::string& model_id, const std::string& split,
                            const TaskScores& s);

struct TaskWeights {
  double emotion = 5.0;
  double country = 0.05;
  double age = 0.05;
};

// ---------------------------------------------------------------------------
// Differentiable losses
// ---------------------------------------------------------------------------

namespace detail {

// Row gather: out[i] = a[i, idx[i]] as an n x 1 tensor.
template <typename S>
Tensor<S> gather_cols(const Tensor<S>& a, const std::vector<int>& idx) {
  if (a.rank() != 2 || idx.size() != a.dim(0)) {
    throw ShapeError("gather needs one index per row of " + shape_str(a.shape()));
  }
  std::size_t n = a.dim(0), c = a.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= c) {
      throw ValidationError("class label " + std::to_string(idx[i]) + " out of range [0, " +
                            std::to_string(c) + ") at row " + std::to_string(i));
    }
  }
  std::vector<S> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a.value()[i * c + idx[i]];
  auto keep = std::make_shared<std::vector<int>>(idx);
  return burstkit::detail::make_op<S>(
      {n, 1}, std::move(v), {a}, [c, keep](burstkit::detail::Node<S>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i) {
          p.grad[i * c + (*keep)[i]] += self.grad[i];
        }
      });
}

// Differentiable CCC of two n x 1 columns. When the denominator underflows
// the guard, the contribution is the constant 0 (no gradient), matching the
// metric definition.
template <typename S>
Tensor<S> ccc_column(const Tensor<S>& p, const Tensor<S>& t) {
  Tensor<S> mp = mean_all(p), mt = mean_all(t);
  Tensor<S> cov = sub(mean_all(mul(p, t)), mul(mp, mt));
  Tensor<S> var_p = sub(mean_all(square(p)), square(mp));
  Tensor<S> var_t = sub(mean_all(square(t)), square(mt));
  Tensor<S> denom = add(add(var_p, var_t), square(sub(mp, mt)));
  if (static_cast<double>(denom.item()) < 1e-12) return Tensor<S>::scalar(S(0));
  return divide(mul_scalar(cov, S(2)), denom);
}

}  // namespace detail

// Negative mean CCC over the K emotion columns of an n x K batch, n >= 2.
template <typename S>
Tensor<S> loss_emotion(const Tensor<S>& pred, const Tensor<S>& target) {
  if (pred.rank() != 2 || pred.shape() != target.shape()) {
    throw ShapeError("emotion loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  if (pred.dim(0) < 2) {
    throw ValidationError("CCC needs at least 2 rows, got " + std::to_string(pred.dim(0)));
  }
  std::size_t k = pred.dim(1);
  Tensor<S> acc = Tensor<S>::scalar(S(0));
  for (std::size_t j = 0; j < k; ++j) {
    acc = add(acc, detail::ccc_column(slice_cols(pred, j, 1), slice_cols(target, j, 1)));
  }
  return neg(mul_scalar(acc, S(1) / static_cast<S>(k)));
}

// Mean squared error.
template <typename S>
Tensor<S> loss_age(const Tensor<S>& pred, const Tensor<S>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("age loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  return mean_all(square(sub(pred, target)));
}

// Categorical cross-entropy over probability rows: -mean log(max(p_true, 1e-12)).
template <typename S>
Tensor<S> loss_country(const Tensor<S>& probs, const std::vector<int>& labels) {
  Tensor<S> picked = detail::gather_cols(probs, labels);
  return neg(mean_all(log_t(clamp_min(picked, S(1e-12)))));
}

// Weighted sum of the attached task losses.
template <typename S>
Tensor<S> loss_multitask(const std::optional<Tensor<S>>& emotion,
                         const std::optional<Tensor<S>>& country,
                         const std::optional<Tensor<S>>& age, const TaskWeights& w) {
  if (w.emotion < 0 || w.country < 0 || w.age < 0) {
    throw ValidationError("task weights must be non-negative");
  }
  if (w.emotion == 0 && w.country == 0 && w.age == 0) {
    throw ValidationError("at least one task weight must be positive");
  }
  auto missing = [](const char* task) {
    throw ValidationError(std::string("weight given for task '") + task +
                          "' but no loss component attached");
  };
  Tensor<S> total = Tensor<S>::scalar(S(0));
  if (w.emotion > 0) {
    if (!emotion) missing("emotion");
    total = add(total, mul_scalar(*emotion, static_cast<S>(w.emotion)));
  }
  if (w.country > 0) {
    if (!country) missing("country");
    total = add(total, mul_scalar(*country, static_cast<S>(w.country)));
  }
  if (w.age > 0) {
    if (!age) missing("age");
    total = add(total, mul_scalar(*age, static_cast<S>(w.age)));
  }
  return total;
}

}  // namespace burstkit::objectives
