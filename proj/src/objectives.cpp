#include "burstkit/objectives.hpp"

#include <cmath>

namespace burstkit::objectives {

namespace {

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(const double* x, std::size_t n, std::size_t stride) {
  Moments m;
  for (std::size_t i = 0; i < n; ++i) m.mean += x[i * stride];
  m.mean /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = x[i * stride] - m.mean;
    m.var += d * d;
  }
  m.var /= static_cast<double>(n);
  return m;
}

double ccc_strided(const double* p, const double* t, std::size_t n, std::size_t stride) {
  Moments mp = moments(p, n, stride), mt = moments(t, n, stride);
  double cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (p[i * stride] - mp.mean) * (t[i * stride] - mt.mean);
  }
  cov /= static_cast<double>(n);
  double gap = mp.mean - mt.mean;
  double denom = mp.var + mt.var + gap * gap;
  if (denom < 1e-12) return 0.0;
  return 2.0 * cov / denom;
}

}  // namespace

double ccc(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size()) {
    throw ValidationError("ccc length mismatch: " + std::to_string(pred.size()) + " vs " +
                          std::to_string(target.size()));
  }
  if (pred.size() < 2) {
    throw ValidationError("ccc needs at least 2 samples, got " + std::to_string(pred.size()));
  }
  return ccc_strided(pred.data(), target.data(), pred.size(), 1);
}

std::vector<double> column_ccc(const std::vector<double>& pred,
                               const std::vector<double>& target, std::size_t n,
                               std::size_t k) {
  if (pred.size() != n * k || target.size() != n * k) {
    throw ValidationError("column_ccc expects two " + std::to_string(n) + " x " +
                          std::to_string(k) + " matrices");
  }
  if (n < 2) throw ValidationError("ccc needs at least 2 samples, got " + std::to_string(n));
  std::vector<double> out(k);
  for (std::size_t j = 0; j < k; ++j) {
    out[j] = ccc_strided(pred.data() + j, target.data() + j, n, k);
  }
  return out;
}

double mean_ccc(const std::vector<double>& pred, const std::vector<double>& target,
                std::size_t n, std::size_t k) {
  auto cols = column_ccc(pred, target, n, k);
  double acc = 0.0;
  for (double c : cols) acc += c;
  return acc / static_cast<double>(k);
}

double uar(const std::vector<int>& pred, const std::vector<int>& truth, int n_classes) {
  if (truth.empty()) throw ValidationError("uar on empty input");
  if (pred.size() != truth.size()) {
    throw ValidationError("uar length mismatch: " + std::to_string(pred.size()) + " vs " +
                          std::to_string(truth.size()));
  }
  std::vector<std::size_t> total(n_classes, 0), correct(n_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes || pred[i] < 0 || pred[i] >= n_classes) {
      throw ValidationError("class label out of range [0, " + std::to_string(n_classes) +
                            ") at index " + std::to_string(i));
    }
    ++total[truth[i]];
    if (pred[i] == truth[i]) ++correct[truth[i]];
  }
  double acc = 0.0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c) {
    if (total[c] == 0) continue;  // undefined recall: class absent from ground truth
    acc += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    ++present;
  }
  if (present == 0) throw ValidationError("uar: no class present in ground truth");
  return acc / present;
}

double mae(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.empty()) throw ValidationError("mae on empty input");
  if (pred.size() != target.size()) {
    throw ValidationError("mae length mismatch: " + std::to_string(pred.size()) + " vs " +
                          std::to_string(target.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

HarmonicMean harmonic_mean_score(double mean_ccc_v, double uar_v, double mae_v) {
  HarmonicMean h;
  if (mean_ccc_v <= 0.0 || uar_v <= 0.0) return h;  // undefined
  double floored_mae = std::max(mae_v, 1e-6);
  h.defined = true;
  h.value = 3.0 / (1.0 / mean_ccc_v + 1.0 / uar_v + floored_mae);
  return h;
}

TaskScores score_predictions(const std::vector<double>& emo_pred,
                             const std::vector<double>& emo_true, std::size_t n,
                             std::size_t k, const std::vector<int>& country_pred,
                             const std::vector<int>& country_true, int n_classes,
                             const std::vector<double>& age_pred,
                             const std::vector<double>& age_true) {
  TaskScores s;
  s.per_emotion_ccc = column_ccc(emo_pred, emo_true, n, k);
  double acc = 0.0;
  for (double c : s.per_emotion_ccc) acc += c;
  s.mean_ccc = acc / static_cast<double>(k);
  s.uar = uar(country_pred, country_true, n_classes);
  s.mae = mae(age_pred, age_true);
  s.harmonic = harmonic_mean_score(s.mean_ccc, s.uar, s.mae);
  return s;
}

std::string metrics_csv_header(std::size_t k) {
  std::string h = "model_id,split,mean_ccc,uar,mae,harmonic_mean";
  for (std::size_t j = 0; j < k; ++j) h += ",ccc_emo_" + std::to_string(j + 1);
  return h;
}

std::string metrics_csv_row(const std::string& model_id, const std::string& split,
                            const TaskScores& s) {
  std::string row = model_id + "," + split + "," + fmt_g(s.mean_ccc) + "," + fmt_g(s.uar) +
                    "," + fmt_g(s.mae) + ",";
  row += s.harmonic.defined ? fmt_g(s.harmonic.value) : "undefined";
  for (double c : s.per_emotion_ccc) row += "," + fmt_g(c);
  return row;
}

}  // namespace burstkit::objectives
