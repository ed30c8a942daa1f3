#include "burstkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "burstkit/models.hpp"
#include "burstkit/training.hpp"

namespace burstkit::analysis {

// ---------------------------------------------------------------------------
// Auxiliary-label manipulation
// ---------------------------------------------------------------------------

std::vector<data::Sample> shuffle_aux_labels(std::vector<data::Sample> samples,
                                             std::uint64_t seed) {
  if (samples.empty()) throw ValidationError("cannot shuffle labels of an empty split");
  std::vector<int> countries;
  std::vector<double> ages;
  countries.reserve(samples.size());
  ages.reserve(samples.size());
  for (const auto& s : samples) {
    countries.push_back(s.country);
    ages.push_back(s.age);
  }
  Rng country_rng(seed);
  shuffle_vec(countries, country_rng);
  Rng age_rng(seed + 1);
  shuffle_vec(ages, age_rng);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].country = countries[i];
    samples[i].age = ages[i];
  }
  return samples;
}

std::vector<data::Sample> incorrect_assignment(std::vector<data::Sample> samples,
                                               std::size_t n_countries, std::uint64_t seed) {
  if (samples.empty()) throw ValidationError("cannot relabel an empty split");
  if (n_countries < 2) {
    throw ValidationError("incorrect assignment needs at least two countries");
  }
  std::vector<double> distinct;
  for (const auto& s : samples) distinct.push_back(s.age);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) {
    throw ValidationError("incorrect assignment needs at least two distinct age values");
  }
  Rng rng(seed);
  for (auto& s : samples) {
    std::size_t c = rand_index(rng, n_countries - 1);
    if (c >= static_cast<std::size_t>(s.country)) ++c;
    std::size_t own = static_cast<std::size_t>(
        std::lower_bound(distinct.begin(), distinct.end(), s.age) - distinct.begin());
    std::size_t a = rand_index(rng, distinct.size() - 1);
    if (a >= own) ++a;
    s.country = static_cast<int>(c);
    s.age = distinct[a];
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Permutation experiment
// ---------------------------------------------------------------------------

void PermutationPlan::validate() const {
  if (n_trials == 0) throw ValidationError("n_trials must be >= 1");
  if (steps == 0) throw ValidationError("probe training needs at least one step");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
}

const char* mode_name(PermutationPlan::Mode m) {
  switch (m) {
    case PermutationPlan::Mode::kTrue: return "true";
    case PermutationPlan::Mode::kShuffled: return "shuffled";
    case PermutationPlan::Mode::kIncorrect: return "incorrect";
  }
  throw ValidationError("unknown permutation mode");
}

PermutationPlan::Mode parse_mode(const std::string& s) {
  if (s == "true") return PermutationPlan::Mode::kTrue;
  if (s == "shuffled") return PermutationPlan::Mode::kShuffled;
  if (s == "incorrect") return PermutationPlan::Mode::kIncorrect;
  throw ValidationError("unknown permutation mode '" + s + "'");
}

namespace {

// Mean embedding over the clip's windows; the probe never sees raw sequences.
std::vector<double> mean_embedding(const data::Dataset& ds, const data::Sample& s) {
  if (s.emb_path.empty()) {
    throw ValidationError("permutation testing needs embedding features, but clip '" +
                          s.clip_id + "' has none");
  }
  data::EmbeddingSequence e = data::load_embeddings(ds.resolve(s.emb_path));
  std::vector<double> m(e.d, 0.0);
  for (std::size_t t = 0; t < e.t; ++t) {
    for (std::size_t j = 0; j < e.d; ++j) m[j] += e.at(t, j);
  }
  for (double& v : m) v /= static_cast<double>(e.t);
  return m;
}

// [embedding | country one-hot | (age - 26) / 10]
void append_row(std::vector<double>& flat, const std::vector<double>& emb, int country,
                double age, std::size_t n_countries) {
  flat.insert(flat.end(), emb.begin(), emb.end());
  for (std::size_t c = 0; c < n_countries; ++c) {
    flat.push_back(static_cast<std::size_t>(country) == c ? 1.0 : 0.0);
  }
  flat.push_back((age - 26.0) / 10.0);
}

double train_probe(const std::vector<double>& xtr, std::size_t n_tr,
                   const std::vector<double>& ytr, const TensorD& xva,
                   const std::vector<double>& yva, std::size_t k,
                   const PermutationPlan& plan, std::uint64_t seed) {
  std::size_t dim = xtr.size() / n_tr;
  Rng rng(seed);
  models::Dense head = models::Dense::init(dim, k, rng);
  training::OptimizerConfig oc;
  oc.learning_rate = plan.learning_rate;
  oc.batch_size = plan.batch_size;
  training::Adam opt({{"probe.w", head.w}, {"probe.b", head.b}}, oc);

  std::vector<std::size_t> order(n_tr);
  for (std::size_t i = 0; i < n_tr; ++i) order[i] = i;
  std::size_t step = 0;
  while (step < plan.steps) {
    shuffle_vec(order, rng);
    for (std::size_t off = 0; off < n_tr && step < plan.steps; off += plan.batch_size) {
      std::size_t n = std::min(plan.batch_size, n_tr - off);
      if (n < 2) break;
      ++step;
      std::vector<double> xb, yb;
      xb.reserve(n * dim);
      yb.reserve(n * k);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t row = order[off + i];
        xb.insert(xb.end(), xtr.begin() + row * dim, xtr.begin() + (row + 1) * dim);
        yb.insert(yb.end(), ytr.begin() + row * k, ytr.begin() + (row + 1) * k);
      }
      TensorD pred = head.forward(TensorD::from_data({n, dim}, std::move(xb)));
      TensorD loss = objectives::loss_emotion(pred, TensorD::from_data({n, k}, std::move(yb)));
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }
  TensorD pred = head.forward(xva);
  return objectives::mean_ccc(pred.value(), yva, yva.size() / k, k);
}

}  // namespace

TrialDistribution permutation_experiment(const PermutationPlan& plan, const data::Dataset& ds) {
  plan.validate();
  auto tr_idx = ds.split_indices(data::Split::kTrain);
  auto va_idx = ds.split_indices(data::Split::kVal);
  if (tr_idx.empty()) throw ValidationError("training split is empty");
  if (va_idx.empty()) throw ValidationError("validation split is empty");
  std::size_t n_countries = ds.countries.size();
  std::size_t k = ds.k();

  // Featurize once; trials only relabel the aux columns.
  std::vector<data::Sample> train_samples;
  std::vector<std::vector<double>> train_emb;
  std::vector<double> ytr;
  for (std::size_t i : tr_idx) {
    train_samples.push_back(ds.samples[i]);
    train_emb.push_back(mean_embedding(ds, ds.samples[i]));
    const auto& e = ds.samples[i].emotions;
    ytr.insert(ytr.end(), e.begin(), e.end());
  }
  std::vector<double> xva_flat, yva;
  for (std::size_t i : va_idx) {
    const auto& s = ds.samples[i];
    append_row(xva_flat, mean_embedding(ds, s), s.country, s.age, n_countries);
    yva.insert(yva.end(), s.emotions.begin(), s.emotions.end());
  }
  std::size_t dim = train_emb.front().size() + n_countries + 1;
  TensorD xva = TensorD::from_data({va_idx.size(), dim}, std::move(xva_flat));

  TrialDistribution out;
  out.mode = plan.mode;
  out.seeds.resize(plan.n_trials);
  out.scores.resize(plan.n_trials);
  std::vector<std::string> failures(plan.n_trials);
  parallel_for(plan.n_trials, [&](std::size_t begin, std::size_t end) {
    for (std::size_t trial = begin; trial < end; ++trial) {
      try {
        std::uint64_t seed = plan.base_seed + trial;
        std::vector<data::Sample> labels = train_samples;
        if (plan.mode == PermutationPlan::Mode::kShuffled) {
          labels = shuffle_aux_labels(std::move(labels), seed);
        } else if (plan.mode == PermutationPlan::Mode::kIncorrect) {
          labels = incorrect_assignment(std::move(labels), n_countries, seed);
        }
        std::vector<double> xtr_flat;
        xtr_flat.reserve(labels.size() * dim);
        for (std::size_t i = 0; i < labels.size(); ++i) {
          append_row(xtr_flat, train_emb[i], labels[i].country, labels[i].age, n_countries);
        }
        out.seeds[trial] = seed;
        out.scores[trial] =
            train_probe(xtr_flat, labels.size(), ytr, xva, yva, k, plan, seed);
      } catch (const std::exception& e) {
        failures[trial] = "trial " + std::to_string(trial) + ": " + e.what();
      }
    }
  });
  for (const auto& f : failures) {
    if (!f.empty()) throw ValidationError(f);
  }
  return out;
}

std::string trial_scores_csv(const TrialDistribution& d) {
  std::ostringstream ss;
  ss << "mode,trial,seed,mean_ccc\n";
  for (std::size_t i = 0; i < d.scores.size(); ++i) {
    ss << mode_name(d.mode) << ',' << i << ',' << d.seeds[i] << ',' << fmt_g(d.scores[i])
       << "\n";
  }
  return ss.str();
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

namespace {

// Continued fraction for the regularized incomplete beta (modified Lentz).
double beta_cont_fraction(double a, double b, double x) {
  const double eps = 3e-16, floor = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < floor) d = floor;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < floor) d = floor;
    c = 1.0 + aa / c;
    if (std::abs(c) < floor) c = floor;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < floor) d = floor;
    c = 1.0 + aa / c;
    if (std::abs(c) < floor) c = floor;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double front = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cont_fraction(a, b, x) / a;
  return 1.0 - front * beta_cont_fraction(b, a, 1.0 - x) / b;
}

double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_var(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw ValidationError("degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  return reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult two_sample_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw ValidationError("each sample needs at least two observations");
  }
  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double ma = sample_mean(a), mb = sample_mean(b);
  double va = sample_var(a, ma) / na, vb = sample_var(b, mb) / nb;
  TTestResult r;
  if (va + vb == 0.0) {
    // Degenerate: both samples are constant.
    r.df = na + nb - 2.0;
    if (ma == mb) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = ma < mb ? -std::numeric_limits<double>::infinity()
                    : std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = (ma - mb) / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

std::string t_test_csv(const std::vector<std::pair<std::string, TTestResult>>& pairs) {
  std::ostringstream ss;
  ss << "pair,t,df,p\n";
  for (const auto& [name, r] : pairs) {
    ss << name << ',' << fmt_g(r.t) << ',' << fmt_g(r.df) << ',' << fmt_g(r.p) << "\n";
  }
  return ss.str();
}

KdeCurve kde_curve(const std::vector<double>& scores_in, std::size_t grid_points) {
  if (scores_in.size() < 2) throw ValidationError("KDE needs at least two scores");
  if (grid_points < 2) throw ValidationError("KDE needs at least two grid points");
  // Canonical summation order makes the curve bitwise order-invariant.
  std::vector<double> scores = scores_in;
  std::sort(scores.begin(), scores.end());
  double mean = sample_mean(scores);
  double var = sample_var(scores, mean);
  if (var == 0.0) {
    throw ValidationError(
        "scores have zero variance; render a Dirac marker instead of a KDE");
  }
  double n = static_cast<double>(scores.size());
  double h = std::sqrt(var) * std::pow(n, -0.2);  // Scott's rule
  double lo = *std::min_element(scores.begin(), scores.end()) - 3.0 * h;
  double hi = *std::max_element(scores.begin(), scores.end()) + 3.0 * h;
  KdeCurve curve;
  curve.bandwidth = h;
  curve.x.resize(grid_points);
  curve.density.resize(grid_points);
  const double norm = 1.0 / (n * h * std::sqrt(2.0 * 3.14159265358979323846));
  for (std::size_t i = 0; i < grid_points; ++i) {
    double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid_points - 1);
    double dens = 0.0;
    for (double s : scores) {
      double z = (x - s) / h;
      dens += std::exp(-0.5 * z * z);
    }
    curve.x[i] = x;
    curve.density[i] = dens * norm;
  }
  return curve;
}

std::string kde_csv(const std::string& label, const KdeCurve& curve) {
  std::ostringstream ss;
  ss << "mode,x,density\n";
  for (std::size_t i = 0; i < curve.x.size(); ++i) {
    ss << label << ',' << fmt_g(curve.x[i]) << ',' << fmt_g(curve.density[i]) << "\n";
  }
  return ss.str();
}

// ---------------------------------------------------------------------------
// Baselines and comparison reports
// ---------------------------------------------------------------------------

NaiveBaselines naive_baselines(const data::Dataset& ds) {
  auto tr_idx = ds.split_indices(data::Split::kTrain);
  auto va_idx = ds.split_indices(data::Split::kVal);
  if (tr_idx.empty()) throw ValidationError("training split is empty");
  if (va_idx.empty()) throw ValidationError("validation split is empty");

  std::vector<std::size_t> counts(ds.countries.size(), 0);
  std::vector<double> train_ages;
  for (std::size_t i : tr_idx) {
    counts[ds.samples[i].country]++;
    train_ages.push_back(ds.samples[i].age);
  }
  NaiveBaselines nb;
  for (std::size_t c = 1; c < counts.size(); ++c) {
    if (counts[c] > counts[nb.majority_country]) nb.majority_country = static_cast<int>(c);
  }
  nb.median_age = training::median_lower(train_ages);

  std::vector<int> country_pred(va_idx.size(), nb.majority_country), country_true;
  std::vector<double> age_pred(va_idx.size(), nb.median_age), age_true;
  for (std::size_t i : va_idx) {
    country_true.push_back(ds.samples[i].country);
    age_true.push_back(ds.samples[i].age);
  }
  nb.uar = objectives::uar(country_pred, country_true, static_cast<int>(ds.countries.size()));
  nb.mae = objectives::mae(age_pred, age_true);
  return nb;
}

std::string mtl_comparison_csv(std::vector<RunSummary> rows) {
  if (rows.empty()) throw ValidationError("comparison table needs at least one row");
  std::sort(rows.begin(), rows.end(), [](const RunSummary& a, const RunSummary& b) {
    if (a.model != b.model) return a.model < b.model;
    return a.mtl < b.mtl;
  });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].model == rows[i - 1].model && rows[i].mtl == rows[i - 1].mtl) {
      throw ValidationError("duplicate comparison row for model '" + rows[i].model + "'");
    }
  }
  auto harmonic = [](const RunSummary& r) {
    return r.has_emotion ? objectives::harmonic_mean_score(r.mean_ccc, r.uar, r.mae)
                         : objectives::HarmonicMean{};
  };
  std::ostringstream ss;
  ss << "model,mtl,mean_ccc,uar,mae,harmonic_mean,delta_ccc,delta_uar,delta_mae,"
        "delta_harmonic\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const RunSummary& r = rows[i];
    objectives::HarmonicMean h = harmonic(r);
    ss << r.model << ',' << (r.mtl ? "yes" : "no") << ','
       << (r.has_emotion ? fmt_g(r.mean_ccc) : "") << ',' << fmt_g(r.uar) << ','
       << fmt_g(r.mae) << ',' << (h.defined ? fmt_g(h.value) : "");
    // Single-task rows sort first, so their MTL counterpart is the next row.
    const RunSummary* mtl = nullptr;
    if (!r.mtl && i + 1 < rows.size() && rows[i + 1].model == r.model) mtl = &rows[i + 1];
    if (mtl != nullptr) {
      objectives::HarmonicMean hm = harmonic(*mtl);
      ss << ',' << (r.has_emotion && mtl->has_emotion ? fmt_g(r.mean_ccc - mtl->mean_ccc) : "")
         << ',' << fmt_g(r.uar - mtl->uar) << ',' << fmt_g(r.mae - mtl->mae) << ','
         << (h.defined && hm.defined ? fmt_g(h.value - hm.value) : "");
    } else {
      ss << ",,,,";
    }
    ss << "\n";
  }
  return ss.str();
}

}  // namespace burstkit::analysis
