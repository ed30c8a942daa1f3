#pragma once

// Permutation-testing protocol for auxiliary label information, Welch t-tests,
// KDE curve emission, naive baselines, and single-task-vs-MTL comparison
// tables.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "burstkit/data.hpp"
#include "burstkit/objectives.hpp"

namespace burstkit::analysis {

// ---------------------------------------------------------------------------
// Auxiliary-label manipulation
// ---------------------------------------------------------------------------

// Permutes the country column with seed and the age column independently with
// seed + 1. Emotions are untouched and each column keeps its multiset.
std::vector<data::Sample> shuffle_aux_labels(std::vector<data::Sample> samples,
                                             std::uint64_t seed);

// Gives every sample a country drawn uniformly from the other n_countries - 1
// classes and an age drawn uniformly from the other observed distinct ages, so
// neither column has a single fixed point. Needs >= 2 countries and >= 2
// distinct age values.
std::vector<data::Sample> incorrect_assignment(std::vector<data::Sample> samples,
                                               std::size_t n_countries, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Permutation experiment
// ---------------------------------------------------------------------------

struct PermutationPlan {
  enum class Mode { kTrue, kShuffled, kIncorrect };
  Mode mode = Mode::kTrue;
  std::size_t n_trials = 50;
  std::uint64_t base_seed = 0;  // trial i uses seed base_seed + i

  // Probe-model hyperparameters: a dense emotion layer trained on
  // [mean embedding | country one-hot | (age - 26) / 10].
  std::size_t steps = 400;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;

  void validate() const;
};

const char* mode_name(PermutationPlan::Mode m);
PermutationPlan::Mode parse_mode(const std::string& s);

struct TrialDistribution {
  PermutationPlan::Mode mode = PermutationPlan::Mode::kTrue;
  std::vector<std::uint64_t> seeds;  // base_seed + trial index
  std::vector<double> scores;        // per-trial validation mean CCC
};

// Trains one probe per trial on mode-relabeled training data and records the
// validation mean CCC; validation aux inputs always use the true labels.
// Trials are independent and run in parallel; results are ordered by trial
// index. Training failures are rethrown annotated with the trial index.
TrialDistribution permutation_experiment(const PermutationPlan& plan, const data::Dataset& ds);

// mode,trial,seed,mean_ccc
std::string trial_scores_csv(const TrialDistribution& d);

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

// Welch's unequal-variance two-sample t-test with Welch-Satterthwaite degrees
// of freedom and a two-sided p-value. Each sample needs n >= 2. Zero variance
// in both samples gives t = 0, p = 1 for equal means and p = 0 otherwise.
TTestResult two_sample_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Two-sided tail probability of Student's t distribution, via the regularized
// incomplete beta function.
double student_t_two_sided_p(double t, double df);

// pair,t,df,p
std::string t_test_csv(const std::vector<std::pair<std::string, TTestResult>>& pairs);

struct KdeCurve {
  double bandwidth = 0.0;
  std::vector<double> x;
  std::vector<double> density;
};

// Gaussian KDE with Scott's-rule bandwidth h = sd * n^(-1/5), evaluated on an
// evenly spaced grid spanning [min - 3h, max + 3h]. Needs >= 2 scores with
// nonzero variance; a degenerate sample should be rendered as a Dirac marker
// instead.
KdeCurve kde_curve(const std::vector<double>& scores, std::size_t grid_points = 201);

// mode,x,density
std::string kde_csv(const std::string& label, const KdeCurve& curve);

// ---------------------------------------------------------------------------
// Baselines and comparison reports
// ---------------------------------------------------------------------------

struct NaiveBaselines {
  int majority_country = 0;  // train-majority class (lowest index wins ties)
  double median_age = 0.0;   // lower-median of the train ages
  double uar = 0.0;          // constant-prediction scores on the validation split
  double mae = 0.0;
};

// Constant predictors fit on the train split and scored on validation. The
// emotion task has no naive counterpart and is omitted.
NaiveBaselines naive_baselines(const data::Dataset& ds);

struct RunSummary {
  std::string model;
  bool mtl = false;
  bool has_emotion = true;  // naive-style rows carry no emotion score
  double mean_ccc = 0.0;
  double uar = 0.0;
  double mae = 0.0;
};

// model,mtl,mean_ccc,uar,mae,harmonic_mean,delta_ccc,delta_uar,delta_mae,
// delta_harmonic. Rows are sorted by model then MTL flag; the single-task row
// of each pair carries the single-minus-MTL deltas, blank when either side is
// missing. Duplicate (model, mtl) pairs are rejected.
std::string mtl_comparison_csv(std::vector<RunSummary> rows);

}  // namespace burstkit::analysis
