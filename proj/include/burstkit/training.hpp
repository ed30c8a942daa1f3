#pragma once

// Adam optimizer, the minibatch training loop for both model families,
// evaluation over dataset splits, prediction tables, and the two-checkpoint
// submission ensemble.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "burstkit/common.hpp"
#include "burstkit/data.hpp"
#include "burstkit/dsp.hpp"
#include "burstkit/models.hpp"
#include "burstkit/objectives.hpp"

namespace burstkit::training {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  double learning_rate = 3e-4;
  double epsilon = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_size = 64;  // 64 for resnet runs, 128 for embedding-head runs

  void validate() const;
};

class Adam {
 public:
  Adam(std::vector<models::NamedParam> params, OptimizerConfig cfg);

  void zero_grad();
  // One update with bias correction. Parameters without a populated gradient
  // are treated as zero-gradient; a NaN gradient aborts, naming the parameter.
  void step();
  std::uint64_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  std::vector<models::NamedParam> params_;
  std::vector<Moments> state_;
  OptimizerConfig cfg_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Run configuration ("key = value" text files)
// ---------------------------------------------------------------------------

struct RunConfig {
  models::ModelConfig model;
  objectives::TaskWeights weights;  // tasks absent from the model are masked to 0
  OptimizerConfig optimizer;
  dsp::SpectrogramConfig features;  // audio-family featurization
  std::size_t max_steps = 1000;
  std::size_t eval_every = 50;
  std::uint64_t seed = 0;
  std::string checkpoint_path;         // best-by-validation model (+ ".meta")
  std::string metrics_path;            // optional CSV log destination
  double target_metric = 0.0;          // > 0: stop once the primary metric reaches it

  // Family-appropriate defaults (batch size 64 vs 128).
  static RunConfig defaults_for(models::ModelConfig::Family family);
  static RunConfig from_kv_text(const std::string& text);
  static RunConfig from_kv_file(const std::string& path);
  std::string to_kv_text() const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Featurization cache shared by train/evaluate
// ---------------------------------------------------------------------------

class FeatureStore {
 public:
  FeatureStore(const data::Dataset& ds, dsp::SpectrogramConfig cfg);

  // Audio family: F x M log-mel matrix; embedding family: T x D embedding
  // matrix. Lazily computed, memoized per clip.
  const TensorD& features(std::size_t index);
  const data::Dataset& dataset() const { return ds_; }

 private:
  const data::Dataset& ds_;
  dsp::SpectrogramConfig cfg_;
  std::vector<TensorD> slots_;
};

// ---------------------------------------------------------------------------
// Evaluation and prediction
// ---------------------------------------------------------------------------

struct EvalResult {
  objectives::TaskScores scores;  // per-task fields valid for attached tasks only
  std::vector<std::string> clip_ids;  // sorted; alignment for the arrays below
  std::vector<double> emotion_pred;   // n x k when the emotion head exists
  std::vector<int> country_pred;
  std::vector<double> age_pred;
};

// Deterministic full-split metrics: clips are evaluated in clip_id order, so
// the result is invariant to dataset shuffling. The harmonic mean is computed
// only when all three heads are attached.
EvalResult evaluate(models::MultitaskModel& model, FeatureStore& store, data::Split split);
EvalResult evaluate(models::MultitaskModel& model, const data::Dataset& ds, data::Split split,
                    const dsp::SpectrogramConfig& features = {});

struct PredictionsTable {
  std::size_t k = 0;
  std::vector<std::string> clip_ids;
  std::vector<double> emotions;  // n x k
  std::vector<int> countries;    // class indices
  std::vector<double> ages;

  // clip_id,emo_1..emo_K,country,age with country names resolved.
  std::string to_csv(const std::vector<std::string>& country_names) const;
};

PredictionsTable predict(models::MultitaskModel& model, const data::Dataset& ds,
                         data::Split split, const dsp::SpectrogramConfig& features = {});

// Submission ensemble: emotion vector from the first checkpoint, country
// argmax from the second, constant age for every clip.
PredictionsTable ensemble_predict(const std::string& emotion_ckpt,
                                  const std::string& country_ckpt, const data::Dataset& ds,
                                  data::Split split, double const_age = 26.0,
                                  const dsp::SpectrogramConfig& features = {});

// Scores an aligned predictions table against a split's labels.
objectives::TaskScores score_table(const PredictionsTable& table, const data::Dataset& ds,
                                   data::Split split);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  std::string checkpoint_path;
  double best_metric = 0.0;   // primary validation metric of the saved model
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  bool aborted_nan = false;
  std::string abort_reason;   // human-readable cause when aborted_nan is set
  bool reached_target = false;
  objectives::TaskScores best_scores;
  std::string metrics_csv;    // full log, also written to metrics_path if set
};

// Primary selection metric: validation harmonic mean for multitask runs;
// mean CCC / UAR / negative MAE for single-task emotion / country / age runs.
double primary_metric(const objectives::TaskScores& s, const std::vector<models::Task>& tasks);

// Seeded minibatch training with periodic validation; the best checkpoint by
// the primary metric is kept at run.checkpoint_path. A NaN loss or gradient
// aborts, retaining the last good checkpoint.
TrainResult train(const RunConfig& run, const data::Dataset& ds);

// Lower-of-two-middles median (exact for even n); used by naive baselines.
double median_lower(std::vector<double> values);

}  // namespace burstkit::training
