#include "burstkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace burstkit::training {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ValidationError("adam betas must lie in [0, 1)");
  }
  if (batch_size < 2) throw ValidationError("batch_size must be >= 2 (the CCC loss needs n >= 2)");
}

Adam::Adam(std::vector<models::NamedParam> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  state_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    state_[i].m.assign(params_[i].tensor.size(), 0.0);
    state_[i].v.assign(params_[i].tensor.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    if (!p.tensor.has_grad()) continue;  // no gradient reached this parameter
    const auto& g = p.tensor.grad();
    auto& m = state_[pi].m;
    auto& v = state_[pi].v;
    auto& theta = p.tensor.mutable_value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw ValidationError("non-finite gradient in parameter '" + p.name + "'");
      }
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double m_hat = m[i] / bc1;
      double v_hat = v[i] / bc2;
      theta[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

RunConfig RunConfig::defaults_for(models::ModelConfig::Family family) {
  RunConfig run;
  run.model.family = family;
  run.optimizer.batch_size = family == models::ModelConfig::Family::kResnet ? 64 : 128;
  return run;
}

void RunConfig::validate() const {
  model.validate();
  optimizer.validate();
  if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
  if (target_metric < 0.0) throw ValidationError("target_metric must be non-negative");
  double attached = 0.0;
  if (model.has_task(models::Task::kEmotion)) attached += weights.emotion;
  if (model.has_task(models::Task::kCountry)) attached += weights.country;
  if (model.has_task(models::Task::kAge)) attached += weights.age;
  if (!(attached > 0.0)) {
    throw ValidationError("no attached task has a positive loss weight");
  }
}

std::string RunConfig::to_kv_text() const {
  std::ostringstream ss;
  bool resnet = model.family == models::ModelConfig::Family::kResnet;
  ss << "family = " << (resnet ? "resnet" : "embedding") << "\n";
  ss << "tasks = " << models::format_task_list(model.tasks) << "\n";
  ss << "k = " << model.k << "\n";
  ss << "n_countries = " << model.n_countries << "\n";
  if (resnet) {
    ss << "depth = " << models::depth_name(model.resnet.depth) << "\n";
    ss << "dropout = " << fmt_g(model.resnet.dropout_rate) << "\n";
  } else {
    ss << "head = " << models::head_kind_name(model.head.kind) << "\n";
    ss << "emb_dim = " << model.head.input_dim << "\n";
  }
  ss << "weight_emotion = " << fmt_g(weights.emotion) << "\n";
  ss << "weight_country = " << fmt_g(weights.country) << "\n";
  ss << "weight_age = " << fmt_g(weights.age) << "\n";
  ss << "lr = " << fmt_g(optimizer.learning_rate) << "\n";
  ss << "epsilon = " << fmt_g(optimizer.epsilon) << "\n";
  ss << "beta1 = " << fmt_g(optimizer.beta1) << "\n";
  ss << "beta2 = " << fmt_g(optimizer.beta2) << "\n";
  ss << "batch_size = " << optimizer.batch_size << "\n";
  ss << "window_ms = " << features.window_ms << "\n";
  ss << "hop_ms = " << features.hop_ms << "\n";
  ss << "n_mels = " << features.n_mels << "\n";
  ss << "max_steps = " << max_steps << "\n";
  ss << "eval_every = " << eval_every << "\n";
  ss << "seed = " << seed << "\n";
  ss << "target_metric = " << fmt_g(target_metric) << "\n";
  if (!checkpoint_path.empty()) ss << "checkpoint = " << checkpoint_path << "\n";
  if (!metrics_path.empty()) ss << "metrics = " << metrics_path << "\n";
  return ss.str();
}

namespace {

double kv_double(const std::map<std::string, std::string>& kv, const std::string& key,
                 double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "' is not a number: " + it->second);
  }
}

std::uint64_t kv_u64(const std::map<std::string, std::string>& kv, const std::string& key,
                     std::uint64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    std::uint64_t v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "' is not a non-negative integer: " +
                          it->second);
  }
}

std::string kv_str(const std::map<std::string, std::string>& kv, const std::string& key,
                   const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

}  // namespace

RunConfig RunConfig::from_kv_text(const std::string& text) {
  auto kv = parse_kv_text(text);
  static const char* kKnown[] = {
      "family",      "tasks",          "k",          "n_countries",  "depth",
      "dropout",     "head",           "emb_dim",    "weight_emotion", "weight_country",
      "weight_age",  "lr",             "epsilon",    "beta1",        "beta2",
      "batch_size",  "window_ms",      "hop_ms",     "n_mels",       "max_steps",
      "eval_every",  "seed",           "checkpoint", "metrics",      "target_metric"};
  for (const auto& [key, value] : kv) {
    bool known = false;
    for (const char* k : kKnown) known = known || key == k;
    if (!known) throw ValidationError("unknown config key '" + key + "'");
  }
  std::string family = kv_str(kv, "family", "embedding");
  models::ModelConfig::Family fam;
  if (family == "resnet") {
    fam = models::ModelConfig::Family::kResnet;
  } else if (family == "embedding") {
    fam = models::ModelConfig::Family::kEmbedding;
  } else {
    throw ValidationError("unknown model family '" + family + "'");
  }
  RunConfig run = defaults_for(fam);
  run.model.tasks = models::parse_task_list(kv_str(kv, "tasks", "emotion,country,age"));
  run.model.k = kv_u64(kv, "k", run.model.k);
  run.model.n_countries = kv_u64(kv, "n_countries", run.model.n_countries);
  if (fam == models::ModelConfig::Family::kResnet) {
    run.model.resnet.depth = models::parse_depth(kv_str(kv, "depth", "mini"));
    run.model.resnet.dropout_rate = kv_double(kv, "dropout", run.model.resnet.dropout_rate);
  } else {
    run.model.head.kind = models::parse_head_kind(kv_str(kv, "head", "mean"));
    run.model.head.input_dim = kv_u64(kv, "emb_dim", run.model.head.input_dim);
  }
  run.weights.emotion = kv_double(kv, "weight_emotion", run.weights.emotion);
  run.weights.country = kv_double(kv, "weight_country", run.weights.country);
  run.weights.age = kv_double(kv, "weight_age", run.weights.age);
  run.optimizer.learning_rate = kv_double(kv, "lr", run.optimizer.learning_rate);
  run.optimizer.epsilon = kv_double(kv, "epsilon", run.optimizer.epsilon);
  run.optimizer.beta1 = kv_double(kv, "beta1", run.optimizer.beta1);
  run.optimizer.beta2 = kv_double(kv, "beta2", run.optimizer.beta2);
  run.optimizer.batch_size = kv_u64(kv, "batch_size", run.optimizer.batch_size);
  run.features.window_ms = static_cast<int>(kv_u64(kv, "window_ms", run.features.window_ms));
  run.features.hop_ms = static_cast<int>(kv_u64(kv, "hop_ms", run.features.hop_ms));
  run.features.n_mels = static_cast<int>(kv_u64(kv, "n_mels", run.features.n_mels));
  run.max_steps = kv_u64(kv, "max_steps", run.max_steps);
  run.eval_every = kv_u64(kv, "eval_every", run.eval_every);
  run.seed = kv_u64(kv, "seed", run.seed);
  run.checkpoint_path = kv_str(kv, "checkpoint", "");
  run.metrics_path = kv_str(kv, "metrics", "");
  run.target_metric = kv_double(kv, "target_metric", 0.0);
  run.validate();
  return run;
}

RunConfig RunConfig::from_kv_file(const std::string& path) {
  return from_kv_text(read_text_file(path));
}

// ---------------------------------------------------------------------------
// FeatureStore
// ---------------------------------------------------------------------------

FeatureStore::FeatureStore(const data::Dataset& ds, dsp::SpectrogramConfig cfg)
    : ds_(ds), cfg_(cfg), slots_(ds.samples.size()) {}

const TensorD& FeatureStore::features(std::size_t index) {
  if (index >= slots_.size()) throw ValidationError("feature index out of range");
  if (!slots_[index].defined()) {
    const data::Sample& s = ds_.samples[index];
    if (!s.emb_path.empty()) {
      data::EmbeddingSequence e = data::load_embeddings(ds_.resolve(s.emb_path));
      std::vector<double> v(e.values.begin(), e.values.end());
      slots_[index] = TensorD::from_data({e.t, e.d}, std::move(v));
    } else {
      dsp::LogMelSpectrogram mel = data::features_for(ds_, s, cfg_);
      std::vector<double> v(mel.values.begin(), mel.values.end());
      slots_[index] = TensorD::from_data({mel.frames, mel.n_mels}, std::move(v));
    }
  }
  return slots_[index];
}

// ---------------------------------------------------------------------------
// Prediction and evaluation
// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> sorted_split_indices(const data::Dataset& ds, data::Split split) {
  auto idx = ds.split_indices(split);
  if (idx.empty()) {
    throw ValidationError(std::string("split '") + data::split_name(split) + "' is empty");
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return ds.samples[a].clip_id < ds.samples[b].clip_id;
  });
  return idx;
}

int argmax_row(const std::vector<double>& v, std::size_t row, std::size_t c) {
  int best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (v[row * c + j] > v[row * c + best]) best = static_cast<int>(j);
  }
  return best;
}

// Stacks equally shaped F x M feature matrices into a B x 1 x F x M batch.
TensorD stack_audio(FeatureStore& store, const std::vector<std::size_t>& idx) {
  const TensorD& first = store.features(idx[0]);
  std::size_t f = first.dim(0), m = first.dim(1);
  std::vector<double> v;
  v.reserve(idx.size() * f * m);
  for (std::size_t i : idx) {
    const TensorD& feat = store.features(i);
    if (feat.dim(0) != f || feat.dim(1) != m) {
      throw ValidationError("audio batch needs uniform spectrogram shapes, got " +
                            shape_str(feat.shape()) + " vs " + shape_str(first.shape()));
    }
    v.insert(v.end(), feat.value().begin(), feat.value().end());
  }
  return TensorD::from_data({idx.size(), 1, f, m}, std::move(v));
}

models::TaskOutputs forward_batch(models::MultitaskModel& model, FeatureStore& store,
                                  const std::vector<std::size_t>& idx, bool training, Rng& rng) {
  if (model.config().family == models::ModelConfig::Family::kResnet) {
    return model.forward_audio(stack_audio(store, idx), training, rng);
  }
  std::vector<TensorD> clips;
  clips.reserve(idx.size());
  for (std::size_t i : idx) clips.push_back(store.features(i));
  return model.forward_embeddings(clips, training, rng);
}

PredictionsTable predict_impl(models::MultitaskModel& model, FeatureStore& store,
                              data::Split split) {
  const data::Dataset& ds = store.dataset();
  auto idx = sorted_split_indices(ds, split);
  const models::ModelConfig& cfg = model.config();
  PredictionsTable table;
  table.k = cfg.has_task(models::Task::kEmotion) ? cfg.k : 0;
  Rng rng(0);  // inference mode never draws from it
  const std::size_t kEvalBatch = 64;
  for (std::size_t off = 0; off < idx.size(); off += kEvalBatch) {
    std::size_t n = std::min(kEvalBatch, idx.size() - off);
    std::vector<std::size_t> batch(idx.begin() + off, idx.begin() + off + n);
    models::TaskOutputs out = forward_batch(model, store, batch, false, rng);
    for (std::size_t i = 0; i < n; ++i) {
      table.clip_ids.push_back(ds.samples[batch[i]].clip_id);
    }
    if (out.emotion) {
      const auto& e = out.emotion->value();
      table.emotions.insert(table.emotions.end(), e.begin(), e.end());
    }
    if (out.country) {
      for (std::size_t i = 0; i < n; ++i) {
        table.countries.push_back(argmax_row(out.country->value(), i, cfg.n_countries));
      }
    }
    if (out.age) {
      for (std::size_t i = 0; i < n; ++i) table.ages.push_back(out.age->value()[i]);
    }
  }
  return table;
}

}  // namespace

std::string PredictionsTable::to_csv(const std::vector<std::string>& country_names) const {
  std::ostringstream ss;
  ss << "clip_id";
  for (std::size_t j = 0; j < k; ++j) ss << ",emo_" << (j + 1);
  if (!countries.empty()) ss << ",country";
  if (!ages.empty()) ss << ",age";
  ss << "\n";
  for (std::size_t i = 0; i < clip_ids.size(); ++i) {
    ss << clip_ids[i];
    for (std::size_t j = 0; j < k; ++j) ss << ',' << fmt_g(emotions[i * k + j]);
    if (!countries.empty()) {
      int c = countries[i];
      if (c < 0 || static_cast<std::size_t>(c) >= country_names.size()) {
        throw ValidationError("country index " + std::to_string(c) + " has no name");
      }
      ss << ',' << country_names[c];
    }
    if (!ages.empty()) ss << ',' << fmt_g(ages[i]);
    ss << "\n";
  }
  return ss.str();
}

objectives::TaskScores score_table(const PredictionsTable& table, const data::Dataset& ds,
                                   data::Split split) {
  auto idx = sorted_split_indices(ds, split);
  if (idx.size() != table.clip_ids.size()) {
    throw ValidationError("predictions cover " + std::to_string(table.clip_ids.size()) +
                          " clips but split '" + data::split_name(split) + "' has " +
                          std::to_string(idx.size()));
  }
  std::size_t n = idx.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.samples[idx[i]].clip_id != table.clip_ids[i]) {
      throw ValidationError("predictions are missing clip '" + ds.samples[idx[i]].clip_id + "'");
    }
  }
  bool has_emotion = table.k > 0;
  bool has_country = !table.countries.empty();
  bool has_age = !table.ages.empty();
  std::vector<double> emo_true;
  std::vector<int> country_true;
  std::vector<double> age_true;
  for (std::size_t i = 0; i < n; ++i) {
    const data::Sample& s = ds.samples[idx[i]];
    if (has_emotion) {
      if (s.emotions.size() != table.k) {
        throw ValidationError("dataset has K=" + std::to_string(s.emotions.size()) +
                              " emotions but predictions have K=" + std::to_string(table.k));
      }
      emo_true.insert(emo_true.end(), s.emotions.begin(), s.emotions.end());
    }
    country_true.push_back(s.country);
    age_true.push_back(s.age);
  }
  if (has_emotion && has_country && has_age) {
    return objectives::score_predictions(table.emotions, emo_true, n, table.k, table.countries,
                                         country_true, static_cast<int>(ds.countries.size()),
                                         table.ages, age_true);
  }
  objectives::TaskScores s;
  if (has_emotion) {
    s.per_emotion_ccc = objectives::column_ccc(table.emotions, emo_true, n, table.k);
    s.mean_ccc = 0.0;
    for (double c : s.per_emotion_ccc) s.mean_ccc += c;
    s.mean_ccc /= static_cast<double>(table.k);
  }
  if (has_country) {
    s.uar = objectives::uar(table.countries, country_true, static_cast<int>(ds.countries.size()));
  }
  if (has_age) s.mae = objectives::mae(table.ages, age_true);
  return s;  // harmonic mean stays undefined without all three tasks
}

EvalResult evaluate(models::MultitaskModel& model, FeatureStore& store, data::Split split) {
  PredictionsTable table = predict_impl(model, store, split);
  EvalResult r;
  r.scores = score_table(table, store.dataset(), split);
  r.clip_ids = std::move(table.clip_ids);
  r.emotion_pred = std::move(table.emotions);
  r.country_pred = std::move(table.countries);
  r.age_pred = std::move(table.ages);
  return r;
}

EvalResult evaluate(models::MultitaskModel& model, const data::Dataset& ds, data::Split split,
                    const dsp::SpectrogramConfig& features) {
  FeatureStore store(ds, features);
  return evaluate(model, store, split);
}

PredictionsTable predict(models::MultitaskModel& model, const data::Dataset& ds,
                         data::Split split, const dsp::SpectrogramConfig& features) {
  FeatureStore store(ds, features);
  return predict_impl(model, store, split);
}

PredictionsTable ensemble_predict(const std::string& emotion_ckpt,
                                  const std::string& country_ckpt, const data::Dataset& ds,
                                  data::Split split, double const_age,
                                  const dsp::SpectrogramConfig& features) {
  models::MultitaskModel emotion_model = models::load_model(emotion_ckpt);
  if (!emotion_model.config().has_task(models::Task::kEmotion)) {
    throw ValidationError("checkpoint task mismatch: '" + emotion_ckpt + "' has no emotion head");
  }
  models::MultitaskModel country_model = models::load_model(country_ckpt);
  if (!country_model.config().has_task(models::Task::kCountry)) {
    throw ValidationError("checkpoint task mismatch: '" + country_ckpt + "' has no country head");
  }
  PredictionsTable emotion_part = predict(emotion_model, ds, split, features);
  PredictionsTable country_part = predict(country_model, ds, split, features);
  PredictionsTable table;
  table.k = emotion_model.config().k;
  table.clip_ids = emotion_part.clip_ids;
  table.emotions = std::move(emotion_part.emotions);
  table.countries = std::move(country_part.countries);
  table.ages.assign(table.clip_ids.size(), const_age);
  return table;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

double primary_metric(const objectives::TaskScores& s, const std::vector<models::Task>& tasks) {
  if (tasks.size() == 3) return s.harmonic.defined ? s.harmonic.value : -1e300;
  double acc = 0.0;
  for (models::Task t : tasks) {
    switch (t) {
      case models::Task::kEmotion: acc += s.mean_ccc; break;
      case models::Task::kCountry: acc += s.uar; break;
      case models::Task::kAge: acc += -s.mae; break;
    }
  }
  return acc / static_cast<double>(tasks.size());
}

double median_lower(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of an empty set");
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : values[n / 2 - 1];
}

TrainResult train(const RunConfig& run, const data::Dataset& ds) {
  run.validate();
  if (run.checkpoint_path.empty()) {
    throw ValidationError("training run needs a checkpoint path");
  }
  if (ds.k() != run.model.k) {
    throw ValidationError("dataset has K=" + std::to_string(ds.k()) +
                          " emotion dimensions but the model expects K=" +
                          std::to_string(run.model.k));
  }
  if (ds.countries.size() != run.model.n_countries) {
    throw ValidationError("dataset has " + std::to_string(ds.countries.size()) +
                          " countries but the model expects " +
                          std::to_string(run.model.n_countries));
  }
  auto train_idx = ds.split_indices(data::Split::kTrain);
  auto val_idx = ds.split_indices(data::Split::kVal);
  if (train_idx.empty()) throw ValidationError("training split is empty");
  if (val_idx.empty()) throw ValidationError("validation split is empty");
  if (run.optimizer.batch_size > train_idx.size()) {
    throw ValidationError("batch_size " + std::to_string(run.optimizer.batch_size) +
                          " exceeds the training split size " +
                          std::to_string(train_idx.size()));
  }

  Rng rng(run.seed);
  models::MultitaskModel model(run.model, rng);
  FeatureStore store(ds, run.features);

  if (run.model.family == models::ModelConfig::Family::kEmbedding &&
      run.model.head.kind == models::HeadConfig::Kind::kNetVlad5) {
    // Seed the cluster centers from training descriptors.
    std::vector<std::vector<double>> descriptors;
    for (std::size_t i : train_idx) {
      const TensorD& e = store.features(i);
      for (std::size_t t = 0; t < e.dim(0) && descriptors.size() < 256; ++t) {
        descriptors.emplace_back(e.value().begin() + t * e.dim(1),
                                 e.value().begin() + (t + 1) * e.dim(1));
      }
      if (descriptors.size() >= 256) break;
    }
    model.init_netvlad_from(descriptors, rng);
  }

  objectives::TaskWeights weights = run.weights;
  if (!run.model.has_task(models::Task::kEmotion)) weights.emotion = 0.0;
  if (!run.model.has_task(models::Task::kCountry)) weights.country = 0.0;
  if (!run.model.has_task(models::Task::kAge)) weights.age = 0.0;

  Adam opt(model.parameters(), run.optimizer);

  TrainResult res;
  res.checkpoint_path = run.checkpoint_path;
  std::ostringstream log;
  log << "step,split,mean_ccc,uar,mae,harmonic_mean,loss_total,loss_emotion,loss_country,"
         "loss_age\n";
  double last_total = 0.0, last_emotion = 0.0, last_country = 0.0, last_age = 0.0;
  bool has_best = false;

  auto run_eval = [&](std::size_t step) {
    EvalResult ev = evaluate(model, store, data::Split::kVal);
    double metric = primary_metric(ev.scores, run.model.tasks);
    log << step << ",val," << fmt_g(ev.scores.mean_ccc) << ',' << fmt_g(ev.scores.uar) << ','
        << fmt_g(ev.scores.mae) << ','
        << (ev.scores.harmonic.defined ? fmt_g(ev.scores.harmonic.value) : "undefined") << ','
        << fmt_g(last_total) << ',' << fmt_g(last_emotion) << ',' << fmt_g(last_country) << ','
        << fmt_g(last_age) << "\n";
    if (!has_best || metric > res.best_metric) {
      has_best = true;
      res.best_metric = metric;
      res.best_step = step;
      res.best_scores = ev.scores;
      models::save_model(run.checkpoint_path, model);
    }
    return metric;
  };

  run_eval(0);  // max_steps == 0: evaluate the initial model and exit cleanly

  std::size_t step = 0;
  bool stop = false;
  while (step < run.max_steps && !stop) {
    std::vector<std::size_t> order = train_idx;
    shuffle_vec(order, rng);
    for (std::size_t off = 0; off < order.size() && step < run.max_steps && !stop;
         off += run.optimizer.batch_size) {
      std::size_t n = std::min(run.optimizer.batch_size, order.size() - off);
      if (n < 2) break;  // drop the short tail batch
      std::vector<std::size_t> batch(order.begin() + off, order.begin() + off + n);
      ++step;

      models::TaskOutputs out = forward_batch(model, store, batch, true, rng);
      std::optional<TensorD> le, lc, la;
      if (run.model.has_task(models::Task::kEmotion)) {
        std::vector<double> target;
        target.reserve(n * run.model.k);
        for (std::size_t i : batch) {
          const auto& e = ds.samples[i].emotions;
          target.insert(target.end(), e.begin(), e.end());
        }
        le = objectives::loss_emotion(*out.emotion,
                                      TensorD::from_data({n, run.model.k}, std::move(target)));
        last_emotion = le->item();
      }
      if (run.model.has_task(models::Task::kCountry)) {
        std::vector<int> labels;
        labels.reserve(n);
        for (std::size_t i : batch) labels.push_back(ds.samples[i].country);
        lc = objectives::loss_country(*out.country, labels);
        last_country = lc->item();
      }
      if (run.model.has_task(models::Task::kAge)) {
        std::vector<double> target;
        target.reserve(n);
        for (std::size_t i : batch) target.push_back(ds.samples[i].age);
        la = objectives::loss_age(*out.age, TensorD::from_data({n, 1}, std::move(target)));
        last_age = la->item();
      }
      TensorD total = objectives::loss_multitask(le, lc, la, weights);
      last_total = total.item();
      if (!std::isfinite(last_total)) {
        res.aborted_nan = true;
        res.abort_reason = "loss became non-finite at step " + std::to_string(step);
        stop = true;
        break;
      }
      opt.zero_grad();
      backward(total);
      try {
        opt.step();
      } catch (const ValidationError& e) {
        res.aborted_nan = true;
        res.abort_reason = e.what();
        stop = true;
        break;
      }

      if (step % run.eval_every == 0 || step == run.max_steps) {
        double metric = run_eval(step);
        if (run.target_metric > 0.0 && metric >= run.target_metric) {
          res.reached_target = true;
          stop = true;
        }
      }
    }
  }
  res.steps_run = step;
  res.metrics_csv = log.str();
  if (!run.metrics_path.empty()) write_text_file(run.metrics_path, res.metrics_csv);
  return res;
}

}  // namespace burstkit::training
