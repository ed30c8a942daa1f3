#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "burstkit/analysis.hpp"
#include "burstkit/training.hpp"

namespace fs = std::filesystem;
using namespace burstkit;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

std::string ensure_out_dir(const std::string& out) {
  if (out.empty()) throw ValidationError("--out is required");
  fs::create_directories(out);
  return out;
}

// Every run leaves a deterministic provenance stamp next to its outputs.
void write_provenance(const std::string& out_dir, const std::string& command,
                      std::uint64_t seed, const std::string& config_text) {
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_text)));
  std::ostringstream ss;
  ss << "tool = burstkit " << kVersion << "\n"
     << "command = " << command << "\n"
     << "seed = " << seed << "\n"
     << "config_hash = " << hash << "\n";
  write_text_file(out_dir + "/provenance.txt", ss.str());
}

std::map<std::string, std::string> load_config(const std::string& path) {
  if (path.empty()) return {};
  return parse_kv_text(read_text_file(path));
}

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

void reject_unknown_keys(const std::map<std::string, std::string>& kv,
                         std::initializer_list<const char*> known) {
  for (const auto& [key, value] : kv) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ValidationError("unknown config key '" + key + "'");
  }
}

dsp::SpectrogramConfig feature_config(const std::map<std::string, std::string>& kv) {
  reject_unknown_keys(kv, {"window_ms", "hop_ms", "n_mels"});
  dsp::SpectrogramConfig cfg;
  cfg.window_ms = static_cast<int>(kv_u64(kv, "window_ms", cfg.window_ms));
  cfg.hop_ms = static_cast<int>(kv_u64(kv, "hop_ms", cfg.hop_ms));
  cfg.n_mels = static_cast<int>(kv_u64(kv, "n_mels", cfg.n_mels));
  return cfg;
}

std::string feature_config_text(const dsp::SpectrogramConfig& cfg) {
  std::ostringstream ss;
  ss << "window_ms = " << cfg.window_ms << "\nhop_ms = " << cfg.hop_ms
     << "\nn_mels = " << cfg.n_mels << "\n";
  return ss.str();
}

data::Dataset load_data(const std::string& data_path, const std::string& out_dir) {
  std::string path = data_path;
  if (path.empty()) path = out_dir + "/manifest.csv";
  return data::load_manifest(path);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string preset = "embedding";
  std::string out, config;
  std::uint64_t seed = 0;
  std::uint64_t n_train = 0, n_val = 0, n_test = 0, k = 0;  // 0 = keep preset value
  double noise = -1.0, clip_seconds = -1.0;
  std::uint64_t emb_dim = 0;
};

data::SynthSpec preset_spec(const std::string& preset) {
  data::SynthSpec spec;
  if (preset == "embedding") {
    spec.country_signal = 1.0;
  } else if (preset == "linear") {
    // Zero observation noise and a square mixing matrix: labels are exactly
    // linearly decodable from the embeddings.
    spec.noise = 0.0;
    spec.country_signal = 1.0;
    spec.emb_dim = spec.k + spec.n_countries;
  } else if (preset == "informative") {
    // Country shifts the emotion means while the embeddings stay noisy, so
    // auxiliary labels genuinely help emotion prediction.
    spec.noise = 0.3;
    spec.country_signal = 0.0;
    spec.country_shift = 0.2;
  } else if (preset == "null") {
    spec.zero_information = true;
    spec.noise = 0.3;
  } else if (preset == "audio") {
    spec.mode = data::SynthSpec::Mode::kAudio;
    spec.noise = 0.1;
    spec.country_signal = 1.0;
    spec.country_shift = 0.1;
    spec.clip_seconds = 0.5;
  } else {
    throw ValidationError("unknown preset '" + preset +
                          "' (expected embedding|linear|informative|null|audio)");
  }
  return spec;
}

void apply_synth_config(data::SynthSpec& spec, const std::map<std::string, std::string>& kv) {
  reject_unknown_keys(kv, {"mode", "n_train", "n_val", "n_test", "k", "n_countries",
                           "clips_per_speaker", "noise", "country_signal", "country_shift",
                           "zero_information", "emb_dim", "emb_windows", "clip_seconds"});
  if (auto it = kv.find("mode"); it != kv.end()) {
    if (it->second == "audio") {
      spec.mode = data::SynthSpec::Mode::kAudio;
    } else if (it->second == "embedding") {
      spec.mode = data::SynthSpec::Mode::kEmbedding;
    } else {
      throw ValidationError("config key 'mode' must be audio or embedding");
    }
  }
  spec.n_train = kv_u64(kv, "n_train", spec.n_train);
  spec.n_val = kv_u64(kv, "n_val", spec.n_val);
  spec.n_test = kv_u64(kv, "n_test", spec.n_test);
  spec.k = kv_u64(kv, "k", spec.k);
  spec.n_countries = kv_u64(kv, "n_countries", spec.n_countries);
  spec.clips_per_speaker = kv_u64(kv, "clips_per_speaker", spec.clips_per_speaker);
  spec.noise = kv_double(kv, "noise", spec.noise);
  spec.country_signal = kv_double(kv, "country_signal", spec.country_signal);
  spec.country_shift = kv_double(kv, "country_shift", spec.country_shift);
  spec.emb_dim = kv_u64(kv, "emb_dim", spec.emb_dim);
  spec.emb_windows = kv_u64(kv, "emb_windows", spec.emb_windows);
  spec.clip_seconds = kv_double(kv, "clip_seconds", spec.clip_seconds);
  if (auto it = kv.find("zero_information"); it != kv.end()) {
    if (it->second == "true" || it->second == "1") {
      spec.zero_information = true;
    } else if (it->second == "false" || it->second == "0") {
      spec.zero_information = false;
    } else {
      throw ValidationError("config key 'zero_information' must be true or false");
    }
  }
}

std::string synth_config_text(const data::SynthSpec& spec) {
  std::ostringstream ss;
  ss << "mode = " << (spec.mode == data::SynthSpec::Mode::kAudio ? "audio" : "embedding")
     << "\n"
     << "n_train = " << spec.n_train << "\nn_val = " << spec.n_val
     << "\nn_test = " << spec.n_test << "\nk = " << spec.k
     << "\nn_countries = " << spec.n_countries
     << "\nclips_per_speaker = " << spec.clips_per_speaker << "\nnoise = " << fmt_g(spec.noise)
     << "\ncountry_signal = " << fmt_g(spec.country_signal)
     << "\ncountry_shift = " << fmt_g(spec.country_shift)
     << "\nzero_information = " << (spec.zero_information ? "true" : "false")
     << "\nemb_dim = " << spec.emb_dim << "\nemb_windows = " << spec.emb_windows
     << "\nclip_seconds = " << fmt_g(spec.clip_seconds) << "\n";
  return ss.str();
}

int run_synth(const SynthArgs& a) {
  std::string out = ensure_out_dir(a.out);
  data::SynthSpec spec = preset_spec(a.preset);
  bool emb_dim_pinned = a.emb_dim > 0;
  auto kv = load_config(a.config);
  emb_dim_pinned = emb_dim_pinned || kv.count("emb_dim") > 0;
  apply_synth_config(spec, kv);
  if (a.n_train > 0) spec.n_train = a.n_train;
  if (a.n_val > 0) spec.n_val = a.n_val;
  if (a.n_test > 0) spec.n_test = a.n_test;
  if (a.k > 0) spec.k = a.k;
  if (a.emb_dim > 0) spec.emb_dim = a.emb_dim;
  if (a.noise >= 0.0) spec.noise = a.noise;
  if (a.clip_seconds > 0.0) spec.clip_seconds = a.clip_seconds;
  // The linear preset keeps its square-mixing guarantee under k overrides.
  if (a.preset == "linear" && !emb_dim_pinned) spec.emb_dim = spec.k + spec.n_countries;

  data::Dataset ds = data::synth_dataset(spec, a.seed, out);
  write_provenance(out, "synth", a.seed, synth_config_text(spec));
  std::cout << "wrote " << ds.samples.size() << " clips under " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// featurize
// ---------------------------------------------------------------------------

struct FeaturizeArgs {
  std::string data, out, config;
  std::uint64_t seed = 0;
  int jobs = 0;
};

int run_featurize(const FeaturizeArgs& a) {
  std::string out = ensure_out_dir(a.out);
  if (a.jobs > 0) setenv("BURSTKIT_THREADS", std::to_string(a.jobs).c_str(), 1);
  dsp::SpectrogramConfig cfg = feature_config(load_config(a.config));
  data::Dataset ds = load_data(a.data, out);

  std::vector<std::size_t> audio;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (!ds.samples[i].wav_path.empty()) audio.push_back(i);
  }
  if (audio.empty()) throw ValidationError("no audio clips to featurize");
  fs::create_directories(out + "/cache");
  parallel_for(audio.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const data::Sample& s = ds.samples[audio[j]];
      dsp::save_feature_cache(out + "/cache/" + s.clip_id + ".bkml",
                              data::features_for(ds, s, cfg));
    }
  });
  write_provenance(out, "featurize", a.seed, feature_config_text(cfg));
  std::cout << "cached " << audio.size() << " feature files under " << out << "/cache\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::uint64_t steps = 0;
  double target = -1.0;
};

int run_train(const TrainArgs& a) {
  std::string out = ensure_out_dir(a.out);
  training::RunConfig run =
      a.config.empty() ? training::RunConfig::defaults_for(models::ModelConfig::Family::kEmbedding)
                       : training::RunConfig::from_kv_file(a.config);
  if (a.seed_set) run.seed = a.seed;
  if (a.steps > 0) run.max_steps = a.steps;
  if (a.target >= 0.0) run.target_metric = a.target;
  run.checkpoint_path = out + "/model.bkpt";
  run.metrics_path = out + "/metrics.csv";
  run.validate();

  data::Dataset ds = load_data(a.data, out);
  training::TrainResult res = training::train(run, ds);
  write_provenance(out, "train", run.seed, run.to_kv_text());
  std::cout << "best_metric = " << fmt_g(res.best_metric) << "\nbest_step = " << res.best_step
            << "\nsteps_run = " << res.steps_run
            << "\nreached_target = " << (res.reached_target ? "true" : "false")
            << "\ncheckpoint = " << res.checkpoint_path << "\n";
  if (res.aborted_nan) {
    std::cerr << "error: training aborted: " << res.abort_reason << "\n";
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate / predict / ensemble
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string model, data, out, config;
  std::string split = "val";
  std::uint64_t seed = 0;
};

int run_evaluate(const EvalArgs& a) {
  std::string out = ensure_out_dir(a.out);
  dsp::SpectrogramConfig cfg = feature_config(load_config(a.config));
  data::Dataset ds = load_data(a.data, out);
  models::MultitaskModel model = models::load_model(a.model);
  data::Split split = data::parse_split(a.split);

  training::FeatureStore store(ds, cfg);
  training::EvalResult ev = training::evaluate(model, store, split);
  std::string model_id = fs::path(a.model).stem().string();
  write_text_file(out + "/metrics.csv",
                  objectives::metrics_csv_header(model.config().k) + "\n" +
                      objectives::metrics_csv_row(model_id, a.split, ev.scores) + "\n");

  training::PredictionsTable table;
  table.k = model.config().has_task(models::Task::kEmotion) ? model.config().k : 0;
  table.clip_ids = ev.clip_ids;
  table.emotions = ev.emotion_pred;
  table.countries = ev.country_pred;
  table.ages = ev.age_pred;
  write_text_file(out + "/predictions.csv", table.to_csv(ds.countries));
  write_provenance(out, "evaluate", a.seed,
                   feature_config_text(cfg) + "model = " + a.model + "\nsplit = " + a.split +
                       "\n");
  std::cout << objectives::metrics_csv_header(model.config().k) << "\n"
            << objectives::metrics_csv_row(model_id, a.split, ev.scores) << "\n";
  return 0;
}

int run_predict(const EvalArgs& a) {
  std::string out = ensure_out_dir(a.out);
  dsp::SpectrogramConfig cfg = feature_config(load_config(a.config));
  data::Dataset ds = load_data(a.data, out);
  models::MultitaskModel model = models::load_model(a.model);
  training::PredictionsTable table =
      training::predict(model, ds, data::parse_split(a.split), cfg);
  write_text_file(out + "/predictions.csv", table.to_csv(ds.countries));
  write_provenance(out, "predict", a.seed,
                   feature_config_text(cfg) + "model = " + a.model + "\nsplit = " + a.split +
                       "\n");
  std::cout << "wrote " << table.clip_ids.size() << " predictions\n";
  return 0;
}

struct EnsembleArgs {
  std::string emotion_model, country_model, data, out, config;
  std::string split = "val";
  double age = 26.0;
  std::uint64_t seed = 0;
};

int run_ensemble(const EnsembleArgs& a) {
  std::string out = ensure_out_dir(a.out);
  dsp::SpectrogramConfig cfg = feature_config(load_config(a.config));
  data::Dataset ds = load_data(a.data, out);
  data::Split split = data::parse_split(a.split);
  training::PredictionsTable table =
      training::ensemble_predict(a.emotion_model, a.country_model, ds, split, a.age, cfg);
  write_text_file(out + "/predictions.csv", table.to_csv(ds.countries));
  objectives::TaskScores s = training::score_table(table, ds, split);
  write_text_file(out + "/metrics.csv", objectives::metrics_csv_header(table.k) + "\n" +
                                            objectives::metrics_csv_row("ensemble", a.split, s) +
                                            "\n");
  write_provenance(out, "ensemble", a.seed,
                   feature_config_text(cfg) + "emotion_model = " + a.emotion_model +
                       "\ncountry_model = " + a.country_model + "\nsplit = " + a.split +
                       "\nage = " + fmt_g(a.age) + "\n");
  std::cout << objectives::metrics_csv_row("ensemble", a.split, s) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// permtest
// ---------------------------------------------------------------------------

struct PermtestArgs {
  std::string data, out, config, compare;
  std::string mode = "true";
  std::uint64_t seed = 0;
  std::uint64_t trials = 50;
  std::uint64_t steps = 400;
  double lr = 0.05;
  std::uint64_t batch = 32;
};

analysis::TrialDistribution load_trials_csv(const std::string& path) {
  auto lines = split(read_text_file(path), '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty() || lines[0] != "mode,trial,seed,mean_ccc") {
    throw ValidationError("'" + path + "' is not a trial-scores CSV");
  }
  analysis::TrialDistribution d;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto cells = split(lines[i], ',');
    if (cells.size() != 4) {
      throw ValidationError(path + ": malformed row " + std::to_string(i + 1));
    }
    try {
      d.mode = analysis::parse_mode(cells[0]);
      d.seeds.push_back(std::stoull(cells[2]));
      d.scores.push_back(std::stod(cells[3]));
    } catch (const std::invalid_argument&) {
      throw ValidationError(path + ": malformed row " + std::to_string(i + 1));
    }
  }
  if (d.scores.empty()) throw ValidationError(path + ": no trial rows");
  return d;
}

int run_permtest(const PermtestArgs& a) {
  std::string out = ensure_out_dir(a.out);
  auto kv = load_config(a.config);
  reject_unknown_keys(kv, {"trials", "steps", "lr", "batch_size"});
  analysis::PermutationPlan plan;
  plan.mode = analysis::parse_mode(a.mode);
  plan.base_seed = a.seed;
  plan.n_trials = kv_u64(kv, "trials", a.trials);
  plan.steps = kv_u64(kv, "steps", a.steps);
  plan.learning_rate = kv_double(kv, "lr", a.lr);
  plan.batch_size = kv_u64(kv, "batch_size", a.batch);

  data::Dataset ds = load_data(a.data, out);
  analysis::TrialDistribution dist = analysis::permutation_experiment(plan, ds);
  write_text_file(out + "/trials_" + a.mode + ".csv", analysis::trial_scores_csv(dist));
  if (dist.scores.size() >= 2) {
    double mean = 0.0;
    for (double s : dist.scores) mean += s / static_cast<double>(dist.scores.size());
    double var = 0.0;
    for (double s : dist.scores) var += (s - mean) * (s - mean);
    if (var > 0.0) {
      write_text_file(out + "/kde_" + a.mode + ".csv",
                      analysis::kde_csv(a.mode, analysis::kde_curve(dist.scores)));
    }
  }
  if (!a.compare.empty()) {
    analysis::TrialDistribution other = load_trials_csv(a.compare);
    analysis::TTestResult t = analysis::two_sample_t_test(other.scores, dist.scores);
    std::string pair = std::string(analysis::mode_name(other.mode)) + "_vs_" + a.mode;
    write_text_file(out + "/t_test.csv", analysis::t_test_csv({{pair, t}}));
    std::cout << pair << ": t = " << fmt_g(t.t) << ", df = " << fmt_g(t.df)
              << ", p = " << fmt_g(t.p) << "\n";
  }
  std::ostringstream cfg_text;
  cfg_text << "mode = " << a.mode << "\ntrials = " << plan.n_trials
           << "\nsteps = " << plan.steps << "\nlr = " << fmt_g(plan.learning_rate)
           << "\nbatch_size = " << plan.batch_size << "\n";
  write_provenance(out, "permtest", a.seed, cfg_text.str());
  std::cout << "wrote " << dist.scores.size() << " trial scores to " << out << "/trials_"
            << a.mode << ".csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// resplit
// ---------------------------------------------------------------------------

struct ResplitArgs {
  std::string data, out, config;
  std::uint64_t seed = 0;
  std::uint64_t n_speakers = 250;
};

int run_resplit(const ResplitArgs& a) {
  std::string out = ensure_out_dir(a.out);
  auto kv = load_config(a.config);
  reject_unknown_keys(kv, {"n_speakers"});
  std::uint64_t n = kv_u64(kv, "n_speakers", a.n_speakers);

  data::Dataset ds = load_data(a.data, out);
  data::ResplitResult res = data::speaker_resplit(ds, n, a.seed);
  // Keep file references valid from the new manifest's directory.
  data::Dataset moved = res.dataset;
  for (auto& s : moved.samples) {
    if (!s.wav_path.empty()) s.wav_path = fs::relative(ds.resolve(s.wav_path), out).string();
    if (!s.emb_path.empty()) s.emb_path = fs::relative(ds.resolve(s.emb_path), out).string();
  }
  data::save_manifest(out + "/manifest.csv", moved);
  write_text_file(out + "/split_report_before.csv",
                  data::split_report_csv(res.before, ds.countries));
  write_text_file(out + "/split_report_after.csv",
                  data::split_report_csv(res.after, ds.countries));
  write_provenance(out, "resplit", a.seed, "n_speakers = " + std::to_string(n) + "\n");
  if (res.emptied_validation) {
    std::cout << "warning: the move emptied the validation split\n";
  }
  std::cout << "moved " << n << " validation speakers into train; manifest at " << out
            << "/manifest.csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string table1, out, config;
  std::uint64_t seed = 0;
};

std::vector<analysis::RunSummary> load_run_summaries(const std::string& path) {
  auto lines = split(read_text_file(path), '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty() || lines[0] != "model,mtl,mean_ccc,uar,mae") {
    throw ValidationError("'" + path +
                          "' must be a CSV with header model,mtl,mean_ccc,uar,mae");
  }
  std::vector<analysis::RunSummary> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto cells = split(lines[i], ',');
    if (cells.size() != 5) {
      throw ValidationError(path + ": malformed row " + std::to_string(i + 1));
    }
    analysis::RunSummary r;
    r.model = trim(cells[0]);
    std::string mtl = lower(trim(cells[1]));
    if (mtl == "yes") {
      r.mtl = true;
    } else if (mtl == "no") {
      r.mtl = false;
    } else {
      throw ValidationError(path + ": row " + std::to_string(i + 1) +
                            ": mtl must be yes or no");
    }
    std::string ccc = trim(cells[2]);
    r.has_emotion = !ccc.empty();
    try {
      if (r.has_emotion) r.mean_ccc = std::stod(ccc);
      r.uar = std::stod(trim(cells[3]));
      r.mae = std::stod(trim(cells[4]));
    } catch (const std::invalid_argument&) {
      throw ValidationError(path + ": malformed row " + std::to_string(i + 1));
    }
    rows.push_back(r);
  }
  return rows;
}

int run_report(const ReportArgs& a) {
  std::string out = ensure_out_dir(a.out);
  std::string csv = analysis::mtl_comparison_csv(load_run_summaries(a.table1));
  write_text_file(out + "/report.csv", csv);
  write_provenance(out, "report", a.seed, read_text_file(a.table1));
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"burstkit: multitask vocal-burst modeling toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("burstkit ") + kVersion);
  int rc = 0;

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--preset", synth.preset,
                        "embedding|linear|informative|null|audio");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--config", synth.config, "Key-value overrides file");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--train", synth.n_train, "Training clips");
  synth_cmd->add_option("--val", synth.n_val, "Validation clips");
  synth_cmd->add_option("--test", synth.n_test, "Test clips");
  synth_cmd->add_option("--k", synth.k, "Emotion dimensions");
  synth_cmd->add_option("--emb-dim", synth.emb_dim, "Embedding dimension");
  synth_cmd->add_option("--noise", synth.noise, "Observation noise");
  synth_cmd->add_option("--clip-seconds", synth.clip_seconds, "Audio clip length");
  synth_cmd->callback([&] { rc = run_synth(synth); });

  FeaturizeArgs feat;
  auto* feat_cmd = app.add_subcommand("featurize", "Cache log-mel features for audio clips");
  feat_cmd->add_option("--data", feat.data, "Manifest path (default <out>/manifest.csv)");
  feat_cmd->add_option("--out", feat.out, "Output directory")->required();
  feat_cmd->add_option("--config", feat.config, "Feature config file");
  feat_cmd->add_option("--seed", feat.seed, "Unused; recorded in provenance");
  feat_cmd->add_option("--jobs", feat.jobs, "Parallel file workers");
  feat_cmd->callback([&] { rc = run_featurize(feat); });

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", train.data, "Manifest path (default <out>/manifest.csv)");
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--config", train.config, "Run config file");
  train_cmd->add_option("--seed", train.seed, "Training seed")
      ->each([&](const std::string&) { train.seed_set = true; });
  train_cmd->add_option("--steps", train.steps, "Override max_steps");
  train_cmd->add_option("--target", train.target, "Stop once the primary metric reaches this");
  train_cmd->callback([&] { rc = run_train(train); });

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a split");
  eval_cmd->add_option("--model", eval.model, "Checkpoint path")->required();
  eval_cmd->add_option("--data", eval.data, "Manifest path (default <out>/manifest.csv)");
  eval_cmd->add_option("--split", eval.split, "train|val|test");
  eval_cmd->add_option("--out", eval.out, "Output directory")->required();
  eval_cmd->add_option("--config", eval.config, "Feature config file");
  eval_cmd->add_option("--seed", eval.seed, "Unused; recorded in provenance");
  eval_cmd->callback([&] { rc = run_evaluate(eval); });

  EvalArgs pred;
  auto* pred_cmd = app.add_subcommand("predict", "Write a predictions table for a split");
  pred_cmd->add_option("--model", pred.model, "Checkpoint path")->required();
  pred_cmd->add_option("--data", pred.data, "Manifest path (default <out>/manifest.csv)");
  pred_cmd->add_option("--split", pred.split, "train|val|test");
  pred_cmd->add_option("--out", pred.out, "Output directory")->required();
  pred_cmd->add_option("--config", pred.config, "Feature config file");
  pred_cmd->add_option("--seed", pred.seed, "Unused; recorded in provenance");
  pred_cmd->callback([&] { rc = run_predict(pred); });

  EnsembleArgs ens;
  auto* ens_cmd =
      app.add_subcommand("ensemble", "Stitch emotion and country checkpoints with constant age");
  ens_cmd->add_option("--emotion-model", ens.emotion_model, "Emotion checkpoint")->required();
  ens_cmd->add_option("--country-model", ens.country_model, "Country checkpoint")->required();
  ens_cmd->add_option("--data", ens.data, "Manifest path (default <out>/manifest.csv)");
  ens_cmd->add_option("--split", ens.split, "train|val|test");
  ens_cmd->add_option("--age", ens.age, "Constant age prediction");
  ens_cmd->add_option("--out", ens.out, "Output directory")->required();
  ens_cmd->add_option("--config", ens.config, "Feature config file");
  ens_cmd->add_option("--seed", ens.seed, "Unused; recorded in provenance");
  ens_cmd->callback([&] { rc = run_ensemble(ens); });

  PermtestArgs perm;
  auto* perm_cmd = app.add_subcommand("permtest", "Run the aux-label permutation experiment");
  perm_cmd->add_option("--data", perm.data, "Manifest path (default <out>/manifest.csv)");
  perm_cmd->add_option("--mode", perm.mode, "true|shuffled|incorrect")->required();
  perm_cmd->add_option("--trials", perm.trials, "Number of trials");
  perm_cmd->add_option("--out", perm.out, "Output directory")->required();
  perm_cmd->add_option("--config", perm.config, "Plan config file");
  perm_cmd->add_option("--seed", perm.seed, "Base seed");
  perm_cmd->add_option("--steps", perm.steps, "Probe training steps");
  perm_cmd->add_option("--lr", perm.lr, "Probe learning rate");
  perm_cmd->add_option("--batch", perm.batch, "Probe batch size");
  perm_cmd->add_option("--compare", perm.compare,
                       "Trial CSV from another mode; writes a t-test summary");
  perm_cmd->callback([&] { rc = run_permtest(perm); });

  ResplitArgs resplit;
  auto* resplit_cmd =
      app.add_subcommand("resplit", "Move validation speakers into the training split");
  resplit_cmd->add_option("--data", resplit.data, "Manifest path (default <out>/manifest.csv)");
  resplit_cmd->add_option("--n", resplit.n_speakers, "Speakers to move");
  resplit_cmd->add_option("--out", resplit.out, "Output directory")->required();
  resplit_cmd->add_option("--config", resplit.config, "Config file");
  resplit_cmd->add_option("--seed", resplit.seed, "Sampling seed");
  resplit_cmd->callback([&] { rc = run_resplit(resplit); });

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Render the MTL comparison table");
  report_cmd->add_option("--table1", report.table1, "CSV of model,mtl,mean_ccc,uar,mae")
      ->required();
  report_cmd->add_option("--out", report.out, "Output directory")->required();
  report_cmd->add_option("--config", report.config, "Unused; accepted for uniformity");
  report_cmd->add_option("--seed", report.seed, "Unused; recorded in provenance");
  report_cmd->callback([&] { rc = run_report(report); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
