#include "burstkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

namespace burstkit::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

double to_double(const std::string& s, std::size_t row, const char* field) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) {
    throw ValidationError("row " + std::to_string(row) + ": cannot parse " + field + " '" +
                          s + "'");
  }
  return v;
}

// Weighted category draw via the cumulative distribution.
int draw_country(Rng& rng, const std::vector<double>& cdf) {
  double u = rand_uniform(rng);
  for (std::size_t c = 0; c < cdf.size(); ++c) {
    if (u < cdf[c]) return static_cast<int>(c);
  }
  return static_cast<int>(cdf.size()) - 1;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  double pos = q * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(pos);
  double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    default: return "test";
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split '" + s + "' (expected train/val/test)");
}

const std::vector<std::string>& default_countries() {
  static const std::vector<std::string> kCountries = {"usa", "china", "south_africa",
                                                      "venezuela"};
  return kCountries;
}

std::vector<std::size_t> Dataset::split_indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == s) out.push_back(i);
  }
  return out;
}

std::string Dataset::resolve(const std::string& rel) const {
  if (rel.empty() || rel.front() == '/' || base_dir.empty()) return rel;
  return base_dir + "/" + rel;
}

Dataset load_manifest(const std::string& path) {
  std::string text = read_text_file(path);
  std::vector<std::string> lines = split(text, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ValidationError("empty manifest: " + path);
  std::vector<std::string> header = split(trim(lines[0]), ',');
  const std::vector<std::string> fixed = {"clip_id", "speaker_id", "split",   "country",
                                          "age",     "wav_path",   "emb_path"};
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    if (i >= header.size() || header[i] != fixed[i]) {
      throw ValidationError("manifest missing column '" + fixed[i] + "' at position " +
                            std::to_string(i + 1));
    }
  }
  std::size_t k = header.size() - fixed.size();
  if (k == 0) throw ValidationError("manifest missing emotion columns (emo_1..emo_K)");
  for (std::size_t j = 0; j < k; ++j) {
    std::string want = "emo_" + std::to_string(j + 1);
    if (header[fixed.size() + j] != want) {
      throw ValidationError("manifest missing column '" + want + "' at position " +
                            std::to_string(fixed.size() + j + 1));
    }
  }
  Dataset ds;
  auto slash = path.find_last_of('/');
  ds.base_dir = slash == std::string::npos ? std::string() : path.substr(0, slash);
  std::unordered_set<std::string> seen;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    std::size_t row = li + 1;
    std::string line = trim(lines[li]);
    if (line.empty()) continue;
    std::vector<std::string> f = split(line, ',');
    if (f.size() != fixed.size() + k) {
      throw ValidationError("row " + std::to_string(row) + ": expected " +
                            std::to_string(fixed.size() + k) + " fields, got " +
                            std::to_string(f.size()));
    }
    Sample s;
    s.clip_id = f[0];
    if (!seen.insert(s.clip_id).second) {
      throw ValidationError("row " + std::to_string(row) + ": duplicate clip_id '" +
                            s.clip_id + "'");
    }
    s.speaker_id = f[1];
    try {
      s.split = parse_split(f[2]);
    } catch (const ValidationError& e) {
      throw ValidationError("row " + std::to_string(row) + ": " + e.what());
    }
    auto it = std::find(ds.countries.begin(), ds.countries.end(), f[3]);
    if (it == ds.countries.end()) {
      throw ValidationError("row " + std::to_string(row) + ": unknown country '" + f[3] +
                            "'");
    }
    s.country = static_cast<int>(it - ds.countries.begin());
    s.age = to_double(f[4], row, "age");
    if (s.age <= 0.0) {
      throw ValidationError("row " + std::to_string(row) + ": age must be positive, got " +
                            f[4]);
    }
    s.wav_path = f[5];
    s.emb_path = f[6];
    if (s.wav_path.empty() && s.emb_path.empty()) {
      throw ValidationError("row " + std::to_string(row) +
                            ": need at least one of wav_path/emb_path");
    }
    s.emotions.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      s.emotions[j] = to_double(f[fixed.size() + j], row, "emotion");
      if (s.emotions[j] < 0.0 || s.emotions[j] > 1.0) {
        throw ValidationError("row " + std::to_string(row) + ": emotion value " +
                              f[fixed.size() + j] + " outside [0, 1]");
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_manifest(const std::string& path, const Dataset& ds) {
  std::string out = "clip_id,speaker_id,split,country,age,wav_path,emb_path";
  std::size_t k = ds.k();
  for (std::size_t j = 0; j < k; ++j) out += ",emo_" + std::to_string(j + 1);
  out += "\n";
  for (const auto& s : ds.samples) {
    out += s.clip_id + "," + s.speaker_id + "," + split_name(s.split) + "," +
           ds.countries[s.country] + "," + fmt_g(s.age, 17) + "," + s.wav_path + "," +
           s.emb_path;
    for (double e : s.emotions) out += "," + fmt_g(e, 17);
    out += "\n";
  }
  write_text_file(path, out);
}

EmbeddingSequence load_embeddings(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open embedding file: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "VBEM", 4) != 0) {
    throw ValidationError("bad embedding magic in " + path);
  }
  std::uint32_t version = read_u32le(f, "embedding version");
  if (version != 1) {
    throw ValidationError("unsupported embedding version " + std::to_string(version) +
                          " in " + path);
  }
  EmbeddingSequence e;
  e.d = read_u32le(f, "embedding dimension");
  e.t = read_u32le(f, "embedding window count");
  if (e.t < 1 || e.d < 1) throw ValidationError("degenerate embedding shape in " + path);
  read_f32le_vec(f, e.t * e.d, e.values, "embedding payload of " + path);
  return e;
}

void save_embeddings(const std::string& path, const EmbeddingSequence& e) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write embedding file: " + path);
  f.write("VBEM", 4);
  write_u32le(f, 1);
  write_u32le(f, static_cast<std::uint32_t>(e.d));
  write_u32le(f, static_cast<std::uint32_t>(e.t));
  write_f32le_vec(f, e.values);
  if (!f) throw ValidationError("failed writing embedding file: " + path);
}

SplitReport split_report(const Dataset& ds) {
  SplitReport r;
  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    auto idx = ds.split_indices(sp);
    if (idx.empty()) continue;
    SplitReport::Entry e;
    e.split = sp;
    e.count = idx.size();
    e.country_proportions.assign(ds.countries.size(), 0.0);
    std::vector<double> ages;
    e.emotion_means.assign(ds.k(), 0.0);
    for (std::size_t i : idx) {
      const Sample& s = ds.samples[i];
      e.country_proportions[s.country] += 1.0;
      ages.push_back(s.age);
      for (std::size_t j = 0; j < s.emotions.size(); ++j) e.emotion_means[j] += s.emotions[j];
    }
    for (double& p : e.country_proportions) p /= static_cast<double>(e.count);
    for (double& m : e.emotion_means) m /= static_cast<double>(e.count);
    e.age_p10 = quantile(ages, 0.10);
    e.age_p50 = quantile(ages, 0.50);
    e.age_p90 = quantile(ages, 0.90);
    r.entries.push_back(std::move(e));
  }
  return r;
}

std::string split_report_csv(const SplitReport& r, const std::vector<std::string>& countries) {
  std::string out = "split,count";
  for (const auto& c : countries) out += ",prop_" + c;
  out += ",age_p10,age_p50,age_p90";
  std::size_t k = r.entries.empty() ? 0 : r.entries.front().emotion_means.size();
  for (std::size_t j = 0; j < k; ++j) out += ",emo_mean_" + std::to_string(j + 1);
  out += "\n";
  for (const auto& e : r.entries) {
    out += std::string(split_name(e.split)) + "," + std::to_string(e.count);
    for (double p : e.country_proportions) out += "," + fmt_g(p);
    out += "," + fmt_g(e.age_p10) + "," + fmt_g(e.age_p50) + "," + fmt_g(e.age_p90);
    for (double m : e.emotion_means) out += "," + fmt_g(m);
    out += "\n";
  }
  return out;
}

ResplitResult speaker_resplit(const Dataset& ds, std::size_t n_speakers, std::uint64_t seed) {
  ResplitResult r;
  r.dataset = ds;
  r.before = split_report(ds);
  std::vector<std::string> val_speakers;
  {
    std::unordered_set<std::string> seen;
    for (const auto& s : ds.samples) {
      if (s.split == Split::kVal && seen.insert(s.speaker_id).second) {
        val_speakers.push_back(s.speaker_id);
      }
    }
  }
  std::sort(val_speakers.begin(), val_speakers.end());
  if (val_speakers.size() < n_speakers) {
    throw ValidationError("validation split has " + std::to_string(val_speakers.size()) +
                          " speakers, cannot move " + std::to_string(n_speakers));
  }
  Rng rng(seed);
  shuffle_vec(val_speakers, rng);
  std::unordered_set<std::string> moved(val_speakers.begin(),
                                        val_speakers.begin() +
                                            static_cast<std::ptrdiff_t>(n_speakers));
  for (auto& s : r.dataset.samples) {
    if (s.split == Split::kVal && moved.count(s.speaker_id)) s.split = Split::kTrain;
  }
  r.after = split_report(r.dataset);
  r.emptied_validation = r.dataset.split_indices(Split::kVal).empty();
  return r;
}

void SynthSpec::validate() const {
  if (n_train == 0 || n_val == 0) throw ValidationError("need train and val clips");
  if (k < 1) throw ValidationError("need at least one emotion dimension");
  if (n_countries < 2 || n_countries > default_countries().size()) {
    throw ValidationError("n_countries must be in [2, " +
                          std::to_string(default_countries().size()) + "]");
  }
  if (clips_per_speaker < 1) throw ValidationError("clips_per_speaker must be >= 1");
  if (!country_weights.empty() && country_weights.size() != n_countries) {
    throw ValidationError("country_weights length must equal n_countries");
  }
  if (noise < 0.0) throw ValidationError("noise must be non-negative");
  if (country_shift < 0.0 || country_shift > 0.2) {
    throw ValidationError("country_shift must be in [0, 0.2]");
  }
  if (mode == Mode::kAudio && k > 12) {
    throw ValidationError("audio mode supports at most 12 emotion dimensions");
  }
  if (mode == Mode::kAudio && (clip_seconds < 0.1 || clip_seconds > 10.0)) {
    throw ValidationError("clip_seconds must be in [0.1, 10]");
  }
  if (mode == Mode::kEmbedding && emb_dim < k + n_countries) {
    throw ValidationError("emb_dim must be at least k + n_countries for decodability");
  }
  if (emb_windows < 1) throw ValidationError("emb_windows must be >= 1");
}

Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  bool audio = spec.mode == SynthSpec::Mode::kAudio;
  fs::create_directories(out_dir + (audio ? "/wav" : "/emb"));

  double signal_b = spec.zero_information ? 0.0 : spec.country_signal;
  double shift_scale = spec.zero_information ? 0.0 : spec.country_shift;

  Rng rng(seed);
  std::size_t c = spec.n_countries, k = spec.k, d = spec.emb_dim;
  // Dataset-level planted parameters.
  std::vector<double> shift(c * k);  // country -> emotion mean shift
  for (auto& v : shift) v = rand_uniform(rng, -shift_scale, shift_scale);
  std::vector<double> a_mat(d * k);  // emotions -> embedding
  for (auto& v : a_mat) v = rand_normal(rng) / std::sqrt(static_cast<double>(k));
  std::vector<double> b_mat(d * c);  // country one-hot -> embedding
  for (auto& v : b_mat) v = rand_normal(rng) * signal_b;
  std::vector<double> tilt(c);  // audio spectral tilt per country
  for (std::size_t i = 0; i < c; ++i) {
    tilt[i] = (static_cast<double>(i) / std::max<std::size_t>(1, c - 1) - 0.5) * 0.1;
  }
  std::vector<double> cdf(c);
  {
    std::vector<double> w = spec.country_weights;
    if (w.empty()) w.assign(c, 1.0);
    double total = 0.0;
    for (double x : w) {
      if (x < 0.0) throw ValidationError("country weights must be non-negative");
      total += x;
    }
    if (total <= 0.0) throw ValidationError("country weights must not all be zero");
    double acc = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      acc += w[i] / total;
      cdf[i] = acc;
    }
  }

  Dataset ds;
  ds.countries = default_countries();
  ds.base_dir = out_dir;
  const std::size_t counts[3] = {spec.n_train, spec.n_val, spec.n_test};
  const Split splits[3] = {Split::kTrain, Split::kVal, Split::kTest};
  const char* tags[3] = {"tr", "va", "te"};
  char buf[64];
  for (int si = 0; si < 3; ++si) {
    std::size_t n = counts[si];
    if (n == 0) continue;
    std::size_t n_speakers = (n + spec.clips_per_speaker - 1) / spec.clips_per_speaker;
    // Speaker attributes drawn first so clip order does not disturb them.
    std::vector<int> spk_country(n_speakers);
    std::vector<double> spk_age(n_speakers);
    for (std::size_t sp = 0; sp < n_speakers; ++sp) {
      spk_country[sp] = draw_country(rng, cdf);
      spk_age[sp] = rand_trunc_normal(rng, 26.0, 4.0, 16.0, 50.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t sp = i / spec.clips_per_speaker;
      Sample s;
      std::snprintf(buf, sizeof buf, "clip_%s_%05zu", tags[si], i);
      s.clip_id = buf;
      std::snprintf(buf, sizeof buf, "spk_%s_%04zu", tags[si], sp);
      s.speaker_id = buf;
      s.split = splits[si];
      s.country = spk_country[sp];
      s.age = spk_age[sp];
      s.emotions.resize(k);
      for (std::size_t j = 0; j < k; ++j) {
        s.emotions[j] = rand_uniform(rng, 0.2, 0.8) + shift[s.country * k + j];
      }
      if (audio) {
        s.wav_path = std::string("wav/") + s.clip_id + ".wav";
        dsp::Waveform w;
        w.sample_rate = 16000;
        auto len = static_cast<std::size_t>(spec.clip_seconds * 16000.0);
        w.samples.assign(len, 0.0f);
        std::vector<double> phase(k);
        for (auto& p : phase) p = rand_uniform(rng, 0.0, 2.0 * kPi);
        double marker_freq = 3000.0 + 400.0 * s.country;
        double marker_phase = rand_uniform(rng, 0.0, 2.0 * kPi);
        double ref_phase = rand_uniform(rng, 0.0, 2.0 * kPi);
        std::vector<double> sig(len, 0.0);
        double peak = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
          double ts = static_cast<double>(t) / 16000.0;
          double v = 0.0;
          for (std::size_t j = 0; j < k; ++j) {
            double freq = 200.0 + 180.0 * static_cast<double>(j);
            double amp = (0.15 + 0.7 * s.emotions[j]) * std::exp(tilt[s.country] * freq / 4000.0);
            v += amp * std::sin(2.0 * kPi * freq * ts + phase[j]);
          }
          v += 0.45 * std::sin(2.0 * kPi * marker_freq * ts + marker_phase);
          v += 0.5 * std::sin(2.0 * kPi * 2500.0 * ts + ref_phase);
          v += 0.2 * spec.noise * rand_normal(rng);
          sig[t] = v;
          peak = std::max(peak, std::abs(v));
        }
        double gain = peak > 0.0 ? 0.9 / peak : 0.0;
        for (std::size_t t = 0; t < len; ++t) {
          w.samples[t] = static_cast<float>(sig[t] * gain);
        }
        dsp::save_wav_pcm16(ds.resolve(s.wav_path), w);
      } else {
        s.emb_path = std::string("emb/") + s.clip_id + ".vbem";
        EmbeddingSequence e;
        e.t = spec.emb_windows;
        e.d = d;
        e.values.resize(e.t * d);
        for (std::size_t t = 0; t < e.t; ++t) {
          for (std::size_t di = 0; di < d; ++di) {
            double v = 0.0;
            for (std::size_t j = 0; j < k; ++j) v += a_mat[di * k + j] * s.emotions[j];
            v += b_mat[di * c + s.country];
            v += spec.noise * rand_normal(rng);
            e.values[t * d + di] = static_cast<float>(v);
          }
        }
        save_embeddings(ds.resolve(s.emb_path), e);
      }
      ds.samples.push_back(std::move(s));
    }
  }
  save_manifest(out_dir + "/manifest.csv", ds);
  return ds;
}

dsp::LogMelSpectrogram features_for(const Dataset& ds, const Sample& s,
                                    const dsp::SpectrogramConfig& cfg) {
  if (s.wav_path.empty()) {
    throw ValidationError("sample " + s.clip_id + " has no wav_path to featurize");
  }
  dsp::Waveform w = dsp::load_wav(ds.resolve(s.wav_path));
  std::size_t window = cfg.window_samples(w.sample_rate);
  if (w.samples.size() < window) w.samples.resize(window, 0.0f);  // zero-pad short clips
  return dsp::log_mel(w, cfg);
}

}  // namespace burstkit::data
