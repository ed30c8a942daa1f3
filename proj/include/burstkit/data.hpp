#pragma once

// Dataset manifests, split management, speaker-level re-splitting, embedding
// ingestion, and synthetic dataset generation with planted structure.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "burstkit/common.hpp"
#include "burstkit/dsp.hpp"

namespace burstkit::data {

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

const char* split_name(Split s);
Split parse_split(const std::string& s);

// The four competition regions, in label order.
const std::vector<std::string>& default_countries();

struct Sample {
  std::string clip_id;
  std::string speaker_id;
  Split split = Split::kTrain;
  int country = 0;  // index into Dataset::countries
  double age = 0.0;
  std::vector<double> emotions;  // K values in [0, 1]
  std::string wav_path;          // at least one of wav_path/emb_path non-empty
  std::string emb_path;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> countries = default_countries();
  std::string base_dir;  // directory paths are resolved against

  std::size_t k() const { return samples.empty() ? 0 : samples.front().emotions.size(); }
  std::vector<std::size_t> split_indices(Split s) const;
  std::string resolve(const std::string& rel) const;
};

// CSV schema: clip_id,speaker_id,split,country,age,wav_path,emb_path,emo_1..emo_K.
// Errors carry 1-based row numbers (header is row 1).
Dataset load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Dataset& ds);

struct EmbeddingSequence {
  std::size_t t = 0;  // windows
  std::size_t d = 0;  // embedding dimension
  std::vector<float> values;  // t x d row-major

  float at(std::size_t row, std::size_t col) const { return values[row * d + col]; }
};

// "VBEM" format: magic, u32 version=1, u32 D, u32 T, f32 LE row-major.
EmbeddingSequence load_embeddings(const std::string& path);
void save_embeddings(const std::string& path, const EmbeddingSequence& e);

struct SplitReport {
  struct Entry {
    Split split;
    std::size_t count = 0;
    std::vector<double> country_proportions;  // one per dataset country, sums to 1
    double age_p10 = 0, age_p50 = 0, age_p90 = 0;
    std::vector<double> emotion_means;
  };
  std::vector<Entry> entries;  // non-empty splits only, train/val/test order
};

SplitReport split_report(const Dataset& ds);
std::string split_report_csv(const SplitReport& r, const std::vector<std::string>& countries);

struct ResplitResult {
  Dataset dataset;
  SplitReport before;
  SplitReport after;
  bool emptied_validation = false;
};

// Moves every clip of n_speakers uniformly sampled validation speakers into
// the training split. No speaker ever straddles splits.
ResplitResult speaker_resplit(const Dataset& ds, std::size_t n_speakers, std::uint64_t seed);

struct SynthSpec {
  enum class Mode { kAudio, kEmbedding };
  Mode mode = Mode::kEmbedding;
  std::size_t n_train = 256;
  std::size_t n_val = 64;
  std::size_t n_test = 0;
  std::size_t k = 10;              // emotion dimensions
  std::size_t n_countries = 4;     // uses the first n of the default country set
  std::size_t clips_per_speaker = 4;
  std::vector<double> country_weights;  // empty = uniform

  // Planted-signal strengths.
  double noise = 0.1;           // observation noise in embeddings / audio
  double country_signal = 0.0;  // scale of B (country one-hot -> embedding)
  double country_shift = 0.0;   // scale of the country -> emotion mean shift
  bool zero_information = false;  // null preset: B = 0, shift = 0, aux independent

  // Embedding mode geometry.
  std::size_t emb_dim = 16;
  std::size_t emb_windows = 3;

  // Audio mode geometry.
  double clip_seconds = 0.8;

  void validate() const;
};

// Writes wav/ or emb/ files plus manifest.csv under out_dir and returns the
// loaded dataset. Identical spec + seed produce bitwise-identical trees.
Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed, const std::string& out_dir);

// Log-mel features for one sample, zero-padding clips shorter than one
// analysis window.
dsp::LogMelSpectrogram features_for(const Dataset& ds, const Sample& s,
                                    const dsp::SpectrogramConfig& cfg = {});

}  // namespace burstkit::data
