#pragma once

// Audio front-end: WAV IO, normalization, band-limited resampling, and the
// log-mel spectrogram used by the spectrogram models.

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "burstkit/common.hpp"

namespace burstkit::dsp {

struct Waveform {
  std::vector<float> samples;  // mono, in [-1, 1] once normalized
  int sample_rate = 16000;
};

struct SpectrogramConfig {
  int window_ms = 64;
  int hop_ms = 24;
  int n_mels = 128;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = 1e-6;

  std::size_t window_samples(int sample_rate) const {
    return static_cast<std::size_t>(window_ms) * static_cast<std::size_t>(sample_rate) / 1000;
  }
  std::size_t hop_samples(int sample_rate) const {
    return static_cast<std::size_t>(hop_ms) * static_cast<std::size_t>(sample_rate) / 1000;
  }
  // Window length rounded up to a power of two; no further zero padding.
  std::size_t fft_size(int sample_rate) const;
  void validate(int sample_rate) const;
};

struct LogMelSpectrogram {
  std::size_t frames = 0;
  std::size_t n_mels = 0;
  std::vector<float> values;  // frames x n_mels, row-major
  SpectrogramConfig config;

  float at(std::size_t f, std::size_t m) const { return values[f * n_mels + m]; }
};

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a);

// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

// Min-max rescale to [-1, 1]; a degenerate range (max == min) maps everything
// to zero instead.
void min_max_rescale(std::vector<float>& samples);

// PCM16 RIFF/WAVE reader: downmix to mono, divide by 32768, min-max rescale,
// resample to 16 kHz.
Waveform load_wav(const std::string& path);

// Reader without the normalize/resample pipeline (raw samples / 32768).
Waveform load_wav_raw(const std::string& path);

void save_wav_pcm16(const std::string& path, const Waveform& w);

Waveform resample(const Waveform& w, int target_hz);

// Triangular HTK-mel filters; rows n_mels, columns fft_size/2 + 1.
// Throws when any filter would be empty at this FFT resolution.
std::vector<std::vector<double>> mel_filterbank(const SpectrogramConfig& cfg, int sample_rate);

// Center frequencies (Hz) of the n_mels filters.
std::vector<double> mel_filter_centers(const SpectrogramConfig& cfg);

LogMelSpectrogram log_mel(const Waveform& w, const SpectrogramConfig& cfg = {});

// Per-clip feature cache ("BKML"): u32 version=1, u32 frames, u32 n_mels,
// f32 little-endian row-major values.
void save_feature_cache(const std::string& path, const LogMelSpectrogram& m);
LogMelSpectrogram load_feature_cache(const std::string& path);

}  // namespace burstkit::dsp
