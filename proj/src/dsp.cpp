#include "burstkit/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace burstkit::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

std::size_t SpectrogramConfig::fft_size(int sample_rate) const {
  std::size_t w = window_samples(sample_rate);
  std::size_t n = 1;
  while (n < w) n <<= 1;
  return n;
}

void SpectrogramConfig::validate(int sample_rate) const {
  if (sample_rate <= 0) throw ValidationError("sample rate must be positive");
  if (n_mels < 1) throw ValidationError("n_mels must be >= 1");
  if (hop_ms > window_ms) throw ValidationError("hop must not exceed the window");
  if (hop_ms <= 0 || window_ms <= 0) throw ValidationError("window and hop must be positive");
  if (fmax_hz > sample_rate / 2.0) {
    throw ValidationError("fmax " + fmt_g(fmax_hz) + " Hz exceeds Nyquist for " +
                          std::to_string(sample_rate) + " Hz audio");
  }
  if (fmin_hz < 0.0 || fmin_hz >= fmax_hz) throw ValidationError("need 0 <= fmin < fmax");
  if (log_floor <= 0.0) throw ValidationError("log_floor must be positive");
}

void fft_inplace(std::vector<std::complex<double>>& a) {
  std::size_t n = a.size();
  if (!is_pow2(n)) throw ValidationError("FFT size must be a power of two, got " +
                                         std::to_string(n));
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * kPi / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

void min_max_rescale(std::vector<float>& samples) {
  if (samples.empty()) return;
  auto [mn_it, mx_it] = std::minmax_element(samples.begin(), samples.end());
  float mn = *mn_it, mx = *mx_it;
  if (mx == mn) {
    std::fill(samples.begin(), samples.end(), 0.0f);
    return;
  }
  double scale = 2.0 / (static_cast<double>(mx) - static_cast<double>(mn));
  for (float& s : samples) {
    s = static_cast<float>((static_cast<double>(s) - mn) * scale - 1.0);
  }
}

Waveform load_wav_raw(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open WAV file: " + path);
  char riff[4], wave[4];
  f.read(riff, 4);
  std::uint32_t riff_size = 0;
  f.read(reinterpret_cast<char*>(&riff_size), 4);
  f.read(wave, 4);
  if (!f || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0) {
    throw ValidationError("malformed WAV header (not RIFF/WAVE): " + path);
  }
  std::uint16_t audio_format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  bool have_fmt = false;
  std::vector<std::int16_t> pcm;
  bool have_data = false;
  while (f) {
    char id[4];
    f.read(id, 4);
    std::uint32_t size = 0;
    f.read(reinterpret_cast<char*>(&size), 4);
    if (!f) break;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      std::vector<char> buf(size);
      f.read(buf.data(), size);
      if (size < 16) throw ValidationError("malformed WAV fmt chunk: " + path);
      std::memcpy(&audio_format, buf.data() + 0, 2);
      std::memcpy(&channels, buf.data() + 2, 2);
      std::memcpy(&sample_rate, buf.data() + 4, 4);
      std::memcpy(&bits, buf.data() + 14, 2);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw ValidationError("malformed WAV: data chunk before fmt: " + path);
      if (audio_format != 1 || bits != 16) {
        throw ValidationError("unsupported WAV codec (need PCM 16-bit): " + path);
      }
      pcm.resize(size / 2);
      f.read(reinterpret_cast<char*>(pcm.data()), static_cast<std::streamsize>(pcm.size() * 2));
      if (!f) throw ValidationError("truncated WAV data chunk: " + path);
      have_data = true;
      break;
    } else {
      f.seekg(size + (size & 1), std::ios::cur);  // skip unknown chunk (word aligned)
    }
  }
  if (!have_fmt || !have_data) throw ValidationError("malformed WAV (missing chunk): " + path);
  if (channels == 0) throw ValidationError("malformed WAV (zero channels): " + path);
  if (pcm.empty()) throw ValidationError("zero-length audio: " + path);
  Waveform w;
  w.sample_rate = static_cast<int>(sample_rate);
  std::size_t n = pcm.size() / channels;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) acc += pcm[i * channels + c];
    w.samples[i] = static_cast<float>(acc / channels / 32768.0);
  }
  return w;
}

Waveform load_wav(const std::string& path) {
  Waveform w = load_wav_raw(path);
  min_max_rescale(w.samples);
  return resample(w, 16000);
}

void save_wav_pcm16(const std::string& path, const Waveform& w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write WAV file: " + path);
  std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  f.write("RIFF", 4);
  write_u32le(f, 36 + data_bytes);
  f.write("WAVEfmt ", 8);
  write_u32le(f, 16);
  write_u16le(f, 1);  // PCM
  write_u16le(f, 1);  // mono
  write_u32le(f, static_cast<std::uint32_t>(w.sample_rate));
  write_u32le(f, static_cast<std::uint32_t>(w.sample_rate) * 2);
  write_u16le(f, 2);   // block align
  write_u16le(f, 16);  // bits
  f.write("data", 4);
  write_u32le(f, data_bytes);
  for (float s : w.samples) {
    double v = std::clamp(static_cast<double>(s), -1.0, 1.0) * 32767.0;
    auto q = static_cast<std::int16_t>(std::lround(v));
    write_u16le(f, static_cast<std::uint16_t>(q));
  }
  if (!f) throw ValidationError("failed writing WAV file: " + path);
}

Waveform resample(const Waveform& w, int target_hz) {
  if (target_hz <= 0) throw ValidationError("target sample rate must be positive");
  if (w.sample_rate == target_hz) return w;  // identity path, bit-exact
  const double ratio = static_cast<double>(target_hz) / w.sample_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to the input Nyquist
  const int half = 32;
  const double taps = half / cutoff;  // widen the window when downsampling
  std::size_t n_in = w.samples.size();
  auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));
  Waveform out;
  out.sample_rate = target_hz;
  out.samples.resize(n_out);
  for (std::size_t n = 0; n < n_out; ++n) {
    double center = static_cast<double>(n) / ratio;
    auto j0 = static_cast<std::ptrdiff_t>(std::ceil(center - taps));
    auto j1 = static_cast<std::ptrdiff_t>(std::floor(center + taps));
    double acc = 0.0, norm = 0.0;
    for (std::ptrdiff_t j = j0; j <= j1; ++j) {
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(n_in)) continue;
      double x = static_cast<double>(j) - center;
      double sinc = x == 0.0 ? 1.0 : std::sin(kPi * cutoff * x) / (kPi * cutoff * x);
      double win = 0.5 + 0.5 * std::cos(kPi * x / taps);  // Hann over the tap span
      double k = sinc * win;
      acc += k * w.samples[static_cast<std::size_t>(j)];
      norm += k;
    }
    // Per-position kernel normalization keeps DC exact, including at edges.
    out.samples[n] = std::abs(norm) > 1e-12 ? static_cast<float>(acc / norm) : 0.0f;
  }
  for (float& s : out.samples) s = std::clamp(s, -1.0f, 1.0f);
  return out;
}

std::vector<double> mel_filter_centers(const SpectrogramConfig& cfg) {
  double mlo = hz_to_mel(cfg.fmin_hz), mhi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> centers(cfg.n_mels);
  for (int i = 1; i <= cfg.n_mels; ++i) {
    centers[i - 1] = mel_to_hz(mlo + (mhi - mlo) * i / (cfg.n_mels + 1));
  }
  return centers;
}

std::vector<std::vector<double>> mel_filterbank(const SpectrogramConfig& cfg, int sample_rate) {
  cfg.validate(sample_rate);
  std::size_t nfft = cfg.fft_size(sample_rate);
  std::size_t bins = nfft / 2 + 1;
  double mlo = hz_to_mel(cfg.fmin_hz), mhi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[i] = mel_to_hz(mlo + (mhi - mlo) * i / (cfg.n_mels + 1));
  }
  std::vector<std::vector<double>> fb(cfg.n_mels, std::vector<double>(bins, 0.0));
  double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(nfft);
  for (int m = 0; m < cfg.n_mels; ++m) {
    double fl = edges[m], fc = edges[m + 1], fr = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      double f = k * bin_hz;
      double v = 0.0;
      if (f > fl && f < fc) {
        v = (f - fl) / (fc - fl);
      } else if (f >= fc && f < fr) {
        v = (fr - f) / (fr - fc);
      }
      if (v > 0.0) {
        fb[m][k] = v;
        any = true;
      }
    }
    if (!any) {
      throw ValidationError("mel filter " + std::to_string(m) + " is empty: n_mels " +
                            std::to_string(cfg.n_mels) + " too large for fft_size " +
                            std::to_string(nfft));
    }
  }
  return fb;
}

LogMelSpectrogram log_mel(const Waveform& w, const SpectrogramConfig& cfg) {
  cfg.validate(w.sample_rate);
  if (w.sample_rate != 16000) {
    throw ValidationError("log_mel expects 16 kHz audio, got " +
                          std::to_string(w.sample_rate) + " Hz");
  }
  std::size_t window = cfg.window_samples(w.sample_rate);
  std::size_t hop = cfg.hop_samples(w.sample_rate);
  std::size_t n = w.samples.size();
  if (n < window) {
    throw ValidationError("clip of " + std::to_string(n) + " samples is shorter than one " +
                          std::to_string(window) +
                          "-sample analysis window; zero-pad to the window before calling");
  }
  std::size_t frames = (n - window) / hop + 1;
  std::size_t nfft = cfg.fft_size(w.sample_rate);
  std::size_t bins = nfft / 2 + 1;
  auto fb = mel_filterbank(cfg, w.sample_rate);
  auto win = hann_window(window);
  LogMelSpectrogram out;
  out.frames = frames;
  out.n_mels = static_cast<std::size_t>(cfg.n_mels);
  out.config = cfg;
  out.values.resize(frames * out.n_mels);
  std::vector<std::complex<double>> buf(nfft);
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const float* src = w.samples.data() + t * hop;
    for (std::size_t i = 0; i < window; ++i) buf[i] = {src[i] * win[i], 0.0};
    for (std::size_t i = window; i < nfft; ++i) buf[i] = {0.0, 0.0};
    fft_inplace(buf);
    for (std::size_t k = 0; k < bins; ++k) power[k] = std::norm(buf[k]);
    for (std::size_t m = 0; m < out.n_mels; ++m) {
      double e = 0.0;
      const auto& row = fb[m];
      for (std::size_t k = 0; k < bins; ++k) e += row[k] * power[k];
      out.values[t * out.n_mels + m] = static_cast<float>(std::log(e + cfg.log_floor));
    }
  }
  return out;
}

void save_feature_cache(const std::string& path, const LogMelSpectrogram& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write feature cache: " + path);
  f.write("BKML", 4);
  write_u32le(f, 1);
  write_u32le(f, static_cast<std::uint32_t>(m.frames));
  write_u32le(f, static_cast<std::uint32_t>(m.n_mels));
  for (float v : m.values) write_f32le(f, v);
  if (!f) throw ValidationError("failed writing feature cache: " + path);
}

LogMelSpectrogram load_feature_cache(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open feature cache: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "BKML", 4) != 0) {
    throw ValidationError("bad feature cache magic in " + path);
  }
  std::uint32_t version = read_u32le(f, "feature cache version");
  if (version != 1) {
    throw ValidationError("unsupported feature cache version " + std::to_string(version));
  }
  LogMelSpectrogram m;
  m.frames = read_u32le(f, "feature cache frame count");
  m.n_mels = read_u32le(f, "feature cache mel count");
  m.values.resize(m.frames * m.n_mels);
  for (auto& v : m.values) v = read_f32le(f, "feature cache values");
  return m;
}

}  // namespace burstkit::dsp
