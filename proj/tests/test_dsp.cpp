#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "burstkit/dsp.hpp"
#include "doctest.h"

using namespace burstkit;
using namespace burstkit::dsp;

namespace {

constexpr double kPi = 3.14159265358979323846;

Waveform sine(double freq, double amp, int sr, std::size_t n, double phase = 0.0) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples[i] = static_cast<float>(amp * std::sin(2.0 * kPi * freq * i / sr + phase));
  }
  return w;
}

std::string temp_path(const std::string& name) {
  return "/tmp/burstkit_dsp_" + name;
}

// Minimal WAV writer with explicit channel control, for reader tests.
void write_test_wav(const std::string& path, std::uint16_t format, std::uint16_t channels,
                    std::uint32_t rate, std::uint16_t bits,
                    const std::vector<std::int16_t>& pcm) {
  std::ofstream f(path, std::ios::binary);
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<char*>(&v), 2); };
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); };
  std::uint32_t data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);
  f.write("RIFF", 4);
  u32(36 + data_bytes);
  f.write("WAVEfmt ", 8);
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  f.write("data", 4);
  u32(data_bytes);
  f.write(reinterpret_cast<const char*>(pcm.data()), data_bytes);
}

}  // namespace

TEST_SUITE("dsp") {

TEST_CASE("fft matches a naive dft") {
  Rng rng(5);
  std::vector<std::complex<double>> a(16);
  for (auto& z : a) z = {rand_uniform(rng, -1, 1), rand_uniform(rng, -1, 1)};
  auto naive = [&](std::size_t k) {
    std::complex<double> acc{0, 0};
    for (std::size_t n = 0; n < a.size(); ++n) {
      double ang = -2.0 * kPi * static_cast<double>(k * n) / static_cast<double>(a.size());
      acc += a[n] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    return acc;
  };
  std::vector<std::complex<double>> expect(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) expect[k] = naive(k);
  fft_inplace(a);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(std::abs(a[k] - expect[k]) < 1e-9);
  }
  std::vector<std::complex<double>> bad(12);
  CHECK_THROWS_AS(fft_inplace(bad), ValidationError);
}

TEST_CASE("two second clip yields an 81 x 128 spectrogram") {
  Waveform w = sine(440.0, 0.5, 16000, 32000);
  LogMelSpectrogram m = log_mel(w);
  CHECK(m.frames == 81);
  CHECK(m.n_mels == 128);
  CHECK(m.values.size() == 81u * 128u);
}

TEST_CASE("frame count formula holds for randomized lengths") {
  Rng rng(9);
  SpectrogramConfig cfg;
  std::size_t window = cfg.window_samples(16000), hop = cfg.hop_samples(16000);
  REQUIRE(window == 1024);
  REQUIRE(hop == 384);
  for (int i = 0; i < 10; ++i) {
    std::size_t n = window + rand_index(rng, 5000);
    Waveform w = sine(300.0, 0.4, 16000, n);
    CHECK(log_mel(w).frames == (n - window) / hop + 1);
  }
}

TEST_CASE("silence maps every cell to the log floor") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(2048, 0.0f);
  LogMelSpectrogram m = log_mel(w);
  for (float v : m.values) CHECK(v == doctest::Approx(-13.8155).epsilon(1e-4));
}

TEST_CASE("one kilohertz sine peaks at the nearest mel filter") {
  Waveform w = sine(1000.0, 0.9, 16000, 16000);
  SpectrogramConfig cfg;
  LogMelSpectrogram m = log_mel(w, cfg);
  // Independent center computation from the mel formula.
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto imel = [](double v) { return 700.0 * (std::pow(10.0, v / 2595.0) - 1.0); };
  double hi = mel(8000.0);
  std::size_t nearest = 0;
  double best = 1e9;
  for (int i = 1; i <= 128; ++i) {
    double c = imel(hi * i / 129.0);
    if (std::abs(c - 1000.0) < best) {
      best = std::abs(c - 1000.0);
      nearest = static_cast<std::size_t>(i - 1);
    }
  }
  CHECK(nearest == 44);  // sanity on the oracle itself
  for (std::size_t t = 0; t < m.frames; ++t) {
    std::size_t argmax = 0;
    for (std::size_t j = 1; j < m.n_mels; ++j) {
      if (m.at(t, j) > m.at(t, argmax)) argmax = j;
    }
    CHECK(argmax == nearest);
  }
}

TEST_CASE("mel filterbank is well formed") {
  SpectrogramConfig cfg;
  auto fb = mel_filterbank(cfg, 16000);
  REQUIRE(fb.size() == 128);
  for (const auto& row : fb) {
    bool any = false;
    for (double v : row) {
      CHECK(v >= 0.0);
      any = any || v > 0.0;
    }
    CHECK(any);
  }
  auto centers = mel_filter_centers(cfg);
  for (std::size_t i = 1; i < centers.size(); ++i) CHECK(centers[i] > centers[i - 1]);
  // Centers are equally spaced on the mel scale.
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  double step = mel(centers[1]) - mel(centers[0]);
  for (std::size_t i = 2; i < centers.size(); ++i) {
    CHECK(mel(centers[i]) - mel(centers[i - 1]) == doctest::Approx(step).epsilon(1e-9));
  }
}

TEST_CASE("four-filter bank centers match hand-computed spacing") {
  SpectrogramConfig cfg;
  cfg.n_mels = 4;
  auto centers = mel_filter_centers(cfg);
  REQUIRE(centers.size() == 4);
  CHECK(std::abs(centers[0] - 458.7300836725616) < 0.1);
  CHECK(std::abs(centers[1] - 1218.079152582602) < 0.1);
  CHECK(std::abs(centers[2] - 2475.0514528037643) < 0.1);
  CHECK(std::abs(centers[3] - 4555.753765102847) < 0.1);
}

TEST_CASE("overfull filterbank is rejected") {
  SpectrogramConfig cfg;
  cfg.n_mels = 512;  // 513 FFT bins cannot give every filter a positive entry
  CHECK_THROWS_AS(mel_filterbank(cfg, 16000), ValidationError);
}

TEST_CASE("config validation rejects bad parameters") {
  SpectrogramConfig cfg;
  cfg.fmax_hz = 9000.0;
  CHECK_THROWS_AS(cfg.validate(16000), ValidationError);
  cfg = {};
  cfg.hop_ms = 100;
  CHECK_THROWS_AS(cfg.validate(16000), ValidationError);
  cfg = {};
  cfg.n_mels = 0;
  CHECK_THROWS_AS(cfg.validate(16000), ValidationError);
  cfg = {};
  cfg.log_floor = 0.0;
  CHECK_THROWS_AS(cfg.validate(16000), ValidationError);
}

TEST_CASE("log mel rejects wrong rates and short clips") {
  Waveform w8 = sine(100.0, 0.5, 8000, 4000);
  CHECK_THROWS_AS(log_mel(w8), ValidationError);
  Waveform shorty = sine(100.0, 0.5, 16000, 512);
  try {
    log_mel(shorty);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("zero-pad") != std::string::npos);
  }
}

TEST_CASE("log mel is invariant to polarity flips") {
  Rng rng(13);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(4096);
  for (auto& s : w.samples) s = static_cast<float>(rand_uniform(rng, -0.8, 0.8));
  Waveform flipped = w;
  for (auto& s : flipped.samples) s = -s;
  CHECK(log_mel(w).values == log_mel(flipped).values);
}

TEST_CASE("doubling the amplitude shifts loud cells by log four") {
  Rng rng(17);
  Waveform w = sine(700.0, 0.35, 16000, 8192);
  for (auto& s : w.samples) s += static_cast<float>(rand_uniform(rng, -0.02, 0.02));
  Waveform loud = w;
  for (auto& s : loud.samples) s *= 2.0f;
  LogMelSpectrogram a = log_mel(w), b = log_mel(loud);
  double log4 = std::log(4.0);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (b.values[i] > -6.0f) {  // energy well above the floor
      CHECK(std::abs(static_cast<double>(b.values[i]) - a.values[i] - log4) < 1e-3);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("resample at the same rate is bitwise identity") {
  Waveform w = sine(432.0, 0.7, 16000, 5000);
  Waveform r = resample(w, 16000);
  CHECK(r.samples == w.samples);
}

TEST_CASE("resampled sine keeps its frequency") {
  // 1.024 s at 48 kHz -> exactly 16384 output samples; 1000 Hz falls exactly
  // on bin 1024 of the 16384-point transform.
  Waveform w = sine(1000.0, 0.8, 48000, 49152);
  Waveform r = resample(w, 16000);
  REQUIRE(r.samples.size() == 16384);
  std::vector<std::complex<double>> buf(16384);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {r.samples[i], 0.0};
  fft_inplace(buf);
  std::size_t argmax = 1;
  for (std::size_t k = 1; k < buf.size() / 2; ++k) {
    if (std::abs(buf[k]) > std::abs(buf[argmax])) argmax = k;
  }
  double freq = static_cast<double>(argmax) * 16000.0 / 16384.0;
  CHECK(std::abs(freq - 1000.0) < 1.0);
}

TEST_CASE("dc level survives resampling") {
  Waveform w;
  w.sample_rate = 44100;
  w.samples.assign(22050, 0.3f);
  Waveform r = resample(w, 16000);
  REQUIRE(!r.samples.empty());
  for (float s : r.samples) CHECK(std::abs(s - 0.3) < 1e-3);
}

TEST_CASE("content beyond the target nyquist is attenuated") {
  Waveform w = sine(10000.0, 0.5, 48000, 48000);
  Waveform r = resample(w, 16000);
  double rms = 0.0;
  for (float s : r.samples) rms += static_cast<double>(s) * s;
  rms = std::sqrt(rms / static_cast<double>(r.samples.size()));
  CHECK(rms < 0.05);  // source rms is 0.354
}

TEST_CASE("upsampling doubles the length within one sample") {
  Waveform w = sine(350.0, 0.5, 8000, 1234);
  Waveform r = resample(w, 16000);
  CHECK(std::llabs(static_cast<long long>(r.samples.size()) - 2468) <= 1);
  CHECK(r.sample_rate == 16000);
}

TEST_CASE("wav writer and raw reader round trip") {
  Rng rng(23);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(3000);
  for (auto& s : w.samples) s = static_cast<float>(rand_uniform(rng, -0.9, 0.9));
  auto path = temp_path("roundtrip.wav");
  save_wav_pcm16(path, w);
  Waveform r = load_wav_raw(path);
  CHECK(r.sample_rate == 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    // Writer scales by 32767, reader divides by 32768: half an LSB of rounding
    // plus the scale mismatch.
    CHECK(std::abs(r.samples[i] - w.samples[i]) <= 1.5f / 32768.0f);
  }
  std::remove(path.c_str());
}

TEST_CASE("loader downmixes stereo by averaging") {
  auto path = temp_path("stereo.wav");
  write_test_wav(path, 1, 2, 16000, 16, {1000, -1000, 2000, 1000, -400, -400});
  Waveform w = load_wav_raw(path);
  REQUIRE(w.samples.size() == 3);
  CHECK(w.samples[0] == doctest::Approx(0.0));
  CHECK(w.samples[1] == doctest::Approx(1500.0 / 32768.0));
  CHECK(w.samples[2] == doctest::Approx(-400.0 / 32768.0));
  std::remove(path.c_str());
}

TEST_CASE("all-zero file loads as all zeros") {
  auto path = temp_path("zeros.wav");
  write_test_wav(path, 1, 1, 16000, 16, std::vector<std::int16_t>(2000, 0));
  Waveform w = load_wav(path);
  for (float s : w.samples) CHECK(s == 0.0f);
  std::remove(path.c_str());
}

TEST_CASE("half-scale input rescales to span the full range") {
  auto path = temp_path("half.wav");
  std::vector<std::int16_t> pcm(64);
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    pcm[i] = static_cast<std::int16_t>(i % 2 == 0 ? 16384 : -16384);
  }
  pcm[10] = 0;
  write_test_wav(path, 1, 1, 16000, 16, pcm);
  Waveform w = load_wav(path);
  float mn = 1.0f, mx = -1.0f;
  for (float s : w.samples) {
    mn = std::min(mn, s);
    mx = std::max(mx, s);
  }
  CHECK(mx == doctest::Approx(1.0));
  CHECK(mn == doctest::Approx(-1.0));
  std::remove(path.c_str());
}

TEST_CASE("loader errors are distinct and descriptive") {
  auto path = temp_path("bad.wav");
  {
    std::ofstream f(path, std::ios::binary);
    f.write("JUNKJUNKJUNKJUNK", 16);
  }
  CHECK_THROWS_WITH_AS(load_wav_raw(path), doctest::Contains("malformed WAV header"),
                       ValidationError);
  write_test_wav(path, 3, 1, 16000, 16, {1, 2, 3});  // IEEE float format tag
  CHECK_THROWS_WITH_AS(load_wav_raw(path), doctest::Contains("unsupported WAV codec"),
                       ValidationError);
  write_test_wav(path, 1, 1, 16000, 16, {});
  CHECK_THROWS_WITH_AS(load_wav_raw(path), doctest::Contains("zero-length audio"),
                       ValidationError);
  std::remove(path.c_str());
}

TEST_CASE("feature cache round trips bitwise") {
  Waveform w = sine(640.0, 0.6, 16000, 4096);
  LogMelSpectrogram m = log_mel(w);
  auto path = temp_path("cache.bkml");
  save_feature_cache(path, m);
  LogMelSpectrogram r = load_feature_cache(path);
  CHECK(r.frames == m.frames);
  CHECK(r.n_mels == m.n_mels);
  CHECK(r.values == m.values);
  // Truncated payload is rejected.
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    bytes.resize(bytes.size() - 6);
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(load_feature_cache(path), doctest::Contains("truncated"),
                       ValidationError);
  std::remove(path.c_str());
}

}  // TEST_SUITE
