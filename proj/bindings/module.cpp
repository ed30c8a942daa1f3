// Python bindings for the pieces of the toolkit that are useful standalone:
// the log-mel front-end, the task metrics, and the statistics helpers behind
// the permutation analysis. Training stays on the C++ side via the CLI.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "burstkit/analysis.hpp"
#include "burstkit/common.hpp"
#include "burstkit/dsp.hpp"
#include "burstkit/objectives.hpp"

namespace py = pybind11;
using namespace burstkit;

namespace {

dsp::SpectrogramConfig make_config(int window_ms, int hop_ms, int n_mels, double fmin_hz,
                                   double fmax_hz) {
  dsp::SpectrogramConfig cfg;
  cfg.window_ms = window_ms;
  cfg.hop_ms = hop_ms;
  cfg.n_mels = n_mels;
  cfg.fmin_hz = fmin_hz;
  cfg.fmax_hz = fmax_hz;
  return cfg;
}

std::vector<std::vector<float>> log_mel_py(const std::vector<float>& samples, int sample_rate,
                                           int window_ms, int hop_ms, int n_mels,
                                           double fmin_hz, double fmax_hz) {
  dsp::Waveform w;
  w.samples = samples;
  w.sample_rate = sample_rate;
  dsp::LogMelSpectrogram m =
      dsp::log_mel(w, make_config(window_ms, hop_ms, n_mels, fmin_hz, fmax_hz));
  std::vector<std::vector<float>> rows(m.frames, std::vector<float>(m.n_mels));
  for (std::size_t f = 0; f < m.frames; ++f) {
    for (std::size_t j = 0; j < m.n_mels; ++j) rows[f][j] = m.at(f, j);
  }
  return rows;
}

std::vector<float> resample_py(const std::vector<float>& samples, int from_hz, int to_hz) {
  dsp::Waveform w;
  w.samples = samples;
  w.sample_rate = from_hz;
  return dsp::resample(w, to_hz).samples;
}

std::optional<double> harmonic_py(double mean_ccc, double uar, double mae) {
  objectives::HarmonicMean h = objectives::harmonic_mean_score(mean_ccc, uar, mae);
  if (!h.defined) return std::nullopt;
  return h.value;
}

py::tuple welch_py(const std::vector<double>& a, const std::vector<double>& b) {
  analysis::TTestResult r = analysis::two_sample_t_test(a, b);
  return py::make_tuple(r.t, r.df, r.p);
}

py::tuple kde_py(const std::vector<double>& scores, std::size_t grid_points) {
  analysis::KdeCurve c = analysis::kde_curve(scores, grid_points);
  return py::make_tuple(c.bandwidth, c.x, c.density);
}

}  // namespace

PYBIND11_MODULE(_burstkit, m) {
  m.doc() = "Vocal-burst multitask toolkit: audio front-end, metrics, statistics";

  m.def("log_mel", &log_mel_py, py::arg("samples"), py::arg("sample_rate") = 16000,
        py::arg("window_ms") = 64, py::arg("hop_ms") = 24, py::arg("n_mels") = 128,
        py::arg("fmin_hz") = 0.0, py::arg("fmax_hz") = 8000.0,
        "Log-mel spectrogram of a mono waveform, as a frames x n_mels list of rows.");
  m.def(
      "mel_filter_centers",
      [](int n_mels, double fmin_hz, double fmax_hz) {
        return dsp::mel_filter_centers(make_config(64, 24, n_mels, fmin_hz, fmax_hz));
      },
      py::arg("n_mels") = 128, py::arg("fmin_hz") = 0.0, py::arg("fmax_hz") = 8000.0,
      "Center frequencies (Hz) of the triangular mel filters.");
  m.def("resample", &resample_py, py::arg("samples"), py::arg("from_hz"), py::arg("to_hz"),
        "Band-limited resampling of a mono waveform.");

  m.def("ccc", &objectives::ccc, py::arg("pred"), py::arg("target"),
        "Lin's concordance correlation coefficient of two equal-length sequences.");
  m.def("mean_ccc", &objectives::mean_ccc, py::arg("pred"), py::arg("target"), py::arg("n"),
        py::arg("k"), "Column-mean CCC of two row-major n x k matrices.");
  m.def("uar", &objectives::uar, py::arg("pred"), py::arg("truth"), py::arg("n_classes"),
        "Unweighted average recall over the classes present in the ground truth.");
  m.def("mae", &objectives::mae, py::arg("pred"), py::arg("target"), "Mean absolute error.");
  m.def("harmonic_mean_score", &harmonic_py, py::arg("mean_ccc"), py::arg("uar"),
        py::arg("mae"),
        "Competition metric 3 / (1/mean_ccc + 1/uar + mae); None when undefined.");

  m.def("welch_t_test", &welch_py, py::arg("a"), py::arg("b"),
        "Two-sample Welch t-test; returns (t, df, p) with a two-sided p-value.");
  m.def("student_t_two_sided_p", &analysis::student_t_two_sided_p, py::arg("t"), py::arg("df"),
        "Two-sided tail probability of Student's t distribution.");
  m.def("kde_curve", &kde_py, py::arg("scores"), py::arg("grid_points") = 201,
        "Gaussian KDE with Scott's bandwidth; returns (bandwidth, x, density).");

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
}
