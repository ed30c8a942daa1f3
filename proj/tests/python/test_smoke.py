"""End-to-end smoke tests for the Python bindings.

These stay deliberately light: exact identities and small frozen values that
the C++ unit suites already pin down, exercised through the module boundary.
"""

import math

import pytest

import burstkit as bk


def test_metric_identities():
    a = [0.1, 0.4, 0.7, 0.9]
    assert bk.ccc(a, a) == pytest.approx(1.0, abs=1e-12)
    assert bk.ccc(a, [-x for x in a]) < 0.0
    assert bk.mae([1.0, 2.0], [1.5, 2.5]) == pytest.approx(0.5, abs=1e-12)


def test_mean_ccc_over_columns():
    # Two columns: the first matches exactly, the second is anti-correlated.
    pred = [0.0, 1.0, 1.0, 0.0, 2.0, -1.0]
    target = [0.0, 1.0, 1.0, 0.0, 2.0, 1.0]
    per_col_first = bk.ccc([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    per_col_second = bk.ccc([1.0, 0.0, -1.0], [1.0, 0.0, 1.0])
    combined = bk.mean_ccc(pred, target, 3, 2)
    assert combined == pytest.approx((per_col_first + per_col_second) / 2.0, abs=1e-12)


def test_uar_balanced_quarter():
    truth = [0, 1, 2, 3] * 2
    pred = [0, 0, 0, 0, 1, 1, 1, 1]  # each class recalls exactly one of two
    # class 0: 1/2 recall; class 1: 1/2; classes 2 and 3: 0 -> mean 0.25
    assert bk.uar(pred, truth, 4) == pytest.approx(0.25, abs=1e-12)


def test_harmonic_mean_matches_formula_and_handles_undefined():
    c, u, m = 0.62, 0.54, 3.818
    score = bk.harmonic_mean_score(c, u, m)
    assert score == pytest.approx(3.0 / (1.0 / c + 1.0 / u + m), abs=1e-12)
    assert bk.harmonic_mean_score(-0.1, 0.5, 4.0) is None
    assert bk.harmonic_mean_score(0.5, 0.0, 4.0) is None


def test_welch_t_test_against_frozen_values():
    a = [1.0, 2.0, 3.0, 4.0]
    b = [3.0, 4.0, 5.0, 6.0]
    t, df, p = bk.welch_t_test(a, b)
    assert t == pytest.approx(-2.1908902300206647, abs=1e-9)
    assert df == pytest.approx(6.0, abs=1e-9)
    assert p == pytest.approx(0.07098765432098766, abs=1e-9)
    assert bk.student_t_two_sided_p(0.0, 10.0) == pytest.approx(1.0, abs=1e-12)


def test_kde_curve_integrates_to_one():
    scores = [0.1, 0.22, 0.35, 0.4, 0.41, 0.6]
    bandwidth, x, density = bk.kde_curve(scores, 401)
    assert bandwidth > 0.0
    assert len(x) == len(density) == 401
    dx = x[1] - x[0]
    mass = sum(density) * dx
    assert mass == pytest.approx(1.0, abs=2e-3)


def test_log_mel_silence_shape_and_floor():
    silence = [0.0] * (2 * 16000)
    rows = bk.log_mel(silence, sample_rate=16000, window_ms=64, hop_ms=24, n_mels=128)
    assert len(rows) == 81
    assert all(len(r) == 128 for r in rows)
    floor = math.log(1e-6)
    flat = [v for r in rows for v in r]
    assert max(flat) == pytest.approx(floor, abs=1e-5)
    assert min(flat) == pytest.approx(floor, abs=1e-5)


def test_log_mel_tone_peaks_at_matching_filter():
    rate = 16000
    tone = [math.sin(2.0 * math.pi * 1000.0 * i / rate) for i in range(rate)]
    rows = bk.log_mel(tone, sample_rate=rate, window_ms=64, hop_ms=24, n_mels=128)
    centers = bk.mel_filter_centers(n_mels=128)
    expected = min(range(len(centers)), key=lambda j: abs(centers[j] - 1000.0))
    interior = rows[len(rows) // 2]
    assert interior.index(max(interior)) == expected


def test_resample_preserves_duration():
    rate = 16000
    tone = [math.sin(2.0 * math.pi * 440.0 * i / rate) for i in range(rate)]
    down = bk.resample(tone, rate, 8000)
    assert len(down) == 8000


def test_validation_error_maps_to_value_error():
    with pytest.raises(ValueError):
        bk.ccc([1.0, 2.0], [1.0])
