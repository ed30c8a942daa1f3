"""Python facade over the burstkit C++ core.

Exposes the audio front-end (log_mel, mel_filter_centers, resample), the task
metrics (ccc, mean_ccc, uar, mae, harmonic_mean_score), and the statistics
helpers used by the permutation analysis (welch_t_test, student_t_two_sided_p,
kde_curve). Training and the dataset tooling live in the `burstkit` CLI.
"""

try:
    from ._burstkit import (  # type: ignore[attr-defined]
        ValidationError,
        ccc,
        harmonic_mean_score,
        kde_curve,
        log_mel,
        mae,
        mean_ccc,
        mel_filter_centers,
        resample,
        student_t_two_sided_p,
        uar,
        welch_t_test,
    )
except ImportError:  # plain CMake build: extension sits next to the package
    from _burstkit import (
        ValidationError,
        ccc,
        harmonic_mean_score,
        kde_curve,
        log_mel,
        mae,
        mean_ccc,
        mel_filter_centers,
        resample,
        student_t_two_sided_p,
        uar,
        welch_t_test,
    )

__all__ = [
    "ValidationError",
    "ccc",
    "harmonic_mean_score",
    "kde_curve",
    "log_mel",
    "mae",
    "mean_ccc",
    "mel_filter_centers",
    "resample",
    "student_t_two_sided_p",
    "uar",
    "welch_t_test",
]

__version__ = "0.1.0"
