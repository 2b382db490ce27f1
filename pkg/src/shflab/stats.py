"""Ensemble statistics with deterministic reductions."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps


def fsum_mean(x) -> float:
    """Correctly rounded mean; the result does not depend on the order of ``x``."""
    x = np.asarray(x, dtype=float).ravel()
    return math.fsum(x.tolist()) / x.size


def central_moment(x, k: int, mean: float | None = None) -> float:
    x = np.asarray(x, dtype=float).ravel()
    m = fsum_mean(x) if mean is None else mean
    return math.fsum(((x - m) ** k).tolist()) / x.size


def summarize(x) -> dict:
    """Mean, unbiased variance, skewness and excess kurtosis with standard errors.

    The variance standard error uses the fourth central moment,
    ``Var(s^2) ~ (m4 - (n-3)/(n-1) s^4) / n``.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    m = fsum_mean(x)
    m2 = central_moment(x, 2, m)
    m3 = central_moment(x, 3, m)
    m4 = central_moment(x, 4, m)
    var = m2 * n / (n - 1)
    var_se = math.sqrt(max(m4 - (n - 3) / (n - 1) * var * var, 0.0) / n)
    skew = m3 / m2 ** 1.5 if m2 > 0 else 0.0
    kurt = m4 / m2 ** 2 - 3.0 if m2 > 0 else 0.0
    return {
        "n": n,
        "mean": m,
        "mean_se": math.sqrt(var / n),
        "variance": var,
        "variance_se": var_se,
        "skewness": skew,
        "skewness_se": math.sqrt(6.0 / n),
        "excess_kurtosis": kurt,
        "excess_kurtosis_se": math.sqrt(24.0 / n),
        "median": float(np.median(x)),
    }


def quantiles(x, qs=(0.1, 0.25, 0.5, 0.75, 0.9)) -> dict:
    x = np.asarray(x, dtype=float).ravel()
    return {f"q{int(round(100 * q)):02d}": float(np.quantile(x, q)) for q in qs}


def ks_normal(x, mean: float, variance: float) -> float:
    """Kolmogorov-Smirnov distance of the sample to a fully specified normal law."""
    return float(sps.kstest(np.asarray(x, dtype=float), "norm",
                            args=(mean, math.sqrt(variance))).statistic)


def ks_critical(n: int, alpha: float = 0.05) -> float:
    """Asymptotic one-sample KS critical value ``K_alpha / sqrt(n)``.

    The comparison laws are fixed by theory, not fitted, so the plain
    Kolmogorov law applies.
    """
    return float(sps.kstwobign.isf(alpha)) / math.sqrt(n)


def strictly_decreasing(seq) -> bool:
    seq = list(seq)
    return all(b < a for a, b in zip(seq, seq[1:]))


def within_se(estimate: float, target: float, se: float, k: float = 3.0) -> bool:
    return abs(estimate - target) <= k * se


def two_sample_z(m1, se1, m2, se2) -> float:
    """``|m1 - m2| / sqrt(se1^2 + se2^2)``."""
    s = math.hypot(se1, se2)
    return abs(m1 - m2) / s if s > 0 else (0.0 if m1 == m2 else math.inf)
