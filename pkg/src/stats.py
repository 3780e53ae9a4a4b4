"""Goodness-of-fit and correlation statistics."""

import math
from collections.abc import Sequence

import numpy as np

from src.errors import DomainError, ZeroVariance
from src.models import SignificanceResult
from src.specfun import f_critical, t_critical


def _paired(observed: Sequence[float], predicted: Sequence[float], min_len: int) -> tuple[np.ndarray, np.ndarray]:
    obs = np.asarray(observed, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    if obs.shape != pred.shape or obs.ndim != 1:
        raise DomainError(f"series must be 1-D and equal length, got {obs.shape} and {pred.shape}")
    if len(obs) < min_len:
        raise DomainError(f"need at least {min_len} points, got {len(obs)}")
    return obs, pred


def r_squared(observed: Sequence[float], predicted: Sequence[float]) -> float:
    """1 - RSS/TSS, with TSS taken about the observed mean. Negative for fits worse than the mean."""
    obs, pred = _paired(observed, predicted, 2)
    tss = float(np.sum((obs - obs.mean()) ** 2))
    if tss == 0.0:
        raise ZeroVariance("observed series is constant")
    rss = float(np.sum((obs - pred) ** 2))
    return 1.0 - rss / tss


def ess_over_tss(observed: Sequence[float], predicted: Sequence[float]) -> float:
    """Explained-sum-of-squares form of R²; differs from r_squared for nonlinear fits."""
    obs, pred = _paired(observed, predicted, 2)
    tss = float(np.sum((obs - obs.mean()) ** 2))
    if tss == 0.0:
        raise ZeroVariance("observed series is constant")
    return float(np.sum((pred - obs.mean()) ** 2)) / tss


def f_statistic(r2: float, n: int, k: int) -> float:
    if n <= k + 1:
        raise DomainError(f"F statistic needs n > k + 1, got n={n}, k={k}")
    if r2 >= 1.0:
        raise DomainError(f"F statistic is unbounded for r2 >= 1, got {r2}")
    return (r2 / k) / ((1.0 - r2) / (n - k - 1))


def r2_crit(alpha: float, n: int, k: int) -> float:
    """Smallest R² that is significant at level alpha for n points and k explanatory variables."""
    if n <= k + 1:
        raise DomainError(f"critical R² needs n > k + 1, got n={n}, k={k}")
    kf = k * f_critical(alpha, k, n - k - 1)
    return kf / (kf + (n - k - 1))


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Two-pass sample correlation; the n or n-1 normalisation cancels."""
    xs, ys = _paired(x, y, 3)
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("correlation is undefined for a constant series")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def t_stat_correlation(r: float, n: int) -> float:
    """|r| / sqrt((1 - r²)/(n - 2)), the t statistic for H0: rho = 0."""
    if not abs(r) < 1.0:
        raise DomainError(f"t statistic needs |r| < 1, got {r}")
    if n < 3:
        raise DomainError(f"t statistic needs n >= 3, got {n}")
    return abs(r) * math.sqrt((n - 2) / (1.0 - r * r))


def correlation_significant(r: float, n: int, alpha: float = 0.05) -> SignificanceResult:
    """Two-sided test of a correlation coefficient against zero."""
    t = t_stat_correlation(r, n)
    crit = t_critical(alpha, n - 2)
    return SignificanceResult(statistic=t, critical=crit, alpha=alpha, passed=t > crit, df=n - 2)
