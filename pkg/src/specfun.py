"""Special functions used by the distribution models and the significance tests.

J0 and the regularized incomplete beta come from scipy.special (Cephes
implementations); t and F critical values are found by bracketing the
upper-tail probability, which is expressed through the incomplete beta.
"""

import math

import numpy as np
from scipy import optimize, special

from src.errors import DomainError

J0_FIRST_ZERO = 2.404825557695773
_QUANTILE_XTOL = 1e-13


def bessel_j0(x):
    """Zero-order Bessel function of the first kind; accepts scalars or arrays."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("bessel_j0 requires finite input")
    result = special.j0(arr)
    return float(result) if result.ndim == 0 else result


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not (math.isfinite(x) and 0.0 <= x <= 1.0):
        raise DomainError(f"reg_inc_beta needs 0 <= x <= 1, got {x}")
    if not (a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b)):
        raise DomainError(f"reg_inc_beta needs a, b > 0, got a={a}, b={b}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    return float(special.betainc(a, b, x))


def _check_quantile_args(alpha: float, *dfs: int) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    for df in dfs:
        if isinstance(df, bool) or int(df) != df or df < 1:
            raise DomainError(f"degrees of freedom must be integers >= 1, got {df}")


def t_two_sided_tail(q: float, df: int) -> float:
    """P(|T_df| > q) for q >= 0."""
    return reg_inc_beta(df / (df + q * q), df / 2.0, 0.5)


def f_upper_tail(q: float, df1: int, df2: int) -> float:
    """P(F_{df1,df2} > q) for q >= 0."""
    return reg_inc_beta(df2 / (df2 + df1 * q), df2 / 2.0, df1 / 2.0)


def _invert_tail(tail, alpha: float) -> float:
    hi = 1.0
    while tail(hi) > alpha:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError(f"could not bracket the quantile for alpha={alpha}")
    return float(optimize.brentq(lambda q: tail(q) - alpha, 0.0, hi, xtol=_QUANTILE_XTOL, rtol=4 * np.finfo(float).eps))


def t_critical(alpha_two_sided: float, df: int) -> float:
    """q with P(|T_df| > q) = alpha_two_sided."""
    _check_quantile_args(alpha_two_sided, df)
    return _invert_tail(lambda q: t_two_sided_tail(q, int(df)), alpha_two_sided)


def f_critical(alpha: float, df1: int, df2: int) -> float:
    """q with P(F_{df1,df2} > q) = alpha."""
    _check_quantile_args(alpha, df1, df2)
    return _invert_tail(lambda q: f_upper_tail(q, int(df1), int(df2)), alpha)
