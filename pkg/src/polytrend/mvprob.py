"""Multivariate normal and t rectangle probabilities.

Genz's separation-of-variables transform integrated with independently
scrambled Sobol' point sets. Everything is deterministic for a given seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special
from scipy.stats import qmc

DEFAULT_ACCURACY = 1e-5
DEFAULT_SEED = 20190725
MAX_DIM = 10
_N_SHIFTS = 16
_REGULARIZE = 1e-10


class CorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class MVNResult:
    value: float
    error: float
    n_points: int
    converged: bool
    regularized: bool = False


# ---------------------------------------------------------------- scalar


def norm_cdf(x):
    return special.ndtr(x)


def norm_sf(x):
    return special.ndtr(-np.asarray(x, dtype=float))


def norm_ppf(p):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probability outside [0, 1]")
    return special.ndtri(p)


def chi2_sf(x: float, df: float) -> float:
    """Upper tail P(X >= x) of a chi-square variable."""
    if df <= 0:
        raise ValueError(f"df must be positive, got {df}")
    if x <= 0:
        return 1.0
    return float(special.chdtrc(df, x))


def t_cdf(x, df: float):
    if df <= 0:
        raise ValueError(f"df must be positive, got {df}")
    return special.stdtr(df, x)


# ---------------------------------------------------------- correlation


def as_correlation(R) -> np.ndarray:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise CorrelationError("correlation matrix must be square")
    if R.shape[0] > MAX_DIM:
        raise CorrelationError(f"dimension {R.shape[0]} exceeds {MAX_DIM}")
    if not np.all(np.isfinite(R)):
        raise CorrelationError("correlation matrix has non-finite entries")
    if not np.allclose(R, R.T, atol=1e-10):
        raise CorrelationError("correlation matrix is not symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=1e-10):
        raise CorrelationError("correlation matrix needs a unit diagonal")
    if np.linalg.eigvalsh(R).min() < -1e-8:
        raise CorrelationError("correlation matrix is not positive semidefinite")
    return (R + R.T) / 2


def _semidefinite_cholesky(R: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    # zero pivots are kept as zero columns so singular R (perfect dependence) works
    d = R.shape[0]
    L = np.zeros_like(R)
    for j in range(d):
        s = R[j, j] - L[j, :j] @ L[j, :j]
        if s <= tol:
            continue
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, d):
            L[i, j] = (R[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def _prioritize(lower, upper, R):
    # narrowest marginal interval first; cheap stand-in for full Genz-Bretz ordering
    width = norm_cdf(upper) - norm_cdf(lower)
    order = np.argsort(width, kind="stable")
    return lower[order], upper[order], R[np.ix_(order, order)]


# ------------------------------------------------------------ integrand


def _integrand(w, lower, upper, L, df):
    """Genz transform evaluated at points ``w`` of shape (N, d) in [0, 1)."""
    n, d = w.shape[0], lower.size
    if df is None:
        scale = np.ones(n)
        u = w
    else:
        scale = np.sqrt(special.chdtri(df, 1.0 - np.clip(w[:, 0], 1e-15, 1 - 1e-15)) / df)
        u = w[:, 1:]
    f = np.ones(n)
    y = np.zeros((n, d))
    for i in range(d):
        t = y[:, :i] @ L[i, :i] if i else np.zeros(n)
        a = lower[i] * scale - t
        b = upper[i] * scale - t
        if L[i, i] == 0.0:
            f *= (a <= 0) & (0 <= b)
            continue
        da = norm_cdf(a / L[i, i])
        eb = norm_cdf(b / L[i, i])
        f = f * (eb - da)
        if i < d - 1:
            q = da + u[:, i] * (eb - da)
            y[:, i] = norm_ppf(np.clip(q, 1e-300, 1 - 1e-16))
    return f


@lru_cache(maxsize=128)
def _point_sets(seed: int, dim: int, n: int) -> np.ndarray:
    streams = np.random.SeedSequence(seed).spawn(_N_SHIFTS)
    m = int(np.log2(n))
    pts = np.stack(
        [qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(s)).random_base2(m) for s in streams]
    )
    pts.setflags(write=False)
    return pts


def _prepare(lower, upper, R, df):
    R = as_correlation(R)
    d = R.shape[0]
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (d,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (d,)).copy()
    if df is not None and not df > 0:
        raise ValueError(f"df must be positive, got {df}")
    if df is not None and np.isinf(df):
        df = None
    return lower, upper, R, df


def _factor(R):
    L = _semidefinite_cholesky(R)
    if np.any(np.diag(L) == 0.0) and np.linalg.eigvalsh(R).min() > 0:
        return _semidefinite_cholesky(R + _REGULARIZE * np.eye(R.shape[0])), True
    return L, False


def _estimate(lower, upper, L, df, seed, n):
    dim = lower.size - 1 + (df is not None)
    pts = _point_sets(seed, dim, n)
    vals = _integrand(pts.reshape(-1, dim), lower, upper, L, df).reshape(_N_SHIFTS, n).mean(axis=1)
    return float(vals.mean()), float(3.0 * vals.std(ddof=1) / np.sqrt(_N_SHIFTS))


def mvn_rectangle(
    lower,
    upper,
    R,
    accuracy: float = DEFAULT_ACCURACY,
    seed: int = DEFAULT_SEED,
    df: float | None = None,
    max_points: int = 2**16,
) -> MVNResult:
    """P(lower <= X <= upper) for X ~ N(0, R), or multivariate t when ``df`` is set.

    The error is three standard errors across the independent scramblings;
    ``max_points`` caps the points per scrambling.
    """
    lower, upper, R, df = _prepare(lower, upper, R, df)
    if np.any(lower > upper):
        return MVNResult(0.0, 0.0, 0, True)
    d = R.shape[0]
    if d == 1:
        cdf = norm_cdf if df is None else (lambda x: t_cdf(x, df))
        return MVNResult(float(cdf(upper[0]) - cdf(lower[0])), 0.0, 0, True)

    lower, upper, R = _prioritize(lower, upper, R)
    L, regularized = _factor(R)
    n = 256
    while True:
        value, err = _estimate(lower, upper, L, df, seed, n)
        if err <= accuracy or n >= max_points:
            break
        n *= 2
    value = float(np.clip(value, 0.0, 1.0))
    return MVNResult(value, err, n * _N_SHIFTS, bool(err <= accuracy), regularized)


def equicoordinate_quantile(
    R,
    prob: float,
    accuracy: float = 1e-4,
    seed: int = DEFAULT_SEED,
    df: float | None = None,
) -> float:
    """Cutoff c with P(X_j <= c for all j) = prob."""
    if not 0 < prob < 1:
        raise ValueError(f"prob must lie in (0, 1), got {prob}")
    R = as_correlation(R)
    d = R.shape[0]

    def marginal_ppf(p):
        return float(norm_ppf(p) if df is None or np.isinf(df) else special.stdtrit(df, p))

    # the answer lies between the fully dependent and the Bonferroni cutoffs
    lo = marginal_ppf(prob) - 1e-6
    hi = marginal_ppf(1 - (1 - prob) / d) + 1e-6

    if d == 1:
        return marginal_ppf(prob)
    # fix the point set once so the estimate is a smooth function of c
    n_points = mvn_rectangle(-np.inf, np.full(d, (lo + hi) / 2), R, accuracy, seed, df).n_points
    n = max(n_points // _N_SHIFTS, 256)
    ones = np.ones(d)
    L, _ = _factor(R)

    def gap(c):
        return _estimate(-np.inf * ones, c * ones, L, df, seed, n)[0] - prob

    # integration noise can push an endpoint across the target; clamp to it
    if gap(lo) >= 0:
        return lo
    if gap(hi) <= 0:
        return hi
    return float(optimize.brentq(gap, lo, hi, xtol=1e-8))
