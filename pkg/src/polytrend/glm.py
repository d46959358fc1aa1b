"""Weighted binomial logistic regression fitted by IRLS."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

SEPARATION_BOUND = 30.0


class RankDeficientError(ValueError):
    pass


@dataclass
class DesignMatrix:
    matrix: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if self.matrix.shape[1] != len(self.labels):
            raise ValueError("one label per design column required")

    @property
    def shape(self):
        return self.matrix.shape

    @classmethod
    def trend(cls, score, extra=None, extra_labels=()) -> "DesignMatrix":
        """Intercept + dose score (+ optional nuisance columns)."""
        score = np.asarray(score, dtype=float)
        cols = [np.ones_like(score), score]
        if extra is not None:
            cols.extend(np.atleast_2d(np.asarray(extra, dtype=float).T))
        return cls(np.column_stack(cols), ("(Intercept)", "dose", *extra_labels))


def check_rank(X: np.ndarray) -> int:
    """Numerical rank via pivoted QR, tolerance 1e-10 * |R_11|."""
    if X.shape[0] < X.shape[1]:
        raise RankDeficientError(f"{X.shape[0]} rows for {X.shape[1]} coefficients")
    _, R, _ = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > 1e-10 * d[0])) if d.size and d[0] > 0 else 0
    if rank < X.shape[1]:
        raise RankDeficientError(f"design has rank {rank} < {X.shape[1]} columns")
    return rank


@dataclass
class FittedModel:
    """Estimates plus what the joint (mmm) machinery needs.

    ``score_contributions`` holds one row per observation (d loglik_i / d beta at
    the estimate); ``covariance`` is the model-based inverse information.
    """

    coefficients: np.ndarray
    covariance: np.ndarray
    score_contributions: np.ndarray
    residual_df: float
    converged: bool
    iterations: int
    labels: tuple[str, ...] = ()
    deviance: float = np.nan
    separated: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def information(self) -> np.ndarray:
        return np.linalg.inv(self.covariance)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def z(self, index: int = 1) -> float:
        return float(self.coefficients[index] / self.std_errors[index])


def _loglik(y, f, mu, w):
    return float(np.sum(w * (special.xlogy(y, mu) + special.xlogy(f, 1.0 - mu))))


def binomial_loglik(beta, X, successes, failures, prior_weights=None) -> float:
    """Weighted binomial log-likelihood without the combinatorial constant."""
    w = np.ones(len(successes)) if prior_weights is None else np.asarray(prior_weights, float)
    mu = special.expit(np.asarray(X) @ beta)
    return _loglik(np.asarray(successes, float), np.asarray(failures, float), mu, w)


def _deviance(y, f, mu, w):
    n = y + f
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(y > 0, special.xlogy(y, y / (n * mu)), 0.0)
        t2 = np.where(f > 0, special.xlogy(f, f / (n * (1 - mu))), 0.0)
    return float(2.0 * np.sum(w * (t1 + t2)))


def fit_binomial_glm(
    design,
    successes,
    failures,
    prior_weights=None,
    tol: float = 1e-10,
    max_iter: int = 100,
    start=None,
) -> FittedModel:
    """Maximum likelihood logistic regression for (possibly non-integer) counts.

    Each IRLS step solves the weighted least-squares problem by pivoted QR and
    is halved while the deviance increases. Non-convergence and separation are
    flagged on the result rather than raised.
    """
    if isinstance(design, DesignMatrix):
        X, labels = design.matrix, design.labels
    else:
        X = np.atleast_2d(np.asarray(design, dtype=float))
        labels = tuple(f"x{j}" for j in range(X.shape[1]))
    y = np.asarray(successes, dtype=float)
    f = np.asarray(failures, dtype=float)
    w = np.ones_like(y) if prior_weights is None else np.asarray(prior_weights, dtype=float)
    if not (X.shape[0] == y.size == f.size == w.size):
        raise ValueError("design, successes, failures and weights must align")
    if np.any(y < 0) or np.any(f < 0):
        raise ValueError("successes and failures must be nonnegative")
    if np.any(w <= 0):
        raise ValueError("prior weights must be positive")
    n = y + f
    if np.any(n <= 0):
        raise ValueError("each row needs a positive total")
    check_rank(X)

    if start is None:
        # start from the empirical logits, pulled away from 0 and 1
        p0 = (y + 0.5) / (n + 1.0)
        eta = special.logit(p0)
        beta = None
    else:
        beta = np.asarray(start, dtype=float)
        eta = X @ beta
    mu = special.expit(eta)
    dev = _deviance(y, f, mu, w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        var = np.maximum(mu * (1 - mu), 1e-300)
        ww = w * n * var
        z = eta + (y / n - mu) / var
        sw = np.sqrt(ww)
        Q, R, piv = linalg.qr(sw[:, None] * X, mode="economic", pivoting=True)
        coef = np.empty(X.shape[1])
        coef[piv] = linalg.solve_triangular(R, Q.T @ (sw * z))
        step = coef if beta is None else coef - beta
        base = np.zeros_like(coef) if beta is None else beta
        for _ in range(30):
            cand = base + step
            mu_c = special.expit(X @ cand)
            dev_c = _deviance(y, f, mu_c, w)
            if beta is None or dev_c <= dev * (1 + 1e-12) + 1e-12:
                break
            step = step / 2
        beta, mu, eta = cand, mu_c, X @ cand
        dev_old, dev = dev, dev_c
        if abs(dev - dev_old) / (abs(dev) + 0.1) < tol:
            converged = True
            break

    var = mu * (1 - mu)
    info = X.T @ ((w * n * var)[:, None] * X)
    cov = linalg.inv(info)
    cov = (cov + cov.T) / 2
    scores = X * (w * (y - n * mu))[:, None]
    separated = bool(np.max(np.abs(beta)) > SEPARATION_BOUND)
    return FittedModel(
        coefficients=beta,
        covariance=cov,
        score_contributions=scores,
        residual_df=float(X.shape[0] - X.shape[1]),
        converged=converged,
        iterations=it,
        labels=tuple(labels),
        deviance=dev,
        separated=separated,
        diagnostics={"loglik": _loglik(y, f, mu, w)},
    )


def profile_deviance(model: FittedModel, design, successes, failures, prior_weights=None) -> float:
    """-2 * log-likelihood at the fitted coefficients."""
    X = design.matrix if isinstance(design, DesignMatrix) else np.asarray(design, float)
    return -2.0 * binomial_loglik(model.coefficients, X, successes, failures, prior_weights)


def residual_deviance(model: FittedModel, design, successes, failures, prior_weights=None) -> float:
    """Deviance against the saturated model (zero for a saturated fit)."""
    X = design.matrix if isinstance(design, DesignMatrix) else np.asarray(design, float)
    y = np.asarray(successes, float)
    f = np.asarray(failures, float)
    w = np.ones_like(y) if prior_weights is None else np.asarray(prior_weights, float)
    return _deviance(y, f, special.expit(X @ model.coefficients), w)
