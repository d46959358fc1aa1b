"""Multiple marginal models: joint distribution of slopes and the max test."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import mvprob
from .glm import FittedModel


class JointError(ValueError):
    pass


@dataclass
class JointEstimate:
    labels: tuple[str, ...]
    estimates: np.ndarray
    joint_covariance: np.ndarray
    correlation: np.ndarray
    z_statistics: np.ndarray
    sandwich_covariance: np.ndarray | None = None
    df: float = np.inf

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.joint_covariance))


@dataclass
class JointTestResult:
    joint: JointEstimate
    t_max: float
    adjusted_p: np.ndarray
    unadjusted_p: np.ndarray
    critical_value: float
    simultaneous_lower_bounds: np.ndarray
    alpha: float
    reference: str = "normal"
    mvn_error: float = 0.0

    @property
    def min_p(self) -> float:
        return float(np.min(self.adjusted_p))

    def to_dict(self) -> dict:
        j = self.joint
        return {
            "labels": list(j.labels),
            "estimates": _floats(j.estimates),
            "std_errors": _floats(j.std_errors),
            "z_statistics": _floats(j.z_statistics),
            "correlation": [_floats(r) for r in j.correlation],
            "t_max": _float(self.t_max),
            "adjusted_p": _floats(self.adjusted_p),
            "unadjusted_p": _floats(self.unadjusted_p),
            "critical_value": _float(self.critical_value),
            "simultaneous_lower_bounds": _floats(self.simultaneous_lower_bounds),
            "alpha": self.alpha,
            "reference": self.reference,
            "df": None if np.isinf(j.df) else float(j.df),
        }


def _float(x):
    x = float(x)
    return None if not np.isfinite(x) else round(x, 12)


def _floats(xs):
    return [_float(x) for x in xs]


def _cov_to_corr(S: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.clip(np.diag(S), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        R = S / np.outer(sd, sd)
    R = np.where(np.isfinite(R), R, 0.0)
    R = np.clip((R + R.T) / 2, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return R


def stack_models(
    models: Sequence[FittedModel],
    coefficient_index: int | Sequence[int] = 1,
    labels: Sequence[str] = ("ari", "ord", "arilog"),
) -> JointEstimate:
    """Joint distribution of the dose slopes of several fits to the same rows.

    The influence of observation i on model m is J_m^-1 psi_mi; cross-products of
    row-matched influences give the sandwich covariance. Its correlation is
    paired with the models' own (inverse information) variances.
    """
    models = list(models)
    if len(models) < 1:
        raise JointError("no models to stack")
    if isinstance(coefficient_index, int):
        coefficient_index = [coefficient_index] * len(models)
    if len(labels) != len(models):
        labels = tuple(f"m{i}" for i in range(len(models)))
    rows = {m.score_contributions.shape[0] for m in models}
    if len(rows) != 1:
        raise JointError(f"models are fitted on different row counts: {sorted(rows)}")
    for lab, m in zip(labels, models):
        if not m.converged:
            raise JointError(f"model {lab!r} did not converge")

    # influence contributions of every observation on each slope
    infl = np.column_stack(
        [m.score_contributions @ m.covariance[:, k] for m, k in zip(models, coefficient_index)]
    )
    sandwich = infl.T @ infl
    R = _cov_to_corr(sandwich)
    est = np.array([m.coefficients[k] for m, k in zip(models, coefficient_index)])
    var = np.array([m.covariance[k, k] for m, k in zip(models, coefficient_index)])
    se = np.sqrt(var)
    cov = R * np.outer(se, se)
    return JointEstimate(
        labels=tuple(labels),
        estimates=est,
        joint_covariance=cov,
        correlation=R,
        z_statistics=est / se,
        sandwich_covariance=sandwich,
        df=float(min(m.residual_df for m in models)),
    )


def max_test(
    joint: JointEstimate,
    alpha: float = 0.05,
    reference: str = "normal",
    accuracy: float = mvprob.DEFAULT_ACCURACY,
    seed: int = mvprob.DEFAULT_SEED,
    with_bounds: bool = True,
) -> JointTestResult:
    """One-sided (increasing trend) single-step max test.

    adjusted p_j = 1 - P(Z_k <= z_j for all k) under the joint reference.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if reference == "normal":
        df = None
    elif reference == "t":
        df = joint.df if joint.df > 0 else None
        if df is None:
            raise JointError("t reference needs positive residual df")
    else:
        raise ValueError(f"unknown reference {reference!r}")
    R = joint.correlation
    z = np.asarray(joint.z_statistics, dtype=float)
    d = z.size
    adj = np.empty(d)
    err = 0.0
    for j in range(d):
        if not np.isfinite(z[j]):
            adj[j] = 0.0 if z[j] > 0 else 1.0
            continue
        r = mvprob.mvn_rectangle(-np.inf, np.full(d, z[j]), R, accuracy, seed, df)
        adj[j] = 1.0 - r.value
        err = max(err, r.error)
    if df is None:
        unadj = mvprob.norm_sf(z)
    else:
        unadj = 1.0 - mvprob.t_cdf(z, df)
    # the joint tail can never be below the marginal one; trims QMC noise
    adj = np.clip(np.maximum(adj, unadj), 0.0, 1.0)
    if with_bounds:
        c = mvprob.equicoordinate_quantile(R, 1 - alpha, max(accuracy, 1e-4), seed, df)
        lower = joint.estimates - c * joint.std_errors
    else:
        c, lower = np.nan, np.full(d, np.nan)
    return JointTestResult(
        joint=joint,
        t_max=float(np.max(z)),
        adjusted_p=adj,
        unadjusted_p=np.asarray(unadj, dtype=float),
        critical_value=float(c),
        simultaneous_lower_bounds=lower,
        alpha=alpha,
        reference=reference,
        mvn_error=err,
    )
