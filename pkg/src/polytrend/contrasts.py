"""Williams- and Dunnett-type multiple contrast tests on dose-level factors."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import mvprob
from .glm import FittedModel
from .mmm import JointEstimate, JointTestResult, max_test


@dataclass
class ContrastMatrix:
    matrix: np.ndarray  # rows: contrasts, columns: group levels by ascending dose
    labels: tuple[str, ...]
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if not np.allclose(self.matrix.sum(axis=1), 0.0, atol=1e-12):
            raise ValueError("contrast rows must sum to zero")

    @property
    def n_groups(self) -> int:
        return self.matrix.shape[1]


def _level_names(k: int, levels: Sequence[str] | None) -> list[str]:
    if levels is None:
        return ["C"] + [f"D{i}" for i in range(1, k)]
    if len(levels) != k:
        raise ValueError(f"{len(levels)} level names for {k} groups")
    return [str(x) for x in levels]


def williams_matrix(k_groups: int, levels: Sequence[str] | None = None) -> ContrastMatrix:
    """Control vs. the average of the top r groups, r = 1 .. k-1."""
    if k_groups < 2:
        raise ValueError(f"need at least 2 groups, got {k_groups}")
    names = _level_names(k_groups, levels)
    rows, labels = [], []
    for r in range(1, k_groups):
        c = np.zeros(k_groups)
        c[0] = -1.0
        c[k_groups - r:] = 1.0 / r
        rows.append(c)
        labels.append(f"{'+'.join(names[k_groups - r:])} vs {names[0]}")
    return ContrastMatrix(np.array(rows), tuple(labels), tuple(names))


def dunnett_matrix(k_groups: int, levels: Sequence[str] | None = None) -> ContrastMatrix:
    """Each dose group against control."""
    if k_groups < 2:
        raise ValueError(f"need at least 2 groups, got {k_groups}")
    names = _level_names(k_groups, levels)
    m = np.hstack([-np.ones((k_groups - 1, 1)), np.eye(k_groups - 1)])
    return ContrastMatrix(m, tuple(f"{n}-{names[0]}" for n in names[1:]), tuple(names))


def coefficient_contrasts(
    C: ContrastMatrix, level_index: Sequence[int | None], n_coef: int
) -> np.ndarray:
    """Map group-mean contrasts to the coefficient scale.

    ``level_index[g]`` is the coefficient holding group g's mean (cell-means
    coding) or its difference from the reference (treatment coding, where the
    reference level maps to None). Intercepts cancel because rows sum to zero.
    """
    if len(level_index) != C.n_groups:
        raise ValueError(f"{len(level_index)} level positions for {C.n_groups} contrast columns")
    K = np.zeros((C.matrix.shape[0], n_coef))
    for g, j in enumerate(level_index):
        if j is None:
            continue
        if not 0 <= j < n_coef:
            raise ValueError(f"coefficient index {j} out of range for {n_coef} coefficients")
        K[:, j] += C.matrix[:, g]
    return K


def contrast_test(
    model: FittedModel,
    C: ContrastMatrix,
    level_index: Sequence[int | None],
    alpha: float = 0.05,
    alternative: str = "greater",
    reference: str = "normal",
    accuracy: float = mvprob.DEFAULT_ACCURACY,
    seed: int = mvprob.DEFAULT_SEED,
) -> JointTestResult:
    """One-sided max test over K beta with covariance K cov K'."""
    if alternative != "greater":
        raise ValueError("only the one-sided 'greater' alternative is supported")
    K = coefficient_contrasts(C, level_index, model.coefficients.size)
    est = K @ model.coefficients
    cov = K @ model.covariance @ K.T
    se = np.sqrt(np.diag(cov))
    R = cov / np.outer(se, se)
    np.fill_diagonal(R, 1.0)
    joint = JointEstimate(
        labels=C.labels,
        estimates=est,
        joint_covariance=cov,
        correlation=(R + R.T) / 2,
        z_statistics=est / se,
        df=model.residual_df,
    )
    return max_test(joint, alpha, reference, accuracy, seed)


def factor_design(levels, order: Sequence[str] | None = None, coding: str = "treatment"):
    """Indicator columns for a dose-level factor.

    Returns (columns, level order, level_index). ``treatment`` drops the first
    (control) level and expects an intercept elsewhere; ``cell_means`` keeps
    one column per level.
    """
    levels = np.asarray(levels, dtype=object)
    order = list(order) if order is not None else sorted(dict.fromkeys(levels), key=str)
    missing = set(levels) - set(order)
    if missing:
        raise ValueError(f"levels {sorted(map(str, missing))} not in the level order")
    cols = np.column_stack([(levels == lv).astype(float) for lv in order])
    if coding == "cell_means":
        return cols, order, list(range(len(order)))
    if coding == "treatment":
        return cols[:, 1:], order, [None] + list(range(len(order) - 1))
    raise ValueError(f"unknown coding {coding!r}")


def level_gaps(blocks: np.ndarray, levels: np.ndarray, order: Sequence[str]) -> dict[str, list[str]]:
    """Levels missing from each block; reported, not fatal."""
    gaps = {}
    for b in dict.fromkeys(blocks):
        present = set(levels[blocks == b])
        absent = [lv for lv in order if lv not in present]
        if absent:
            gaps[str(b)] = absent
    if gaps:
        warnings.warn(f"dose levels missing per block: {gaps}", stacklevel=2)
    return gaps
