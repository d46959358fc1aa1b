"""End-to-end analyses: mixed, per-study, fixed, pooled, Fisher and contrast approaches."""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__, mvprob
from .contrasts import (
    contrast_test,
    dunnett_matrix,
    factor_design,
    level_gaps,
    williams_matrix,
)
from .data_model import SCORINGS, DataError, ScoredDataset
from .glm import DesignMatrix, FittedModel, fit_binomial_glm
from .lmm import RandomEffects, fit_binomial_pql, mixed_to_fixed
from .mmm import JointTestResult, max_test, stack_models

APPROACHES = (
    "mixed",
    "per_study",
    "fixed",
    "pooled",
    "fisher",
    "williams",
    "williams_pooled",
    "dunnett_polyk",
)
COLUMN_PREFIX = {
    "mixed": "Mix",
    "per_study": "Only",
    "pooled": "Pool",
    "fixed": "Fix",
    "fisher": "Fish",
    "williams": "Wil",
    "williams_pooled": "WiP",
    "dunnett_polyk": "Dun",
}


class AnalysisError(RuntimeError):
    """A model could not be fitted or tested (CLI exit code 3)."""


@dataclass(frozen=True)
class AnalysisConfig:
    approach: str = "per_study"
    adjustment: str = "none"
    polyk: float | None = None
    alpha: float = 0.05
    scorings: tuple[str, ...] = SCORINGS
    random_slope: str = "ari_always"  # or "match"
    random_terms: str = "intercept_plus_slope"
    covariance_structure: str = "unstructured"
    reference: str = "normal"
    group_by: str = "study"
    fisher_scoring: str = "arilog"
    accuracy: float = mvprob.DEFAULT_ACCURACY
    seed: int = mvprob.DEFAULT_SEED
    bounds: bool = True

    def __post_init__(self):
        if self.approach not in APPROACHES:
            raise ValueError(f"unknown approach {self.approach!r}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.scorings or any(s not in SCORINGS for s in self.scorings):
            raise ValueError(f"scorings must be a nonempty subset of {SCORINGS}")
        if self.random_slope not in ("ari_always", "match"):
            raise ValueError(f"unknown random slope policy {self.random_slope!r}")
        if self.reference not in ("normal", "t"):
            raise ValueError(f"unknown reference {self.reference!r}")
        if self.polyk is not None and not self.polyk > 0:
            raise ValueError("poly-k exponent must be positive")


@dataclass
class FisherResult:
    statistic: float
    df: int
    p: float
    inputs: dict[str, float]

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "df": self.df, "p": self.p, "inputs": self.inputs}


@dataclass
class ApproachResult:
    approach: str
    tests: dict[str, JointTestResult] = field(default_factory=dict)
    fisher: FisherResult | None = None
    single_cell: bool = False
    notes: dict = field(default_factory=dict)

    def cells(self) -> dict[str, dict[str, float]]:
        if self.fisher is not None:
            return {COLUMN_PREFIX["fisher"]: {"global": self.fisher.p}}
        out = {}
        for col, res in self.tests.items():
            if self.single_cell:
                out[col] = {"global": res.min_p}
            else:
                out[col] = {lab: float(p) for lab, p in zip(res.joint.labels, res.adjusted_p)}
        return out


# ------------------------------------------------------------------ helpers


def canonical_order(data: ScoredDataset) -> ScoredDataset:
    """Rows sorted by content so results do not depend on input order."""
    keys = [
        data.failures,
        data.successes,
        data.dose,
        np.array([str(s) for s in data.stratum]),
        np.array([str(s) for s in data.study]),
    ]
    if data.polyk_weight is not None:
        keys.insert(0, data.polyk_weight)
    if data.death_time is not None:
        keys.insert(0, data.death_time)
    if data.level is not None:
        keys.insert(0, np.array([str(s) for s in data.level]))
    return data.subset(np.lexsort(keys))


def _weights(data: ScoredDataset, cfg: AnalysisConfig):
    if cfg.polyk is not None and data.polyk_weight is None:
        raise DataError("poly-k analysis requested but no weights (animal-level data with death times)")
    return data.prior_weights


def _check_fit(m: FittedModel, what: str) -> FittedModel:
    if not m.converged:
        raise AnalysisError(f"{what}: fit did not converge after {m.iterations} iterations")
    return m


def _trend_models(data, cfg, extra=None, extra_labels=()) -> list[FittedModel]:
    w = _weights(data, cfg)
    out = []
    for s in cfg.scorings:
        X = DesignMatrix.trend(data.score(s), extra, extra_labels)
        out.append(_check_fit(fit_binomial_glm(X, data.successes, data.failures, w), s))
    return out


def _joint_test(models, cfg) -> JointTestResult:
    joint = stack_models(models, 1, cfg.scorings)
    return max_test(joint, cfg.alpha, cfg.reference, cfg.accuracy, cfg.seed, cfg.bounds)


def _indicators(labels: np.ndarray):
    levels = list(dict.fromkeys(labels))
    if len(levels) < 2:
        return None, ()
    cols = np.column_stack([(labels == lv).astype(float) for lv in levels[1:]])
    return cols, tuple(f"group[{lv}]" for lv in levels[1:])


def _level_order(data: ScoredDataset) -> list[str]:
    # order labels by their typical within-block dose rank
    lv = data.level
    med = {x: float(np.median(data.score_ord[lv == x])) for x in dict.fromkeys(lv)}
    return sorted(med, key=lambda x: (med[x], str(x)))


def _n_groups(data, by) -> int:
    return len(set(data.grouping(by)))


# ---------------------------------------------------------------- approaches


def _mixed(data, cfg, terms=None) -> JointTestResult:
    groups = data.grouping(cfg.group_by)
    if len(set(groups)) < 2:
        raise DataError(f"mixed model needs at least 2 levels of {cfg.group_by!r}")
    w = _weights(data, cfg)
    terms = terms or cfg.random_terms
    models = []
    for s in cfg.scorings:
        slope = None
        if terms == "intercept_plus_slope":
            slope = data.score("ari" if cfg.random_slope == "ari_always" else s)
        rnd = RandomEffects.from_arrays(groups, slope, cfg.covariance_structure)
        fit = fit_binomial_pql(DesignMatrix.trend(data.score(s)), rnd, data.successes, data.failures, w)
        if not fit.converged:
            raise AnalysisError(f"PQL fit for {s} scoring did not converge")
        models.append(mixed_to_fixed(fit))
    return _joint_test(models, cfg)


def _per_study(data, cfg) -> dict[str, JointTestResult]:
    return {b: _joint_test(_trend_models(sub, cfg), cfg) for b, sub in data.blocks().items()}


def run_factor_contrast(
    data: ScoredDataset, cfg: AnalysisConfig, family: str = "williams", pooled: bool = False
) -> JointTestResult:
    """Williams- or Dunnett-type test on the user-supplied ``level`` factor.

    Logistic model with treatment coding (control level as reference) plus,
    unless ``pooled``, indicator columns for ``cfg.group_by``.
    """
    if data.level is None:
        raise DataError("contrast approaches need a user-supplied 'level' column")
    order = _level_order(data)
    cols, order, idx = factor_design(data.level, order, "treatment")
    labels = [f"level[{lv}]" for lv in order[1:]]
    if not pooled:
        level_gaps(data.study, data.level, order)
        ind, ind_labels = _indicators(data.grouping(cfg.group_by))
        if ind is not None:
            cols = np.column_stack([cols, ind])
            labels += list(ind_labels)
    X = DesignMatrix(np.column_stack([np.ones(len(data)), cols]), ("(Intercept)", *labels))
    m = _check_fit(fit_binomial_glm(X, data.successes, data.failures, _weights(data, cfg)), family)
    if family == "williams":
        C = williams_matrix(len(order), order)
    elif family == "dunnett":
        C = dunnett_matrix(len(order), order)
    else:
        raise ValueError(f"unknown contrast family {family!r}")
    # coefficient positions shift by one for the intercept
    pos = [None if i is None else i + 1 for i in idx]
    return contrast_test(m, C, pos, cfg.alpha, "greater", cfg.reference, cfg.accuracy, cfg.seed)


def _dunnett_polyk(data, cfg) -> JointTestResult:
    if data.kind != "animal" or data.polyk_weight is None:
        raise DataError("dunnett_polyk needs animal-level data with poly-k weights")
    groups = data.grouping(cfg.group_by)
    if len(set(groups)) < 2:
        raise DataError(f"mixed model needs at least 2 levels of {cfg.group_by!r}")
    doses = sorted(set(data.dose))
    labels = np.array([f"{d:g}" for d in data.dose], dtype=object)
    order = [f"{d:g}" for d in doses]
    cols, order, idx = factor_design(labels, order, "cell_means")
    X = DesignMatrix(cols, tuple(f"dose[{lv}]" for lv in order))
    rnd = RandomEffects.from_arrays(groups)
    fit = fit_binomial_pql(X, rnd, data.successes, data.failures, data.polyk_weight)
    if not fit.converged:
        raise AnalysisError("poly-k Dunnett PQL fit did not converge")
    model = mixed_to_fixed(fit, normalize_index=None)
    names = ["C"] + [f"D{i}" for i in range(1, len(order))]
    C = dunnett_matrix(len(order), names)
    return contrast_test(model, C, idx, cfg.alpha, "greater", cfg.reference, cfg.accuracy, cfg.seed)


def fisher_combination(pvalues: dict[str, float]) -> FisherResult:
    """Fisher's sum-of-logs: X = -2 sum ln p_i ~ chi2 with 2m df under H0."""
    if not pvalues:
        raise ValueError("no p-values to combine")
    p = np.array(list(pvalues.values()), dtype=float)
    if np.any((p <= 0) | (p > 1)):
        raise ValueError("p-values must lie in (0, 1]")
    x = float(-2.0 * np.sum(np.log(p)))
    df = 2 * p.size
    return FisherResult(x, df, mvprob.chi2_sf(x, df), dict(pvalues))


def run_approach(data: ScoredDataset, cfg: AnalysisConfig) -> ApproachResult:
    data = canonical_order(data)
    a = cfg.approach
    # fixed and fisher degrade gracefully to pooled / single-study with one study
    if a == "mixed" and _n_groups(data, cfg.group_by) < 2:
        raise DataError(f"approach {a!r} needs at least 2 studies")
    prefix = COLUMN_PREFIX[a]
    if a == "mixed":
        return ApproachResult(a, {prefix: _mixed(data, cfg)})
    if a == "per_study":
        res = _per_study(data, cfg)
        return ApproachResult(a, {prefix + b.replace(":", ""): r for b, r in res.items()})
    if a == "pooled":
        return ApproachResult(a, {prefix: _joint_test(_trend_models(data, cfg), cfg)})
    if a == "fixed":
        ind, labels = _indicators(data.grouping(cfg.group_by))
        return ApproachResult(a, {prefix: _joint_test(_trend_models(data, cfg, ind, labels), cfg)})
    if a == "fisher":
        sub = replace(cfg, scorings=SCORINGS, bounds=False)
        res = _per_study(data, sub)
        k = SCORINGS.index(cfg.fisher_scoring)
        fr = fisher_combination({b: float(r.adjusted_p[k]) for b, r in res.items()})
        return ApproachResult(a, res, fisher=fr)
    if a in ("williams", "williams_pooled"):
        res = run_factor_contrast(data, cfg, "williams", pooled=a == "williams_pooled")
        return ApproachResult(a, {prefix: res}, single_cell=True)
    if a == "dunnett_polyk":
        return ApproachResult(a, {prefix: _dunnett_polyk(data, cfg)}, single_cell=True)
    raise ValueError(a)


def run_polyk_joint(data: ScoredDataset, cfg: AnalysisConfig) -> JointTestResult:
    """Joint Tukey test on poly-k weighted animal data, random intercept per group."""
    if data.kind != "animal" or data.polyk_weight is None:
        raise DataError("poly-k joint test needs animal-level data with poly-k weights")
    data = canonical_order(data)
    if cfg.polyk is None:
        cfg = replace(cfg, polyk=3.0)
    return _mixed(data, cfg, terms="intercept_only")


# ------------------------------------------------------------------ report


@dataclass
class ComparisonReport:
    rows: tuple[str, ...]
    columns: list[str]
    cells: dict[str, dict[str, float]]
    diagnostics: dict[str, str]
    details: dict[str, dict]
    metadata: dict

    def to_dict(self, meta: bool = True, estimates: bool = False) -> dict:
        out = {
            "rows": list(self.rows),
            "columns": list(self.columns),
            "cells": {c: {k: _round(v) for k, v in self.cells.get(c, {}).items()} for c in self.columns},
            "diagnostics": dict(self.diagnostics),
        }
        if estimates:
            out["details"] = self.details
        md = dict(self.metadata)
        if not meta:
            md.pop("timestamp", None)
        out["metadata"] = md
        return out

    def to_json(self, meta: bool = True, estimates: bool = False) -> str:
        return json.dumps(self.to_dict(meta, estimates), indent=2, sort_keys=False) + "\n"

    def to_text(self, digits: int = 4) -> str:
        head = ["Model"] + self.columns
        lines = []
        for i, r in enumerate(self.rows):
            line = [r]
            for c in self.columns:
                if c in self.diagnostics:
                    line.append("ERR" if i == 0 else "")
                    continue
                cell = self.cells.get(c, {})
                v = cell.get(r, cell.get("global") if i == 0 else None)
                line.append("" if v is None else f"{v:.{digits}f}")
            lines.append(line)
        widths = [max(len(str(x)) for x in col) for col in zip(head, *lines)]
        fmt = "  ".join(f"{{:>{w}}}" for w in widths)
        text = [fmt.format(*head)] + [fmt.format(*ln) for ln in lines]
        for c, msg in self.diagnostics.items():
            text.append(f"# {c}: {msg}")
        return "\n".join(text) + "\n"


def _round(v):
    return None if v is None or not np.isfinite(v) else round(float(v), 12)


def compare_all(
    data: ScoredDataset, cfgs: Sequence[AnalysisConfig], timestamp: bool = True
) -> ComparisonReport:
    """Run each configured approach; failures are recorded per column, not raised."""
    cfgs = list(cfgs)
    if not cfgs:
        raise ValueError("nothing to compare: empty approach list")
    rows = tuple(cfgs[0].scorings)
    columns, cells, diagnostics, details = [], {}, {}, {}
    for cfg in cfgs:
        try:
            res = run_approach(data, cfg)
        except (DataError, AnalysisError, ArithmeticError, ValueError, RuntimeError) as exc:
            col = COLUMN_PREFIX[cfg.approach]
            columns.append(col)
            diagnostics[col] = f"{type(exc).__name__}: {exc}"
            continue
        for col, cell in res.cells().items():
            columns.append(col)
            cells[col] = cell
        for col, t in res.tests.items():
            if res.fisher is None:
                details[col] = {
                    "estimates": [_round(x) for x in t.joint.estimates],
                    "lower_bounds": [_round(x) for x in t.simultaneous_lower_bounds],
                }
        if res.fisher is not None:
            details[COLUMN_PREFIX["fisher"]] = res.fisher.to_dict()
    metadata = {
        "dataset_hash": canonical_order(data).fingerprint(),
        "n_rows": len(data),
        "kind": data.kind,
        "adjustment": data.adjustment,
        "arilog_zero": str(data.arilog_rule),
        "configs": [_cfg_dict(c) for c in cfgs],
        "version": __version__,
        "numpy": np.__version__,
        "seed": cfgs[0].seed,
    }
    if timestamp:
        metadata["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return ComparisonReport(rows, columns, cells, diagnostics, details, metadata)


def _cfg_dict(cfg: AnalysisConfig) -> dict:
    d = asdict(cfg)
    d["scorings"] = list(d["scorings"])
    return d


def default_comparison(data: ScoredDataset, base: AnalysisConfig) -> list[AnalysisConfig]:
    """Every approach applicable to ``data``, in report column order."""
    order = ["mixed", "per_study", "pooled", "fixed", "fisher"]
    if data.level is not None:
        order += ["williams", "williams_pooled"]
    if data.kind == "animal" and data.polyk_weight is not None:
        order.append("dunnett_polyk")
    return [replace(base, approach=a) for a in order]
