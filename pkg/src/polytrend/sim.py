"""Size and power simulation for the trend-test approaches.

Every replicate draws from its own Philox stream keyed by (seed, replicate,
stream), so results do not depend on execution order or worker count.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from .data_model import (
    AnimalRecord,
    DoseRecord,
    compute_dose_scores,
    compute_polyk_weights,
)
from .pipelines import AnalysisConfig, run_approach, run_factor_contrast

SHAPES = ("flat", "linear-logit", "plateau", "loglinear")
SIM_APPROACHES = (
    "per_study",
    "mixed",
    "fixed",
    "pooled",
    "fisher",
    "williams",
    "williams_pooled",
    "dunnett_pooled",
    "polyk_joint",
)
STUDY_LENGTH = 730.0
FAILURE_FLAG = 0.05

_STREAM_EFFECTS, _STREAM_OUTCOME, _STREAM_DEATH = 0, 1, 2


@dataclass(frozen=True)
class Scenario:
    """One simulation design.

    ``effect`` is the logit-scale increase at the top dose; ``shape`` spreads it
    over the dose range. ``mortality`` holds one exponential hazard (per study
    length) per dose group and switches to animal-level data, where a tumor
    present at death is seen with probability p * (t / T)**3.
    """

    n_studies: int = 1
    doses: tuple = (0.0, 100.0, 300.0, 1000.0)
    group_sizes: tuple = (50, 50, 50, 50)
    control_rate: float = 0.1
    shape: str = "flat"
    effect: float = 0.0
    sd_intercept: float = 0.0
    sd_slope: float = 0.0
    mortality: tuple | None = None
    replications: int = 1000
    seed: int = 1
    alpha: float = 0.05
    adjustment: str = "none"
    polyk: float = 3.0

    def __post_init__(self):
        if not 0 < self.control_rate < 1:
            raise ValueError("control_rate must lie in (0, 1)")
        if self.replications < 100:
            raise ValueError("replications must be at least 100")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        if self.n_studies < 1:
            raise ValueError("n_studies must be positive")
        doses = self.dose_table()
        sizes = self.size_table()
        for d, n in zip(doses, sizes):
            if len(d) != len(n):
                raise ValueError("doses and group_sizes must align per study")
            if d[0] != 0 or len(d) < 3 or np.any(np.diff(d) <= 0):
                raise ValueError("doses must start at 0, increase, and have at least 3 levels")
        if self.mortality is not None and len(self.mortality) != len(doses[0]):
            raise ValueError("one mortality hazard per dose group")

    def dose_table(self) -> list[np.ndarray]:
        d = self.doses
        nested = len(d) and isinstance(d[0], (list, tuple))
        rows = [np.asarray(x, float) for x in d] if nested else [np.asarray(d, float)] * self.n_studies
        if len(rows) != self.n_studies:
            raise ValueError("one dose vector per study")
        return rows

    def size_table(self) -> list[np.ndarray]:
        g = self.group_sizes
        nested = len(g) and isinstance(g[0], (list, tuple))
        rows = [np.asarray(x, int) for x in g] if nested else [np.asarray(g, int)] * self.n_studies
        if len(rows) != self.n_studies:
            raise ValueError("one group-size vector per study")
        return rows

    @classmethod
    def from_json(cls, path) -> "Scenario":
        raw = json.loads(Path(path).read_text())
        for k in ("doses", "group_sizes", "mortality"):
            if raw.get(k) is not None:
                raw[k] = _tuplify(raw[k])
        return cls(**raw)


def _tuplify(x):
    return tuple(_tuplify(v) for v in x) if isinstance(x, (list, tuple)) else x


def dose_shape(doses: np.ndarray, shape: str) -> np.ndarray:
    """Fraction (0..1) of the top-dose logit effect reached at each dose."""
    d = np.asarray(doses, float)
    d1 = d[d > 0].min()
    if shape == "flat":
        return np.zeros_like(d)
    if shape == "linear-logit":
        return d / d.max()
    if shape == "plateau":
        return np.minimum(d / d1, 1.0)
    if shape == "loglinear":
        return np.log1p(d / d1) / np.log1p(d.max() / d1)
    raise ValueError(f"unknown shape {shape!r}")


def replicate_rng(seed: int, replicate: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate, stream])))


def generate(scenario: Scenario, replicate: int):
    """Records for one replicate: DoseRecords, or AnimalRecords under mortality."""
    eff_rng = replicate_rng(scenario.seed, replicate, _STREAM_EFFECTS)
    out_rng = replicate_rng(scenario.seed, replicate, _STREAM_OUTCOME)
    death_rng = replicate_rng(scenario.seed, replicate, _STREAM_DEATH)
    base = special.logit(scenario.control_rate)
    records = []
    for s, (doses, sizes) in enumerate(zip(scenario.dose_table(), scenario.size_table())):
        a = base + scenario.sd_intercept * eff_rng.standard_normal()
        b = scenario.effect + scenario.sd_slope * eff_rng.standard_normal()
        p = special.expit(a + b * dose_shape(doses, scenario.shape))
        study = f"S{s + 1}"
        levels = ["C"] + [f"D{i}" for i in range(1, len(doses))]
        for i, (d, n, pi) in enumerate(zip(doses, sizes, p)):
            if scenario.mortality is None:
                y = int(out_rng.binomial(n, pi))
                records.append(DoseRecord(study, None, float(d), y, int(n), levels[i]))
                continue
            h = scenario.mortality[i]
            t = np.minimum(death_rng.exponential(1.0 / h, n) if h > 0 else np.ones(n), 1.0)
            seen = out_rng.random(n) < pi * t**3
            for ti, yi in zip(t, seen):
                records.append(AnimalRecord(study, float(d), int(yi), float(max(ti, 1e-3) * STUDY_LENGTH)))
    return records


@dataclass
class ApproachStats:
    rejections: int = 0
    valid: int = 0
    failures: int = 0
    runtime: float = 0.0
    errors: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return self.rejections / self.valid if self.valid else float("nan")

    @property
    def se(self) -> float:
        r = self.rate
        return float(np.sqrt(r * (1 - r) / self.valid)) if self.valid else float("nan")


@dataclass
class SimResult:
    scenario: Scenario
    stats: dict[str, ApproachStats]
    min_p: dict[str, list]

    def rejection_rate(self, approach: str) -> float:
        return self.stats[approach].rate

    def flagged(self, approach: str) -> bool:
        s = self.stats[approach]
        return s.failures > FAILURE_FLAG * (s.failures + s.valid)

    def to_dict(self) -> dict:
        sc = asdict(self.scenario)
        return {
            "scenario": json.loads(json.dumps(sc)),
            "approaches": {
                a: {
                    "rejection_rate": _r(s.rate),
                    "standard_error": _r(s.se),
                    "valid": s.valid,
                    "failures": s.failures,
                    "flagged": self.flagged(a),
                    "mean_runtime": _r(s.runtime / max(s.valid + s.failures, 1)),
                    "errors": dict(sorted(s.errors.items())),
                }
                for a, s in self.stats.items()
            },
        }

    def to_text(self) -> str:
        lines = [f"{'approach':<16}{'reject':>8}{'se':>8}{'valid':>7}{'fail':>6}"]
        for a, s in self.stats.items():
            flag = "  FLAG" if self.flagged(a) else ""
            lines.append(f"{a:<16}{s.rate:>8.4f}{s.se:>8.4f}{s.valid:>7d}{s.failures:>6d}{flag}")
        return "\n".join(lines) + "\n"


def _r(x):
    return None if not np.isfinite(x) else round(float(x), 10)


def _one(scenario: Scenario, approach: str, replicate: int, cfg: AnalysisConfig) -> float:
    records = generate(scenario, replicate)
    animal = scenario.mortality is not None
    data = compute_dose_scores(records, adjustment="none" if animal else scenario.adjustment)
    if approach == "polyk_joint":
        if not animal:
            raise ValueError("polyk_joint needs a mortality model")
        from .pipelines import run_polyk_joint

        w = compute_polyk_weights(records, scenario.polyk)
        return run_polyk_joint(data.with_weights(w), replace(cfg, polyk=scenario.polyk)).min_p
    if approach == "dunnett_pooled":
        return run_factor_contrast(data, cfg, "dunnett", pooled=True).min_p
    res = run_approach(data, replace(cfg, approach=approach))
    ps = [v for cell in res.cells().values() for v in cell.values()]
    return float(min(ps))


def _run_replicates(args):
    scenario, approaches, reps, cfg = args
    out = []
    for r in reps:
        row = {}
        for a in approaches:
            t0 = time.perf_counter()
            try:
                row[a] = (_one(scenario, a, r, cfg), None, time.perf_counter() - t0)
            except Exception as exc:  # a failed fit never aborts the run
                row[a] = (None, type(exc).__name__, time.perf_counter() - t0)
        out.append(row)
    return out


def simulate(
    scenario: Scenario,
    approaches: Sequence[str] = ("per_study",),
    n_jobs: int = 1,
    accuracy: float = 1e-4,
    group_by: str = "study",
) -> SimResult:
    """Rejection rates (min adjusted p < alpha) per approach."""
    for a in approaches:
        if a not in SIM_APPROACHES:
            raise ValueError(f"unknown approach {a!r}; choose from {SIM_APPROACHES}")
    cfg = AnalysisConfig(
        alpha=scenario.alpha,
        adjustment=scenario.adjustment,
        accuracy=accuracy,
        bounds=False,
        group_by=group_by,
    )
    reps = list(range(scenario.replications))
    if n_jobs > 1:
        chunks = [reps[i::n_jobs] for i in range(n_jobs)]
        with ProcessPoolExecutor(n_jobs) as ex:
            parts = list(ex.map(_run_replicates, [(scenario, tuple(approaches), c, cfg) for c in chunks]))
        rows: list = [None] * len(reps)
        for c, part in zip(chunks, parts):
            for r, row in zip(c, part):
                rows[r] = row
    else:
        rows = _run_replicates((scenario, tuple(approaches), reps, cfg))

    stats = {a: ApproachStats() for a in approaches}
    min_p = {a: [] for a in approaches}
    for row in rows:
        for a, (p, err, dt) in row.items():
            s = stats[a]
            s.runtime += dt
            if err is not None:
                s.failures += 1
                s.errors[err] = s.errors.get(err, 0) + 1
                min_p[a].append(None)
                continue
            s.valid += 1
            s.rejections += int(p < scenario.alpha)
            min_p[a].append(p)
    return SimResult(scenario, stats, min_p)
