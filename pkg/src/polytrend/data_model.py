"""Study data: CSV ingestion, pseudo-counts, dose scores and poly-k weights."""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GROUPED_COLUMNS = ("study", "stratum", "dose", "tumor", "at_risk")
ANIMAL_COLUMNS = ("study", "dose", "tumor", "death_time")
SCORINGS = ("ari", "ord", "arilog")
ADJUSTMENTS = ("none", "add1", "add2")
_PSEUDO = {"none": 0.0, "add1": 0.5, "add2": 1.0}


class DataError(ValueError):
    """Invalid input data. ``row`` is 1-based over data rows (header excluded)."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class DoseRecord:
    study: str
    stratum: str | None
    dose: float
    tumor: int
    at_risk: int
    level: str | None = None  # optional user-supplied dose-level label (Williams grouping)

    @property
    def block(self) -> tuple[str, str | None]:
        return (self.study, self.stratum)


@dataclass(frozen=True)
class AnimalRecord:
    study: str
    dose: float
    tumor: int
    death_time: float


@dataclass(frozen=True)
class ArilogZeroRule:
    """Substitute for the control dose on the log scale.

    ``extrapolate`` uses d1**2 / d2 (one log-step below the lowest dose);
    ``fraction`` uses ``fraction * d1``.
    """

    kind: str = "extrapolate"
    fraction: float = 0.1

    @classmethod
    def parse(cls, text: str) -> "ArilogZeroRule":
        if text == "extrapolate":
            return cls()
        if text.startswith("fraction:"):
            f = float(text.split(":", 1)[1])
            if not 0 < f < 1:
                raise ValueError(f"fraction must lie in (0, 1), got {f}")
            return cls("fraction", f)
        raise ValueError(f"unknown arilog zero rule {text!r}")

    def __str__(self) -> str:
        return "extrapolate" if self.kind == "extrapolate" else f"fraction:{self.fraction:g}"

    def control_dose(self, nonzero: Sequence[float]) -> float:
        d = sorted(nonzero)
        if self.kind == "extrapolate":
            if len(d) < 2:
                raise DataError("arilog scoring needs at least 2 nonzero doses per block")
            return d[0] ** 2 / d[1]
        if not d:
            raise DataError("arilog scoring needs a nonzero dose per block")
        return self.fraction * d[0]


# --------------------------------------------------------------- parsing


def _read_rows(path, required: Sequence[str]) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"header lacks column(s) {', '.join(missing)}; got {','.join(header)}")
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise DataError(f"expected {len(header)} fields, got {len(r)}", row=i)
    return header, rows


def _number(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"not a number: {text!r}", row, column) from None
    if not math.isfinite(value):
        raise DataError(f"not finite: {text!r}", row, column)
    return value


def _integer(text: str, row: int, column: str) -> int:
    value = _number(text, row, column)
    if value != int(value):
        raise DataError(f"not an integer: {text!r}", row, column)
    return int(value)


def make_dose_record(study, stratum, dose, tumor, at_risk, level=None, row=None) -> DoseRecord:
    if not str(study):
        raise DataError("empty study identifier", row, "study")
    if dose < 0:
        raise DataError(f"negative dose {dose}", row, "dose")
    if at_risk <= 0:
        raise DataError(f"at_risk must be positive, got {at_risk}", row, "at_risk")
    if tumor < 0:
        raise DataError(f"negative tumor count {tumor}", row, "tumor")
    if tumor > at_risk:
        raise DataError(f"tumor={tumor} exceeds at_risk={at_risk}", row, "tumor")
    return DoseRecord(str(study), stratum or None, float(dose), int(tumor), int(at_risk), level or None)


def check_blocks(records: Sequence[DoseRecord]) -> None:
    blocks: dict[tuple, list[float]] = {}
    for r in records:
        blocks.setdefault(r.block, []).append(r.dose)
    for (study, stratum), doses in blocks.items():
        name = study if stratum is None else f"{study}:{stratum}"
        if len(set(doses)) != len(doses):
            raise DataError(f"duplicate dose within block {name}")
        if 0.0 not in doses:
            raise DataError(f"block {name} has no control (dose 0)")
        if len(doses) < 3:
            raise DataError(f"block {name} needs at least 3 dose levels, has {len(doses)}")


def parse_grouped_csv(path) -> list[DoseRecord]:
    header, rows = _read_rows(path, ("study", "dose", "tumor", "at_risk"))
    idx = {h: i for i, h in enumerate(header)}
    out = []
    for i, r in enumerate(rows, start=1):
        def cell(name):
            return r[idx[name]].strip() if name in idx else ""

        out.append(
            make_dose_record(
                cell("study"),
                cell("stratum"),
                _number(cell("dose"), i, "dose"),
                _integer(cell("tumor"), i, "tumor"),
                _integer(cell("at_risk"), i, "at_risk"),
                cell("level"),
                row=i,
            )
        )
    check_blocks(out)
    return out


def parse_animal_csv(path) -> list[AnimalRecord]:
    header, rows = _read_rows(path, ANIMAL_COLUMNS)
    idx = {h: i for i, h in enumerate(header)}
    out = []
    for i, r in enumerate(rows, start=1):
        study = r[idx["study"]].strip()
        if not study:
            raise DataError("empty study identifier", i, "study")
        dose = _number(r[idx["dose"]], i, "dose")
        if dose < 0:
            raise DataError(f"negative dose {dose}", i, "dose")
        tumor = _integer(r[idx["tumor"]], i, "tumor")
        if tumor not in (0, 1):
            raise DataError(f"tumor must be 0 or 1, got {tumor}", i, "tumor")
        t = _number(r[idx["death_time"]], i, "death_time")
        if t <= 0:
            raise DataError(f"death_time must be positive, got {t}", i, "death_time")
        out.append(AnimalRecord(study, dose, tumor, t))
    if not out:
        raise DataError("no animals in file")
    return out


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_grouped_csv(records: Iterable[DoseRecord], path=None) -> str:
    records = list(records)
    with_level = any(r.level for r in records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GROUPED_COLUMNS + (("level",) if with_level else ()))
    for r in records:
        row = [r.study, r.stratum or "", _fmt(r.dose), r.tumor, r.at_risk]
        w.writerow(row + ([r.level or ""] if with_level else []))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def write_animal_csv(records: Iterable[AnimalRecord], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ANIMAL_COLUMNS)
    for r in records:
        w.writerow([r.study, _fmt(r.dose), r.tumor, _fmt(r.death_time)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# ----------------------------------------------------------- transforms


def apply_pseudocounts(records: Sequence[DoseRecord], mode: str) -> list[tuple[float, float]]:
    """(tumor', no_tumor') per row; add1 adds 0.5 and add2 adds 1 to each cell."""
    if mode not in ("add1", "add2"):
        raise ValueError(f"mode must be add1 or add2, got {mode!r}")
    c = _PSEUDO[mode]
    return [(r.tumor + c, (r.at_risk - r.tumor) + c) for r in records]


def compute_polyk_weights(
    records: Sequence[AnimalRecord], k: float = 3.0, scope: str = "study"
) -> np.ndarray:
    """Poly-k weight per animal: 1 with tumor, (t / t_max)**k without.

    ``scope`` is ``study`` (t_max per study) or ``global``.
    """
    if not k > 0:
        raise ValueError(f"poly-k exponent must be positive, got {k}")
    if not records:
        raise DataError("no animals to weight")
    if scope not in ("study", "global"):
        raise ValueError(f"unknown weighting scope {scope!r}")
    t = np.array([r.death_time for r in records], dtype=float)
    tumor = np.array([r.tumor for r in records])
    if scope == "global":
        tmax = np.full_like(t, t.max())
    else:
        study = np.array([r.study for r in records], dtype=object)
        tmax = np.empty_like(t)
        for s in dict.fromkeys(study):
            m = study == s
            tmax[m] = t[m].max()
    return np.where(tumor == 1, 1.0, (t / tmax) ** k)


def _block_scores(doses: np.ndarray, rule: ArilogZeroRule, need_arilog: bool):
    levels = np.unique(doses)
    ord_ = np.searchsorted(levels, doses).astype(float)
    if need_arilog:
        d0 = rule.control_dose(levels[levels > 0].tolist())
        arilog = np.log(np.where(doses > 0, doses, d0))
    else:
        arilog = np.full(doses.shape, np.nan)
    return ord_, arilog


@dataclass
class ScoredDataset:
    """Column-oriented analysis table shared by grouped and animal-level data.

    ``successes``/``failures`` are real-valued so pseudo-counts fit in; for
    animal rows they are the 0/1 tumor indicator and its complement.
    """

    kind: str  # "grouped" | "animal"
    study: np.ndarray
    stratum: np.ndarray
    dose: np.ndarray
    successes: np.ndarray
    failures: np.ndarray
    score_ari: np.ndarray
    score_ord: np.ndarray
    score_arilog: np.ndarray
    adjustment: str = "none"
    polyk_weight: np.ndarray | None = None
    level: np.ndarray | None = None
    death_time: np.ndarray | None = None
    arilog_rule: ArilogZeroRule = field(default_factory=ArilogZeroRule)

    def __len__(self) -> int:
        return self.dose.size

    def score(self, name: str) -> np.ndarray:
        if name not in SCORINGS:
            raise ValueError(f"unknown scoring {name!r}")
        return getattr(self, f"score_{name}")

    @property
    def prior_weights(self) -> np.ndarray:
        return np.ones(len(self)) if self.polyk_weight is None else self.polyk_weight

    @property
    def block_labels(self) -> np.ndarray:
        return np.array(
            [s if not st else f"{s}:{st}" for s, st in zip(self.study, self.stratum)], dtype=object
        )

    def grouping(self, by: str) -> np.ndarray:
        if by == "study":
            return self.study.copy()
        if by == "stratum":
            if not any(self.stratum):
                raise DataError("grouping by stratum requested but no stratum column")
            return self.stratum.copy()
        if by in ("study:stratum", "block"):
            return self.block_labels
        raise ValueError(f"unknown grouping {by!r}")

    def subset(self, mask) -> "ScoredDataset":
        mask = np.asarray(mask)
        kw = {}
        for name in ("study", "stratum", "dose", "successes", "failures", "score_ari",
                     "score_ord", "score_arilog", "polyk_weight", "level", "death_time"):
            v = getattr(self, name)
            kw[name] = None if v is None else v[mask]
        return replace(self, **kw)

    def blocks(self) -> dict[str, "ScoredDataset"]:
        labels = self.block_labels
        return {b: self.subset(labels == b) for b in dict.fromkeys(labels)}

    def with_weights(self, weights) -> "ScoredDataset":
        return replace(self, polyk_weight=None if weights is None else np.asarray(weights, float))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in ("study", "stratum", "dose", "successes", "failures", "polyk_weight", "level"):
            v = getattr(self, name)
            h.update(name.encode())
            if v is not None:
                h.update(repr([str(x) for x in v]).encode())
        return h.hexdigest()[:16]


def compute_dose_scores(
    records,
    arilog_zero_rule: ArilogZeroRule | str = "extrapolate",
    adjustment: str = "none",
    scorings: Sequence[str] = SCORINGS,
) -> ScoredDataset:
    """Score doses per block and apply the pseudo-count adjustment.

    Blocks are (study, stratum) for grouped records and study for animals.
    Adjustment only applies to grouped counts.
    """
    if isinstance(arilog_zero_rule, str):
        arilog_zero_rule = ArilogZeroRule.parse(arilog_zero_rule)
    if adjustment not in ADJUSTMENTS:
        raise ValueError(f"unknown adjustment {adjustment!r}")
    records = list(records)
    if not records:
        raise DataError("no records")
    animal = isinstance(records[0], AnimalRecord)
    if animal and adjustment != "none":
        raise DataError("pseudo-count adjustment applies to grouped counts only")

    study = np.array([r.study for r in records], dtype=object)
    stratum = np.array(["" if animal else (r.stratum or "") for r in records], dtype=object)
    dose = np.array([r.dose for r in records], dtype=float)
    if animal:
        succ = np.array([r.tumor for r in records], dtype=float)
        fail = 1.0 - succ
        death = np.array([r.death_time for r in records], dtype=float)
        level = None
    else:
        c = _PSEUDO[adjustment]
        succ = np.array([r.tumor for r in records], dtype=float) + c
        fail = np.array([r.at_risk - r.tumor for r in records], dtype=float) + c
        death = None
        level = (
            np.array([r.level or "" for r in records], dtype=object)
            if any(r.level for r in records)
            else None
        )

    codes: dict[tuple, int] = {}
    block = np.array([codes.setdefault((s, st), len(codes)) for s, st in zip(study, stratum)])
    ord_ = np.empty_like(dose)
    arilog = np.empty_like(dose)
    for b in range(len(codes)):
        m = block == b
        ord_[m], arilog[m] = _block_scores(dose[m], arilog_zero_rule, "arilog" in scorings)
    return ScoredDataset(
        kind="animal" if animal else "grouped",
        study=study,
        stratum=stratum,
        dose=dose,
        successes=succ,
        failures=fail,
        score_ari=dose.copy(),
        score_ord=ord_,
        score_arilog=arilog,
        adjustment=adjustment,
        level=level,
        death_time=death,
        arilog_rule=arilog_zero_rule,
    )
