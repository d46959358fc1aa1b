"""Command-line front end.

Exit codes: 0 success, 2 input/data error, 3 fit or test failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, mvprob
from .data_model import (
    SCORINGS,
    ArilogZeroRule,
    DataError,
    compute_dose_scores,
    compute_polyk_weights,
    parse_animal_csv,
    parse_grouped_csv,
)
from .glm import RankDeficientError
from .lmm import MixedModelError
from .mmm import JointError
from .pipelines import (
    AnalysisConfig,
    AnalysisError,
    canonical_order,
    compare_all,
    default_comparison,
    run_approach,
    run_polyk_joint,
)
from .plotting import dose_response_svg

EXIT_OK, EXIT_DATA, EXIT_FIT = 0, 2, 3
SEED_ENV = "POLYTREND_SEED"
FIT_ERRORS = (AnalysisError, JointError, MixedModelError, RankDeficientError, mvprob.CorrelationError)


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return mvprob.DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def load_records(path):
    """Grouped or animal-level records, told apart by the header."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {path}")
    with p.open(newline="") as fh:
        header = next(csv.reader(fh), [])
    if "death_time" in [h.strip() for h in header]:
        return parse_animal_csv(p)
    return parse_grouped_csv(p)


def _scorings(text: str) -> tuple[str, ...]:
    out = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in out if s not in SCORINGS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"scorings must come from {','.join(SCORINGS)}")
    return out


def _arilog(text: str) -> ArilogZeroRule:
    try:
        return ArilogZeroRule.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _metadata(args, data=None, extra=None) -> dict:
    md = {"version": __version__, "seed": args.seed, "command": args.command}
    if data is not None:
        md["dataset_hash"] = canonical_order(data).fingerprint()
        md["n_rows"] = len(data)
    if extra:
        md.update(extra)
    if not args.no_meta:
        import datetime as dt

        md["timestamp"] = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    return md


def _emit(args, payload) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _config(args, approach: str, **kw) -> AnalysisConfig:
    return AnalysisConfig(
        approach=approach,
        adjustment=args.adjust,
        alpha=args.alpha,
        scorings=args.scorings,
        reference=getattr(args, "reference", "normal"),
        group_by=getattr(args, "group_by", None) or "study",
        seed=args.seed,
        **kw,
    )


# ------------------------------------------------------------------ commands


def cmd_trend(args) -> int:
    records = load_records(args.csv)
    if args.study:
        records = [r for r in records if r.study in args.study]
        if not records:
            raise DataError(f"no rows for study {','.join(args.study)}")
    data = compute_dose_scores(records, args.arilog_zero, args.adjust, args.scorings)
    results = {}
    for ref in ("normal", "t"):
        cfg = replace(_config(args, "per_study"), reference=ref)
        res = run_approach(data, cfg)
        for col, test in res.tests.items():
            block = col[len("Only"):]
            results.setdefault(block, {})[ref] = test.to_dict()
    if args.plot:
        Path(args.plot).write_text(dose_response_svg(records, title=Path(args.csv).stem))
    _emit(args, {
        "command": "trend",
        "primary_reference": args.reference,
        "studies": results,
        "metadata": _metadata(args, data, {"adjustment": args.adjust, "arilog_zero": str(args.arilog_zero)}),
    })
    return EXIT_OK


def cmd_joint(args) -> int:
    data = compute_dose_scores(load_records(args.csv), args.arilog_zero, args.adjust, args.scorings)
    cfg = _config(
        args,
        "mixed",
        random_slope=args.random_slope,
        random_terms=args.random_terms,
        covariance_structure=args.covariance,
    )
    res = run_approach(data, cfg)
    _emit(args, {
        "command": "joint",
        "result": res.tests["Mix"].to_dict(),
        "metadata": _metadata(args, data, {"group_by": args.group_by, "adjustment": args.adjust}),
    })
    return EXIT_OK


def cmd_compare(args) -> int:
    records = load_records(args.csv)
    adjust = args.adjust
    data = compute_dose_scores(records, args.arilog_zero, adjust, args.scorings)
    if data.kind == "animal":
        data = data.with_weights(compute_polyk_weights(records, args.k))
    cfgs = default_comparison(data, _config(args, "per_study", fisher_scoring=args.fisher_scoring))
    if args.approaches:
        wanted = args.approaches.split(",")
        cfgs = [replace(cfgs[0], approach=a) for a in wanted]
    report = compare_all(data, cfgs, timestamp=not args.no_meta)
    if args.text:
        _emit(args, report.to_text())
    else:
        d = report.to_dict(meta=not args.no_meta, estimates=args.estimates)
        d["command"] = "compare"
        d["metadata"]["command"] = "compare"
        _emit(args, d)
    return EXIT_OK


def cmd_polyk(args) -> int:
    records = load_records(args.csv)
    if not records or type(records[0]).__name__ != "AnimalRecord":
        raise DataError("poly-k analysis needs animal-level data (study,dose,tumor,death_time)")
    w = compute_polyk_weights(records, args.k, args.scope)
    data = compute_dose_scores(records, args.arilog_zero, "none", args.scorings).with_weights(w)
    res = run_polyk_joint(data, _config(args, "mixed", polyk=args.k))
    _emit(args, {
        "command": "polyk",
        "k": args.k,
        "weights": [round(float(x), 12) for x in w],
        "result": res.to_dict(),
        "metadata": _metadata(args, data, {"group_by": args.group_by, "scope": args.scope}),
    })
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .sim import Scenario, simulate

    try:
        scenario = Scenario.from_json(args.scenario)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise DataError(f"bad scenario file {args.scenario}: {exc}") from None
    if args.replications:
        scenario = replace(scenario, replications=args.replications)
    res = simulate(scenario, args.approaches.split(","), n_jobs=args.jobs)
    if args.text:
        _emit(args, res.to_text())
        return EXIT_OK
    d = res.to_dict()
    d["command"] = "simulate"
    d["metadata"] = _metadata(args)
    if args.no_meta:
        for a in d["approaches"].values():
            a.pop("mean_runtime")
    _emit(args, d)
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polytrend", description="Tukey-type maximum trend tests")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--out", help="write output here instead of stdout")
        sp.add_argument("--no-meta", action="store_true", help="omit timestamps and run times")
        sp.add_argument("--seed", type=int, default=None, help=f"QMC seed (default ${SEED_ENV} or built-in)")
        if data:
            sp.add_argument("csv")
            sp.add_argument("--adjust", choices=("none", "add1", "add2"), default="none")
            sp.add_argument("--scorings", type=_scorings, default=SCORINGS)
            sp.add_argument("--alpha", type=float, default=0.05)
            sp.add_argument("--arilog-zero", type=_arilog, default=ArilogZeroRule())

    sp = sub.add_parser("trend", help="per-study Tukey max test")
    common(sp)
    sp.add_argument("--study", action="append", help="restrict to this study (repeatable)")
    sp.add_argument("--reference", choices=("normal", "t"), default="normal")
    sp.add_argument("--plot", help="write an SVG dose-response plot")
    sp.set_defaults(func=cmd_trend)

    sp = sub.add_parser("joint", help="mixed-model joint test across studies")
    common(sp)
    sp.add_argument("--group-by", required=True, choices=("study", "stratum", "block"))
    sp.add_argument("--reference", choices=("normal", "t"), default="normal")
    sp.add_argument("--random-slope", choices=("ari_always", "match"), default="ari_always")
    sp.add_argument("--random-terms", choices=("intercept_plus_slope", "intercept_only"),
                    default="intercept_plus_slope")
    sp.add_argument("--covariance", choices=("unstructured", "diagonal"), default="unstructured")
    sp.set_defaults(func=cmd_joint)

    sp = sub.add_parser("compare", help="table of all applicable approaches")
    common(sp)
    sp.add_argument("--group-by", default="study", choices=("study", "stratum", "block"))
    sp.add_argument("--reference", choices=("normal", "t"), default="normal")
    sp.add_argument("--approaches", help="comma-separated subset of approaches")
    sp.add_argument("--fisher-scoring", choices=SCORINGS, default="arilog")
    sp.add_argument("--k", type=float, default=3.0, help="poly-k exponent for animal data")
    sp.add_argument("--estimates", action="store_true", help="include estimates and bounds")
    sp.add_argument("--text", action="store_true", help="plain-text table instead of JSON")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("polyk", help="poly-k weights and weighted joint test")
    common(sp)
    sp.add_argument("--group-by", required=True, choices=("study",))
    sp.add_argument("--k", type=float, default=3.0)
    sp.add_argument("--scope", choices=("study", "global"), default="study")
    sp.add_argument("--reference", choices=("normal", "t"), default="normal")
    sp.set_defaults(func=cmd_polyk)

    sp = sub.add_parser("simulate", help="size/power simulation from a JSON scenario")
    common(sp, data=False)
    sp.add_argument("scenario")
    sp.add_argument("--approaches", default="per_study")
    sp.add_argument("--replications", type=int)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--text", action="store_true")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is None:
            args.seed = default_seed()
        with np.errstate(all="ignore"):
            return args.func(args)
    except DataError as exc:
        print(f"polytrend: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FIT_ERRORS as exc:
        print(f"polytrend: fit failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
