"""Acceptance checks. Each criterion prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

from oracles import bootstrap_slope_correlation, exchangeable_orthant, newton_logistic  # noqa: E402

from polytrend.contrasts import dunnett_matrix, williams_matrix  # noqa: E402
from polytrend.data_model import (  # noqa: E402
    AnimalRecord,
    DoseRecord,
    compute_dose_scores,
    compute_polyk_weights,
    parse_animal_csv,
    parse_grouped_csv,
)
from polytrend.glm import DesignMatrix, fit_binomial_glm  # noqa: E402
from polytrend.mmm import JointEstimate, max_test, stack_models  # noqa: E402
from polytrend.mvprob import equicoordinate_quantile, mvn_rectangle, norm_ppf, norm_sf  # noqa: E402
from polytrend.pipelines import AnalysisConfig, compare_all, run_approach, run_polyk_joint  # noqa: E402
from polytrend.sim import Scenario, simulate  # noqa: E402

DATA = HERE.parent / "data"
RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# --------------------------------------------------------------- criteria


def test_criterion_1_per_study_reproduction():
    recs = parse_grouped_csv(DATA / "lmice.csv")
    ok, parts = True, []
    for study, target in (("C", 0.027), ("D", 0.014)):
        data = compute_dose_scores([r for r in recs if r.study == study])
        t0 = time.perf_counter()
        res = run_approach(data, AnalysisConfig("per_study"))
        dt = time.perf_counter() - t0
        p = res.cells()[f"Only{study}"]["ari"]
        ok &= abs(p - target) <= 0.01 and dt < 1.0
        parts.append(f"p_{study}={p:.4f} (target {target}) in {dt:.2f}s")
    report(1, ok, "; ".join(parts))


def test_criterion_2_mixed_model_nonsignificant():
    data = compute_dose_scores(parse_grouped_csv(DATA / "lmice.csv"), adjustment="add1")
    t0 = time.perf_counter()
    res = run_approach(data, AnalysisConfig("mixed", adjustment="add1"))
    dt = time.perf_counter() - t0
    p = res.tests["Mix"].adjusted_p
    report(2, bool(np.all(p > 0.05)) and dt < 10, f"adjusted p={np.round(p, 4).tolist()} in {dt:.2f}s")


def test_criterion_3_glm_matches_newton_oracle():
    rng = np.random.default_rng(20240601)
    worst_b = worst_v = 0.0
    for _ in range(50):
        k = int(rng.integers(3, 7))
        n = rng.integers(5, 61, size=k)
        x = np.sort(rng.uniform(0, 3, size=k))
        X = np.column_stack([np.ones(k), x] + ([x**2] if k >= 5 and rng.random() < 0.5 else []))
        beta_true = rng.normal([-1.0, 0.4, 0.0][: X.shape[1]], 0.4)
        y = rng.binomial(n, 1 / (1 + np.exp(-(X @ beta_true)))).astype(float)
        y[0], y[-1] = max(y[0], 1), min(y[-1], n[-1] - 1)
        m = fit_binomial_glm(X, y, n - y)
        b, V = newton_logistic(X, y, n - y)
        worst_b = max(worst_b, float(np.max(np.abs(m.coefficients - b))))
        worst_v = max(worst_v, float(np.max(np.abs(m.covariance - V) / np.abs(V))))
    report(3, worst_b <= 1e-8 and worst_v <= 1e-6,
           f"max |coef diff|={worst_b:.1e}, max rel cov diff={worst_v:.1e} over 50 datasets")


def test_criterion_4_mvn_engine():
    a = mvn_rectangle(-np.inf, np.zeros(3), np.eye(3)).value
    R = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
    b = mvn_rectangle(-np.inf, np.zeros(3), R).value
    oracle = exchangeable_orthant(0.5, 0.0, 3)
    c = equicoordinate_quantile(np.eye(3), 0.95)
    c_ref = float(norm_ppf(0.95 ** (1 / 3)))
    ok = abs(a - 0.125) < 1e-6 and abs(b - oracle) < 1e-4 and abs(b - 0.25) < 1e-4 and abs(c - c_ref) < 1e-4
    report(4, ok, f"I3 orthant={a:.7f}, rho=.5 orthant={b:.6f} (oracle {oracle:.6f}), "
                  f"c={c:.5f} (ref {c_ref:.5f})")


def test_criterion_5_correlation_vs_bootstrap():
    doses, tumors, n = [0, 100, 300, 1000], [5, 8, 10, 15], 50
    animals = [AnimalRecord("s", float(d), int(i < t), 730.0) for d, t in zip(doses, tumors) for i in range(n)]
    data = compute_dose_scores(animals)
    models = [fit_binomial_glm(DesignMatrix.trend(data.score(s)), data.successes, data.failures)
              for s in ("ari", "arilog")]
    r = stack_models(models, labels=("ari", "arilog")).correlation[0, 1]
    grp = compute_dose_scores([DoseRecord("s", None, d, t, n) for d, t in zip(doses, tumors)])
    boot = bootstrap_slope_correlation(doses, grp.score_ari, grp.score_arilog, [n] * 4, tumors, reps=100_000)
    report(5, abs(r - boot) <= 0.05, f"stacked-score corr={r:.4f}, bootstrap (1e5) corr={boot:.4f}")


def test_criterion_6_polyk_reduction():
    recs = parse_animal_csv(DATA / "melh.csv")
    data = compute_dose_scores(recs)
    cfg = AnalysisConfig(accuracy=1e-4, bounds=False)
    weighted = run_polyk_joint(data.with_weights(np.ones(len(data))), cfg)
    plain = run_approach(data, AnalysisConfig("mixed", random_terms="intercept_only", accuracy=1e-4,
                                              bounds=False)).tests["Mix"]
    diff = float(np.max(np.abs(weighted.joint.estimates - plain.joint.estimates)))
    w = compute_polyk_weights([AnimalRecord("a", 0, 0, 365.0), AnimalRecord("a", 0, 0, 730.0)], 3)[0]
    report(6, diff <= 1e-8 and abs(w - 0.125) < 1e-15, f"weight-1 coef diff={diff:.1e}; w(365/730, k=3)={w}")


def test_criterion_7_null_size():
    sc = Scenario(n_studies=1, group_sizes=(50,) * 4, control_rate=0.1, shape="flat",
                  replications=2000, seed=20240)
    t0 = time.perf_counter()
    res = simulate(sc, ["per_study"])
    dt = time.perf_counter() - t0
    rate = res.rejection_rate("per_study")
    bound = 0.05 + 2 * np.sqrt(0.05 * 0.95 / 2000)
    report(7, rate <= bound and dt < 120 and not res.flagged("per_study"),
           f"rejection rate={rate:.4f} (bound {bound:.4f}) in {dt:.1f}s")


def test_criterion_8_invariance_suite():
    recs = parse_grouped_csv(DATA / "lmice.csv")
    fast = AnalysisConfig(accuracy=1e-4, bounds=False)
    checks = {}

    a = run_approach(compute_dose_scores(recs), fast)
    for c in (1e-3, 7.3, 1e4):
        scaled = [DoseRecord(r.study, r.stratum, r.dose * c, r.tumor, r.at_risk, r.level) for r in recs]
        b = run_approach(compute_dose_scores(scaled), fast)
        dz = max(float(np.max(np.abs(a.tests[k].joint.z_statistics - b.tests[k].joint.z_statistics)))
                 for k in a.tests)
        checks.setdefault("rescale", True)
        checks["rescale"] &= dz <= 1e-8

    rng = np.random.default_rng(8)
    bracket = True
    for _ in range(200):
        z = rng.normal(1, 1.5, 3)
        rho = rng.uniform(0, 0.95)
        R = np.full((3, 3), rho) + (1 - rho) * np.eye(3)
        res = max_test(JointEstimate(("a", "b", "c"), z, R, R, z), with_bounds=False, accuracy=1e-4)
        u = norm_sf(z)
        bracket &= bool(np.all(u <= res.adjusted_p + 1e-12) and np.all(res.adjusted_p <= np.minimum(1, 3 * u) + 2e-4))
    checks["bonferroni"] = bracket

    checks["contrast_rows"] = all(
        np.allclose(f(k).matrix.sum(axis=1), 0, atol=1e-12) for k in range(2, 12) for f in (williams_matrix, dunnett_matrix)
    )

    cfgs = [AnalysisConfig(x, accuracy=1e-4, bounds=False) for x in ("per_study", "pooled", "fixed", "fisher", "williams")]
    base = compare_all(compute_dose_scores(recs), cfgs, timestamp=False).to_json(estimates=True)
    same = True
    for _ in range(5):
        perm = [recs[i] for i in rng.permutation(len(recs))]
        same &= compare_all(compute_dose_scores(perm), cfgs, timestamp=False).to_json(estimates=True) == base
    checks["permutation"] = same
    report(8, all(checks.values()), ", ".join(f"{k}={'ok' if v else 'BROKEN'}" for k, v in checks.items()))


if __name__ == "__main__":
    import warnings

    warnings.simplefilter("ignore")
    failed = 0
    for name, fn in sorted((k, v) for k, v in dict(globals()).items() if k.startswith("test_criterion_")):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
