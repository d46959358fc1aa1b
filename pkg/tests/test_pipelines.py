import json
import time
from dataclasses import replace

import numpy as np
import pytest

from polytrend.data_model import AnimalRecord, DataError, compute_dose_scores, compute_polyk_weights
from polytrend.pipelines import (
    AnalysisConfig,
    compare_all,
    default_comparison,
    fisher_combination,
    run_approach,
    run_factor_contrast,
    run_polyk_joint,
)

FAST = dict(accuracy=1e-4, bounds=False)


def test_fisher_closed_form():
    fr = fisher_combination({"a": 0.5, "b": 0.5})
    assert fr.statistic == pytest.approx(2.7726, abs=1e-4)
    assert fr.df == 4
    assert fr.p == pytest.approx(0.5966, abs=1e-4)
    with pytest.raises(ValueError):
        fisher_combination({})


def test_per_study_lmice(lmice):
    res = run_approach(lmice, AnalysisConfig("per_study"))
    cells = res.cells()
    assert cells["OnlyC"]["ari"] == pytest.approx(0.027, abs=0.01)
    assert cells["OnlyD"]["ari"] == pytest.approx(0.014, abs=0.01)


def test_mixed_lmice_add1(lmice_records):
    data = compute_dose_scores(lmice_records, adjustment="add1")
    t0 = time.perf_counter()
    res = run_approach(data, AnalysisConfig("mixed"))
    assert time.perf_counter() - t0 < 10
    assert all(p > 0.05 for p in res.cells()["Mix"].values())


def test_single_study_rules(lmice_records):
    one = compute_dose_scores([r for r in lmice_records if r.study == "C"])
    with pytest.raises(DataError):
        run_approach(one, AnalysisConfig("mixed"))
    fixed = run_approach(one, AnalysisConfig("fixed", **FAST)).cells()["Fix"]
    pooled = run_approach(one, AnalysisConfig("pooled", **FAST)).cells()["Pool"]
    assert fixed == pytest.approx(pooled, abs=1e-3)
    assert run_approach(one, AnalysisConfig("fisher")).fisher.df == 2


def test_williams_variants_run(lmice):
    for a in ("williams", "williams_pooled"):
        res = run_approach(lmice, AnalysisConfig(a, **FAST))
        (col,) = res.cells()
        assert 0 <= res.cells()[col]["global"] <= 1
    dun = run_factor_contrast(lmice, AnalysisConfig(**FAST), "dunnett", pooled=True)
    assert len(dun.adjusted_p) == len(set(lmice.level)) - 1


def test_williams_needs_levels(nmice_records):
    data = compute_dose_scores(nmice_records)
    with pytest.raises(DataError):
        run_approach(data, AnalysisConfig("williams"))


def test_compare_columns_lmice(lmice):
    rep = compare_all(lmice, default_comparison(lmice, AnalysisConfig(**FAST)), timestamp=False)
    assert rep.columns == ["Mix", "OnlyA", "OnlyB", "OnlyC", "OnlyD", "Pool", "Fix", "Fish", "Wil", "WiP"]
    assert not rep.diagnostics
    assert rep.rows == ("ari", "ord", "arilog")


def test_compare_columns_nmice(nmice_records):
    data = compute_dose_scores(nmice_records, adjustment="add1")
    cfg = AnalysisConfig(group_by="block", **FAST)
    rep = compare_all(data, default_comparison(data, cfg), timestamp=False)
    assert rep.columns == ["Mix", "OnlyEx1f", "OnlyEx1m", "OnlyEx2f", "OnlyEx2m", "Pool", "Fix", "Fish"]
    assert "Mix" not in rep.diagnostics


def test_compare_empty(lmice):
    with pytest.raises(ValueError, match="nothing to compare"):
        compare_all(lmice, [])


def test_failures_recorded_per_column(nmice_records):
    data = compute_dose_scores(nmice_records)
    rep = compare_all(data, [AnalysisConfig("williams"), AnalysisConfig("pooled", **FAST)], timestamp=False)
    assert "Wil" in rep.diagnostics and "Pool" in rep.cells


def test_report_invariant_to_row_order(lmice_records):
    cfgs = [AnalysisConfig(a, **FAST) for a in ("per_study", "pooled", "fixed", "fisher", "williams")]
    base = compare_all(compute_dose_scores(lmice_records), cfgs, timestamp=False).to_json(estimates=True)
    rng = np.random.default_rng(3)
    for _ in range(3):
        perm = [lmice_records[i] for i in rng.permutation(len(lmice_records))]
        other = compare_all(compute_dose_scores(perm), cfgs, timestamp=False).to_json(estimates=True)
        assert other == base


def test_dose_rescaling_invariance(lmice_records):
    from polytrend.data_model import DoseRecord

    a = run_approach(compute_dose_scores(lmice_records), AnalysisConfig(**FAST))
    scaled = [DoseRecord(r.study, r.stratum, r.dose * 7.3, r.tumor, r.at_risk, r.level) for r in lmice_records]
    b = run_approach(compute_dose_scores(scaled), AnalysisConfig(**FAST))
    for col in a.tests:
        np.testing.assert_allclose(a.tests[col].joint.z_statistics, b.tests[col].joint.z_statistics, atol=1e-8)


def test_polyk_weight_one_reduction(melh_records):
    data = compute_dose_scores(melh_records)
    cfg = AnalysisConfig(**FAST)
    ones = run_polyk_joint(data.with_weights(np.ones(len(data))), replace(cfg, polyk=3.0))
    plain = run_approach(data, replace(cfg, approach="mixed", random_terms="intercept_only")).tests["Mix"]
    assert data.polyk_weight is None
    np.testing.assert_allclose(ones.joint.estimates, plain.joint.estimates, atol=1e-8)
    np.testing.assert_allclose(ones.joint.joint_covariance, plain.joint.joint_covariance, rtol=1e-8)


def test_polyk_joint_melh(melh_records):
    w = compute_polyk_weights(melh_records, 3)
    data = compute_dose_scores(melh_records).with_weights(w)
    res = run_polyk_joint(data, AnalysisConfig(**FAST))
    assert res.min_p < 0.05
    with pytest.raises(DataError):
        run_polyk_joint(compute_dose_scores(melh_records), AnalysisConfig())


def test_dunnett_polyk_runs(melh_records):
    w = compute_polyk_weights(melh_records, 3)
    data = compute_dose_scores(melh_records).with_weights(w)
    res = run_approach(data, AnalysisConfig("dunnett_polyk", polyk=3.0, **FAST))
    assert 0 < res.cells()["Dun"]["global"] < 1


def _masked_mortality():
    recs = []
    for dose, tumors, early in ((0, 8, 0), (10, 9, 15), (30, 10, 30)):
        for i in range(50):
            if i < tumors:
                recs.append(AnimalRecord("s", dose, 1, 730.0))
            elif i < tumors + early:
                recs.append(AnimalRecord("s", dose, 0, 200.0 + i))
            else:
                recs.append(AnimalRecord("s", dose, 0, 730.0))
    return recs


def test_polyk_unmasks_mortality():
    recs = _masked_mortality()
    w = compute_polyk_weights(recs, 3)
    # brute-force poly-3 proportions: tumors over summed weights per dose group
    dose = np.array([r.dose for r in recs])
    tum = np.array([r.tumor for r in recs])
    props = [tum[dose == d].sum() / w[dose == d].sum() for d in (0, 10, 30)]
    crude = [tum[dose == d].mean() for d in (0, 10, 30)]
    assert props[2] - props[0] > crude[2] - crude[0]
    data = compute_dose_scores(recs)
    cfg = AnalysisConfig("pooled", **FAST)
    p_crude = run_approach(data, cfg).tests["Pool"].min_p
    p_poly = run_approach(data.with_weights(w), replace(cfg, polyk=3.0)).tests["Pool"].min_p
    assert p_poly < p_crude


def test_polyk_requested_without_weights(melh_records):
    with pytest.raises(DataError):
        run_approach(compute_dose_scores(melh_records), AnalysisConfig("pooled", polyk=3.0))


def test_report_json_and_text(lmice):
    rep = compare_all(lmice, [AnalysisConfig("per_study", **FAST)], timestamp=False)
    d = json.loads(rep.to_json(meta=False))
    assert "timestamp" not in d["metadata"] and d["columns"][0] == "OnlyA"
    assert "OnlyA" in rep.to_text().splitlines()[0]
