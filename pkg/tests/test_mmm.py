import numpy as np
import pytest
from conftest import study_records
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import bootstrap_slope_correlation, phi_cdf
from scipy import stats

from polytrend.data_model import compute_dose_scores
from polytrend.glm import DesignMatrix, fit_binomial_glm
from polytrend.mmm import JointError, JointEstimate, max_test, stack_models


def _animal_rows(tumors_per_group, n):
    y = np.concatenate([np.r_[np.ones(t), np.zeros(n - t)] for t in tumors_per_group])
    return y, 1 - y


def test_identical_models_fully_correlated():
    X = DesignMatrix.trend([0, 1, 2, 3])
    m = fit_binomial_glm(X, [2, 3, 5, 9], [48, 47, 45, 41])
    joint = stack_models([m, m, m])
    np.testing.assert_allclose(joint.correlation, np.ones((3, 3)), atol=1e-12)


def test_orthogonal_scores_uncorrelated():
    # equal tumor rates per group: residuals have the same spread everywhere, so
    # slopes on orthogonal centred scorings have uncorrelated influences
    y, f = _animal_rows([5, 5, 5, 5], 20)
    g = np.repeat(np.arange(4), 20)
    lin, quad = np.array([-3, -1, 1, 3.0])[g], np.array([1, -1, -1, 1.0])[g]
    ma = fit_binomial_glm(DesignMatrix.trend(lin), y, f)
    mb = fit_binomial_glm(DesignMatrix.trend(quad), y, f)
    joint = stack_models([ma, mb], labels=("lin", "quad"))
    assert abs(joint.correlation[0, 1]) < 1e-8


def test_variances_are_model_based():
    y, f = _animal_rows([2, 4, 6, 9], 30)
    dose = np.repeat([0, 1, 3, 10.0], 30)
    ms = [fit_binomial_glm(DesignMatrix.trend(s), y, f) for s in (dose, np.sqrt(dose))]
    joint = stack_models(ms, labels=("a", "b"))
    np.testing.assert_allclose(joint.std_errors, [m.std_errors[1] for m in ms], rtol=1e-12)
    np.testing.assert_allclose(np.diag(joint.sandwich_covariance), [m.covariance[1, 1] for m in ms], rtol=0.2)


def test_stack_errors():
    a = fit_binomial_glm(DesignMatrix.trend([0, 1, 2]), [1, 2, 3], [9, 8, 7])
    b = fit_binomial_glm(DesignMatrix.trend([0, 1, 2, 3]), [1, 2, 3, 4], [9, 8, 7, 6])
    with pytest.raises(JointError, match="row counts"):
        stack_models([a, b], labels=("a", "b"))
    bad = fit_binomial_glm(DesignMatrix.trend([0, 1, 2]), [1, 2, 3], [9, 8, 7], max_iter=1)
    bad.converged = False
    with pytest.raises(JointError, match="converge"):
        stack_models([a, bad], labels=("a", "b"))


def _joint_from_z(z, R):
    z = np.asarray(z, float)
    return JointEstimate(tuple(f"s{i}" for i in range(z.size)), z.copy(), np.asarray(R, float),
                         np.asarray(R, float), z)


def test_independent_max_test():
    res = max_test(_joint_from_z([1.6449] * 3, np.eye(3)))
    np.testing.assert_allclose(res.adjusted_p, 1 - phi_cdf(1.6449) ** 3, atol=1e-6)
    assert res.adjusted_p[0] == pytest.approx(0.142625, abs=1e-4)
    assert res.critical_value == pytest.approx(stats.norm.ppf(0.95 ** (1 / 3)), abs=1e-4)
    np.testing.assert_allclose(res.simultaneous_lower_bounds, 1.6449 - res.critical_value)


def test_infinite_statistics():
    res = max_test(_joint_from_z([1.0, -np.inf, np.inf], np.eye(3)), with_bounds=False)
    assert res.adjusted_p[1] == 1.0 and res.adjusted_p[2] == 0.0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 4), min_size=3, max_size=3), st.floats(0.0, 0.95))
def test_bonferroni_bracketing(z, rho):
    R = np.full((3, 3), rho) + (1 - rho) * np.eye(3)
    res = max_test(_joint_from_z(z, R), with_bounds=False)
    unadj = stats.norm.sf(z)
    assert np.all(res.adjusted_p >= unadj - 1e-12)
    assert np.all(res.adjusted_p <= np.minimum(1, 3 * unadj) + 2e-4)


def _study_test(doses, tumors, n):
    data = compute_dose_scores(study_records("X", doses, tumors, n))
    ms = [fit_binomial_glm(DesignMatrix.trend(data.score(s)), data.successes, data.failures)
          for s in ("ari", "ord", "arilog")]
    return stack_models(ms), max_test(stack_models(ms))


def test_study_c_and_d_ari_p(lmice_records):
    for study, target in (("C", 0.027), ("D", 0.014)):
        recs = [r for r in lmice_records if r.study == study]
        _, res = _study_test([r.dose for r in recs], [r.tumor for r in recs], recs[0].at_risk)
        assert res.adjusted_p[0] == pytest.approx(target, abs=0.01)


def test_study_d_is_smallest_for_ari():
    _, res = _study_test([0, 71, 234, 810], [0, 1, 2, 5], 51)
    assert res.min_p == pytest.approx(0.014, abs=0.01)
    assert np.argmin(res.adjusted_p) == 0


@pytest.mark.xfail(strict=True, reason="grouped four-row sandwich correlation is biased low; see notes")
def test_grouped_study_c_correlation_matches_bootstrap(lmice_records):
    recs = [r for r in lmice_records if r.study == "C"]
    doses, tumors = [r.dose for r in recs], [r.tumor for r in recs]
    joint, _ = _study_test(doses, tumors, 50)
    data = compute_dose_scores(recs)
    boot = bootstrap_slope_correlation(doses, data.score_ari, data.score_arilog, [50] * 4, tumors, reps=20_000)
    r = joint.correlation[0, 2]
    assert 0.5 < r < 1 and abs(r - boot) < 0.05
