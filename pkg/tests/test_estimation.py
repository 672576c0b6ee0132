import json
import math

import numpy as np
import pytest

from retrocohort.core_model import ModelConfig
from retrocohort.estimation import (
    VARIANTS,
    Z95,
    FitResult,
    ReplicationSummary,
    covariance_from_hessian,
    fit,
    fit_variants,
    numerical_hessian,
    run_scenario,
    standard_errors,
)
from retrocohort.likelihood import ConstantRateModel, Objective
from retrocohort.records import CohortSample, Design
from retrocohort.simulator import replication_rng, scenario, simulate_cohorts


def exponential_cohort(rng, n, rate, z_max=40.0):
    """Design-II records with marriage after a_0 at a constant rate, censored at z."""
    z = rng.uniform(13.0, z_max, n)
    y = 12.0 + rng.exponential(1 / rate, n)
    y[y > z] = np.nan
    return CohortSample(Design.II, z, y, np.full(n, 6.0), np.zeros((n, 1)))


def test_exponential_mle_closed_form(rng):
    c = exponential_cohort(rng, 3000, 0.15)
    events = int(c.married.sum())
    exposure = float(np.sum(np.where(c.married, c.y, c.z) - 12.0))
    res = fit([c], ConstantRateModel(free=("m",)))
    assert res.converged
    assert math.exp(res.estimate("m")) == pytest.approx(events / exposure, rel=1e-8)
    # observed information of log(rate) is the event count
    assert res.se[0] == pytest.approx(1 / math.sqrt(events), rel=1e-5)


@pytest.mark.parametrize("hessian,expected", [
    ([[-4.0]], [0.5]),
    ([[-4.0, 0.0], [0.0, -9.0]], [0.5, 1 / 3]),
    ([[-2.0, 0.0], [0.0, -0.25]], [1 / math.sqrt(2), 2.0]),
])
def test_standard_errors_examples(hessian, expected):
    np.testing.assert_allclose(standard_errors(np.array(hessian)), expected, rtol=1e-14)


@pytest.mark.parametrize("hessian", [
    [[0.0]],
    [[-1.0, -1.0], [-1.0, -1.0]],
    [[4.0]],
    [[np.nan]],
])
def test_standard_errors_unavailable(hessian):
    assert standard_errors(np.array(hessian)) is None


def test_numerical_hessian_of_quadratic():
    a = np.array([[-3.0, 1.0], [1.0, -2.0]])
    h = numerical_hessian(lambda t: a @ t, np.array([0.3, -20.0]))
    np.testing.assert_allclose(h, a, atol=1e-8)
    assert np.array_equal(h, h.T)
    cov = covariance_from_hessian(h)
    np.testing.assert_allclose(cov, np.linalg.inv(-a), atol=1e-7)


@pytest.fixture(scope="module")
def nd_cohorts():
    sc = scenario("nd")
    return simulate_cohorts(replication_rng(sc.seed, 0), sc)


def test_fit_simulated_nd(nd_cohorts):
    res = fit(list(nd_cohorts), ConstantRateModel())
    assert res.converged
    np.testing.assert_allclose(res.theta_hat, (-1.5, 0.5, -0.5), atol=4 * res.se.max())
    assert np.all(np.abs(res.theta_hat - (-1.5, 0.5, -0.5)) < 4 * res.se)
    np.testing.assert_array_equal(res.covariance, res.covariance.T)
    assert np.all(np.linalg.eigvalsh(res.covariance) > 0)
    np.testing.assert_allclose(res.ci95[:, 0], res.theta_hat - Z95 * res.se, rtol=0)
    np.testing.assert_allclose(res.ci95[:, 1], res.theta_hat + Z95 * res.se, rtol=0)


def test_fit_from_poor_start_and_gradient_zero(nd_cohorts):
    model = ConstantRateModel()
    a = fit(list(nd_cohorts), model)
    b = fit(list(nd_cohorts), model, theta_init=[-4.0, -2.0, 2.0])
    np.testing.assert_allclose(a.theta_hat, b.theta_hat, atol=1e-7)
    g = Objective(list(nd_cohorts), model).gradient(a.theta_hat)
    assert np.max(np.abs(g)) / a.n_records < 1e-6


def test_zero_marriages_reported_as_boundary():
    n = 50
    c = CohortSample(Design.II, np.linspace(13, 30, n), np.full(n, np.nan), np.full(n, 6.0), np.zeros((n, 1)))
    res = fit([c], ConstantRateModel())
    assert not res.converged
    assert "boundary" in res.message


def test_fit_result_json_roundtrip(nd_cohorts):
    res = fit(list(nd_cohorts), ConstantRateModel())
    d = json.loads(res.to_json())
    assert {"names", "estimates", "se", "ci_low", "ci_high", "loglik", "converged"} <= set(d)
    back = FitResult.from_dict(d)
    np.testing.assert_array_equal(back.theta_hat, res.theta_hat)
    np.testing.assert_array_equal(back.se, res.se)
    assert back.names == res.names and back.converged == res.converged


def test_fit_result_json_with_missing_se():
    res = FitResult(("a", "b"), np.array([0.1, 0.0]), None, np.array([0.2, np.nan]), -1.0, True, 3,
                    flagged=("b",))
    text = res.to_json()
    assert "NaN" not in text
    back = FitResult.from_dict(json.loads(text))
    assert math.isnan(back.se[1]) and back.flagged == ("b",)


def test_fit_variants_bias_direction(nd_cohorts):
    fits = fit_variants(*nd_cohorts)
    assert set(fits) == set(VARIANTS)
    # the uncorrected design-I fit overstates the marriage rate
    assert fits["design_I_uncorrected"].estimate("m") > fits["design_I"].estimate("m") + 0.1


def test_replication_summary_statistics():
    sc = scenario("nd").with_overrides(replications=6, n_per_design=300)
    s = run_scenario(sc)
    assert s.n_replications == 6
    for r in s.rows:
        assert r["bias"] == r["mean"] - r["truth"]
        assert 0.0 <= r["coverage"] <= 1.0
        assert r["mc_sd"] > 0
    again = run_scenario(sc)
    assert again.rows == s.rows


def test_replication_independent_of_workers():
    sc = scenario("diff-mort").with_overrides(replications=4, n_per_design=200)
    a = run_scenario(sc, workers=1, chunk=1)
    b = run_scenario(sc, workers=2, chunk=3)
    assert a.rows == b.rows


def test_single_replication_leaves_sd_empty(tmp_path):
    sc = scenario("nd").with_overrides(replications=1, n_per_design=200)
    s = run_scenario(sc)
    assert all(math.isnan(r["mc_sd"]) for r in s.rows)
    path = tmp_path / "t.csv"
    s.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(ReplicationSummary.COLUMNS)
    assert len(lines) == 1 + len(VARIANTS) * 3
    assert all(line.split(",")[5] == "" for line in lines[1:])


def test_nonconverged_replications_are_excluded():
    sc = scenario("nd")
    reps = [
        {"index": 0, "sizes": (10, 12),
         "fits": {v: (np.array([-1.4, 0.5, -0.5]), np.array([0.1, 0.1, 0.1]), True) for v in VARIANTS}},
        {"index": 1, "sizes": (10, 12),
         "fits": {v: (np.array([9.0, 9.0, 9.0]), None, False) for v in VARIANTS}},
    ]
    s = ReplicationSummary.from_replications(sc, reps)
    assert s.excluded == {v: 1 for v in VARIANTS}
    assert s.row("combined", "m")["mean"] == pytest.approx(-1.4)


@pytest.mark.slow
def test_doubling_sample_size_shrinks_mc_sd():
    small = run_scenario(scenario("nd").with_overrides(replications=1000, n_per_design=625, seed=11))
    large = run_scenario(scenario("nd").with_overrides(replications=1000, n_per_design=1250, seed=12))
    for variant in ("combined", "design_I", "design_II"):
        for p in ("m", "b", "c"):
            ratio = large.row(variant, p)["mc_sd"] / small.row(variant, p)["mc_sd"]
            assert 0.63 <= ratio <= 0.78, (variant, p, ratio)


def test_config_threaded_through_fit(nd_cohorts):
    res = fit([nd_cohorts[1]], ConstantRateModel(), config=ModelConfig())
    assert res.n_records == len(nd_cohorts[1])
