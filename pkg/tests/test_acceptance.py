"""Acceptance criteria 1-12.

The four 1000-replication simulation scenarios are run once per session;
each criterion prints one PASS/FAIL line (collected again in the terminal
summary).
"""
import math
import os
import time

import numpy as np
import pytest
from scipy import integrate

from retrocohort.core_model import ModelConfig, PiecewiseRate
from retrocohort.kernels import RateBundle, conditional_design_I, conditional_design_II
from retrocohort.likelihood import (
    ConstantRateModel,
    Objective,
    SchoolingSwitchModel,
    loglik_design_I,
    loglik_design_II,
)
from retrocohort.prediction import MortalityTable, predict_marriage_by_age, predict_married_and_alive
from retrocohort.records import Design, SurveyRecord
from retrocohort.simulator import replication_rng, scenario, simulate_cohorts
from retrocohort.estimation import run_scenario
from retrocohort.survey_analysis import (
    IncidenceModel,
    default_true_theta,
    fit_survey,
    generate_survey,
    interval_censored_numerator,
)

CFG = ModelConfig()
PARAMS = ("m", "b", "c")


@pytest.fixture(scope="session")
def tables():
    out, timing = {}, {}
    workers = os.cpu_count() or 1
    for name in ("nd", "diff-school", "diff-mort", "diff-both"):
        t0 = time.perf_counter()
        out[name] = run_scenario(scenario(name), workers=workers)
        timing[name] = time.perf_counter() - t0
    out["_timing"] = timing
    return out


def fmt(row, *keys):
    return " ".join(f"{k}={row[k]:+.3f}" for k in keys)


def test_criterion_01_combined_nondifferential(tables, criterion):
    s = tables["nd"]
    target_sd = dict(zip(PARAMS, (0.029, 0.037, 0.038)))
    ok, parts = True, []
    for p in PARAMS:
        r = s.row("combined", p)
        ok &= abs(r["bias"]) <= 0.005
        ok &= abs(r["mc_sd"] / target_sd[p] - 1) <= 0.15
        ok &= 0.93 <= r["coverage"] <= 0.965
        parts.append(f"{p}: bias={r['bias']:+.4f} sd={r['mc_sd']:.4f} cov={r['coverage']:.3f}")
    ok &= sum(s.excluded.values()) <= 0.01 * s.n_replications * 4
    runtime = tables["_timing"]["nd"]
    ok &= runtime <= 30 * 60
    criterion(1, ok, "; ".join(parts) + f"; {runtime:.0f}s for 1000 replications")


def test_criterion_02_selection_bias(tables, criterion):
    s = tables["nd"]
    m, b = s.row("design_I_uncorrected", "m"), s.row("design_I_uncorrected", "b")
    ok = abs(m["bias"] - 0.236) <= 0.02 and abs(b["bias"] + 0.106) <= 0.015 and m["coverage"] <= 0.01
    criterion(2, ok, f"bias(m)={m['bias']:+.4f} bias(b)={b['bias']:+.4f} coverage(m)={m['coverage']:.3f}")


def test_criterion_03_differential_schooling(tables, criterion):
    s = tables["diff-school"]
    comb, one = s.row("combined", "c")["bias"], s.row("design_I", "c")["bias"]
    ok = abs(comb - 0.030) <= 0.010 and abs(one - 0.071) <= 0.015
    criterion(3, ok, f"combined bias(c)={comb:+.4f} design-I bias(c)={one:+.4f}")


def test_criterion_04_differential_mortality(tables, criterion):
    s = tables["diff-mort"]
    comb, two = s.row("combined", "m"), s.row("design_II", "m")
    ok = (abs(comb["bias"] + 0.047) <= 0.010 and abs(comb["coverage"] - 0.709) <= 0.05
          and abs(two["bias"] + 0.043) <= 0.010)
    criterion(4, ok, f"combined bias(m)={comb['bias']:+.4f} coverage(m)={comb['coverage']:.3f} "
                     f"design-II bias(m)={two['bias']:+.4f}")


def test_criterion_05_differential_both(tables, criterion):
    s = tables["diff-both"]
    m, c = s.row("combined", "m")["bias"], s.row("combined", "c")["bias"]
    ok = abs(m + 0.055) <= 0.010 and abs(c - 0.031) <= 0.010
    criterion(5, ok, f"combined bias(m)={m:+.4f} bias(c)={c:+.4f}")


def test_criterion_06_efficiency(tables, criterion):
    s = tables["nd"]
    ok = True
    for p in PARAMS:
        comb = s.row("combined", p)["mc_sd"]
        ok &= comb < s.row("design_I", p)["mc_sd"] and comb < s.row("design_II", p)["mc_sd"]
    sd = {v: s.row(v, "m")["mc_sd"] for v in ("combined", "design_II", "design_I")}
    for v, target in zip(sd, (0.029, 0.038, 0.049)):
        ok &= abs(sd[v] / target - 1) <= 0.15
    ok &= sd["combined"] < sd["design_II"] < sd["design_I"]
    criterion(6, ok, "MC SD(m): " + " < ".join(f"{v}={x:.4f}" for v, x in sd.items()))


def test_criterion_07_cohort_sizes(tables, criterion):
    sizes = tables["nd"].mean_sizes
    ok = all(abs(s / t - 1) <= 0.03 for s, t in zip(sizes, (1864, 2229)))
    criterion(7, ok, f"mean sizes ({sizes[0]:.1f}, {sizes[1]:.1f})")


def _random_piecewise(rng, lo, hi, scale):
    k = rng.integers(1, 4)
    inner = np.sort(rng.uniform(lo + 1, hi - 1, k - 1))
    return PiecewiseRate(np.concatenate([[lo], inner, [hi]]), scale * rng.uniform(0.3, 1.5, k))


def _random_tuple(rng, a_max=60.0):
    alpha0 = _random_piecewise(rng, CFG.a_e, a_max, 0.2)
    lam0 = _random_piecewise(rng, CFG.a_e, a_max, 0.2)
    lam1 = _random_piecewise(rng, CFG.a_e, a_max, 0.08)
    mu0 = _random_piecewise(rng, CFG.a_e, a_max, 0.01)
    mu1 = _random_piecewise(rng, CFG.a_e, a_max, 0.01)
    z = rng.uniform(13.0, 40.0)
    # generic schooling end: after a_0 and before z, or still in school
    a_w = math.inf if rng.random() < 0.25 else rng.uniform(CFG.a_0 + 1, max(z, CFG.a_0 + 1.5))
    a_w = min(a_w, z) if math.isfinite(a_w) else a_w
    y = rng.uniform(CFG.a_0, z)
    t = rng.uniform(1990, 2010)
    return alpha0, lam0, lam1, mu0, mu1, t, y, z, a_w


def _bundle(alpha0, lam0, lam1, mu0, mu1, d=0.0):
    return RateBundle(alpha0=alpha0, alpha1=alpha0.scaled(math.exp(d)), lambda0=lam0, lambda1=lam1,
                      mu={(0, 0): mu0, (0, 1): mu0, (1, 0): mu1, (1, 1): mu1})


def test_criterion_08_kernel_cancellation(criterion):
    rng = np.random.default_rng(808)
    worst, detected, n = 0.0, 0, 1000
    for _ in range(n):
        alpha0, lam0, lam1, mu0, mu1, t, y, z, a_w = _random_tuple(rng)
        model = SchoolingSwitchModel(lam1, lam0)
        B = _bundle(alpha0, lam0, lam1, mu0, mu1)
        assert B.cancellation_holds
        rec_i = SurveyRecord(Design.I, z, y, a_w)
        rec_ii = SurveyRecord(Design.II, z, y, a_w)
        rec_ii0 = SurveyRecord(Design.II, z, None, a_w)
        pairs = [
            (conditional_design_I(B, t, y, z, a_w, method="quad"), math.exp(loglik_design_I(rec_i, model))),
            (conditional_design_II(B, t, y, z, a_w, method="quad"), math.exp(loglik_design_II(rec_ii, model))),
            (conditional_design_II(B, t, None, z, a_w, method="quad"), math.exp(loglik_design_II(rec_ii0, model))),
        ]
        worst = max(worst, max(abs(k / l - 1) for k, l in pairs))
        Bd = _bundle(alpha0, lam0, lam1, mu0, mu1, d=1.0)
        off = conditional_design_I(Bd, t, y, z, a_w) / math.exp(loglik_design_I(rec_i, model))
        detected += abs(off - 1) > 1e-4
    ok = worst <= 1e-8 and detected >= 0.99 * n
    criterion(8, ok, f"max rel. error under flags {worst:.1e}; d=1 detected on {detected}/{n} tuples")


def _max_fd_error(obj, theta, h=1e-5):
    g = obj.gradient(theta)
    worst = 0.0
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h
        fd = (obj.loglik_exact(theta + e) - obj.loglik_exact(theta - e)) / (2 * h)
        worst = max(worst, abs(g[j] - fd))
    return worst


def test_criterion_09_gradient(criterion):
    sc = scenario("diff-both")
    cohorts = list(simulate_cohorts(replication_rng(sc.seed, 99), sc))
    rng = np.random.default_rng(909)
    objectives = [Objective(cohorts, ConstantRateModel()), Objective(cohorts[:1], ConstantRateModel()),
                  Objective(cohorts[:1], ConstantRateModel(), correction=False),
                  Objective(cohorts[1:], ConstantRateModel())]
    worst = max(_max_fd_error(objectives[k % 4], np.array([-1.5, 0.5, -0.5]) + rng.uniform(-1, 1, 3))
                for k in range(100))
    truth = default_true_theta()
    survey = [generate_survey(rng, 1500, "I", truth), generate_survey(rng, 1500, "II", truth)]
    obj = Objective(survey, IncidenceModel())
    worst_survey = max(_max_fd_error(obj, truth + rng.uniform(-0.5, 0.5, truth.size)) for _ in range(100))
    ok = worst <= 1e-6 and worst_survey <= 1e-6
    criterion(9, ok, f"max |analytic - FD| = {worst:.2e} (3-parameter), {worst_survey:.2e} (31-parameter survey), "
                     "100 points each")


def test_criterion_10_closure(criterion):
    rng = np.random.default_rng(1010)
    worst_density = 0.0
    for _ in range(20):
        model = ConstantRateModel(rng.uniform(-3, 0), rng.uniform(-1, 1), rng.uniform(-1, 1))
        z = rng.uniform(13, 40)
        a_w = rng.choice([6.0, rng.uniform(12, z), math.inf])
        x = float(rng.integers(2))
        f = lambda y: math.exp(loglik_design_I(SurveyRecord(Design.I, z, y, a_w, (x,)), model))
        pts = [a_w] if 12 < a_w < z else None
        total = integrate.quad(f, 12.0, z, points=pts, epsabs=0, epsrel=1e-12)[0]
        worst_density = max(worst_density, abs(total - 1))
    worst_interval = 0.0
    for _ in range(20):
        spec = IncidenceModel(rng.normal(-2.0, 0.8, 31))
        x = tuple(int(v) for v in (rng.integers(4), rng.integers(2), rng.integers(4), rng.integers(5), rng.integers(4)))
        total = math.fsum(interval_censored_numerator(spec, x, y) for y in range(12, 50))
        total += math.exp(-spec.hazard_path(None, x).integrate(12, 50))
        worst_interval = max(worst_interval, abs(total - 1))
    ok = worst_density <= 1e-8 and worst_interval <= 1e-10
    criterion(10, ok, f"design-I density |1-integral| {worst_density:.1e}; interval outcomes {worst_interval:.1e}")


def test_criterion_11_survey_round_trip(criterion):
    rng = np.random.default_rng(20240101)
    truth = default_true_theta()
    c1, c2 = generate_survey(rng, 20000, "I", truth), generate_survey(rng, 20000, "II", truth)
    res = fit_survey(c1, c2)
    z = (res.theta_hat - truth) / res.se
    beta_ok = bool(np.all(np.abs(z[17:]) <= 3))
    covered = int(np.sum(np.abs(z) <= 1.959964))
    ok = res.converged and beta_ok and covered >= 0.9 * 31
    criterion(11, ok, f"max |z| over 14 effects {np.max(np.abs(z[17:])):.2f}; covered {covered}/31")


def _mc_paths(rng, lam, mu, mu_married, a1, a2, n):
    """Simulate marriage and death from a1 by inverting cumulative hazards."""
    grid = np.union1d(np.union1d(lam.cuts, mu.cuts), mu_married.cuts)
    grid = np.concatenate([[a1], grid[(grid > a1) & (grid < a2)], [a2]])

    def first_event(rate_at, e):
        mids = 0.5 * (grid[:-1] + grid[1:])
        r = np.array([rate_at(m) for m in mids])
        cum = np.concatenate([[0.0], np.cumsum(r * np.diff(grid))])
        k = np.searchsorted(cum, e, side="right") - 1
        k = np.clip(k, 0, len(r) - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = grid[k] + (e - cum[k]) / r[k]
        return np.where(e < cum[-1], t, np.inf)

    t_marry = first_event(lam, rng.exponential(size=n))
    t_death = first_event(mu, rng.exponential(size=n))
    married = t_marry < np.minimum(t_death, a2)
    # married women face the married death rate from the marriage age on
    e = rng.exponential(size=n)
    alive = np.ones(n, dtype=bool)
    idx = np.flatnonzero(married)
    for i0 in range(0, idx.size, 100_000):
        part = idx[i0:i0 + 100_000]
        hz = np.array([mu_married.integrate(t, a2) for t in t_marry[part]])
        alive[part] = e[part] > hz
    return married, married & alive


def test_criterion_12_prediction_oracles(criterion):
    lam = PiecewiseRate([12, 15, 18, 22, 30, 50], [0.02, 0.15, 0.25, 0.12, 0.05])
    mort = MortalityTable(PiecewiseRate([12, 20, 35, 50], [0.004, 0.008, 0.015]),
                          PiecewiseRate([12, 25, 50], [0.006, 0.03]))
    a1, a2, n = 14.0, 32.0, 1_000_000
    p = predict_marriage_by_age(lam, mort, None, a1, a2)
    q = predict_married_and_alive(lam, mort, None, a1, a2)
    married, married_alive = _mc_paths(np.random.default_rng(1212), lam, mort.rate, mort.married_rate, a1, a2, n)
    zp = (married.mean() - p) / math.sqrt(p * (1 - p) / n)
    zq = (married_alive.mean() - q) / math.sqrt(q * (1 - q) / n)
    exact = predict_marriage_by_age(lam, MortalityTable.zero(), None, a1, a2)
    reduced = abs(exact - -math.expm1(-lam.integrate(a1, a2)))
    ok = abs(zp) <= 3 and abs(zq) <= 3 and reduced <= 1e-12
    criterion(12, ok, f"MC z-scores {zp:+.2f} / {zq:+.2f}; mu=0 reduction error {reduced:.1e}")
