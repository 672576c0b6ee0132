"""Predictive marriage probabilities for women who have finished schooling.

Given a marriage-rate curve ``lambda0`` (out of school) and a mortality table,
the probability that a woman unmarried and alive at age ``a1`` marries before
``a2`` is the cumulative incidence of marriage in the presence of death.  All
integrals are exact sums over the common piecewise-constant grid.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_model import ModelError, PiecewiseRate
from .estimation import FitResult
from .likelihood import ConstantRateModel
from .survey_analysis import COVARIATE_NAMES, IncidenceModel


@dataclass(frozen=True)
class MortalityTable:
    """Death rates by age.

    ``rate`` applies to unmarried women; ``married`` to married women and
    defaults to ``rate`` (mortality not depending on marital status).
    """

    rate: PiecewiseRate
    married: PiecewiseRate | None = None

    @property
    def married_rate(self) -> PiecewiseRate:
        return self.rate if self.married is None else self.married

    @classmethod
    def zero(cls, lo: float = 12.0, hi: float = 50.0) -> "MortalityTable":
        return cls(PiecewiseRate.constant(0.0, lo, hi))

    @classmethod
    def constant(cls, mu: float, lo: float = 12.0, hi: float = 50.0, married: float | None = None):
        return cls(PiecewiseRate.constant(mu, lo, hi),
                   None if married is None else PiecewiseRate.constant(married, lo, hi))

    @classmethod
    def from_csv(cls, path) -> "MortalityTable":
        """Read ``age_low,age_high,rate`` rows; an optional ``rate_married`` column is honoured."""
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = [h.strip() for h in reader.fieldnames or []]
            reader.fieldnames = header
            for col in ("age_low", "age_high", "rate"):
                if col not in header:
                    raise ModelError(f"{path}: missing required column {col!r}")
            lows, highs, rates, married = [], [], [], []
            for row in reader:
                where = f"{path}:{reader.line_num}"
                try:
                    lows.append(float(row["age_low"]))
                    highs.append(float(row["age_high"]))
                    rates.append(float(row["rate"]))
                    if "rate_married" in header:
                        married.append(float(row["rate_married"]))
                except ValueError as exc:
                    raise ModelError(f"{where}: {exc}") from None
                if rates[-1] < 0 or (married and married[-1] < 0):
                    raise ModelError(f"{where}: negative rate")
        if not lows:
            raise ModelError(f"{path}: no rows")
        order = np.argsort(lows)
        lows, highs = np.array(lows)[order], np.array(highs)[order]
        if not np.allclose(lows[1:], highs[:-1]):
            raise ModelError(f"{path}: age intervals must be contiguous")
        cuts = np.append(lows, highs[-1])
        rate = PiecewiseRate(cuts, np.array(rates)[order])
        mar = PiecewiseRate(cuts, np.array(married)[order]) if married else None
        return cls(rate, mar)


def _marriage_curve(model, x) -> PiecewiseRate:
    """The out-of-school marriage rate for covariates ``x``."""
    if isinstance(model, PiecewiseRate):
        return model
    if hasattr(model, "marriage_rate"):
        return model.marriage_rate(x)
    # schooling ended before any marriage exposure
    return model.hazard_path(model.a_0, tuple(np.atleast_1d(x)))


def _grid(a1, a2, *rates):
    pts = {a1, a2}
    for r in rates:
        if a1 < r.lo or a2 > r.hi:
            raise ModelError(f"[{a1}, {a2}] not covered by a rate grid [{r.lo}, {r.hi}]")
        pts.update(c for c in r.cuts if a1 < c < a2)
    pts = np.array(sorted(pts))
    mids = 0.5 * (pts[:-1] + pts[1:])
    return pts, mids


def _phi(rate, width):
    """``(1 - exp(-rate*width)) / rate``, continuous at ``rate = 0``."""
    rate = np.asarray(rate, dtype=float)
    small = np.abs(rate * width) < 1e-12
    safe = np.where(small, 1.0, rate)
    return np.where(small, width, -np.expm1(-safe * width) / safe)


def _check_ages(a1, a2):
    if a2 < a1:
        raise ModelError(f"a2={a2} before a1={a1}")


def predict_marriage_by_age(model, mortality: MortalityTable, t, a1: float, a2: float, x=()) -> float:
    """Probability of marrying in ``[a1, a2)`` for a woman unmarried and alive at ``a1``.

    ``t`` (calendar time at ``a1``) does not enter: rates are indexed by age
    and birth cohort only.
    """
    _check_ages(a1, a2)
    lam = _marriage_curve(model, x)
    if a2 == a1:
        return 0.0
    pts, mids = _grid(a1, a2, lam, mortality.rate)
    w = np.diff(pts)
    l0 = lam(mids)
    tot = l0 + mortality.rate(mids)
    surv_start = np.exp(-np.concatenate([[0.0], np.cumsum(tot * w)[:-1]]))
    return float(np.sum(surv_start * l0 * _phi(tot, w)))


def predict_married_and_alive(model, mortality: MortalityTable, t, a1: float, a2: float, x=()) -> float:
    """Probability of having married by ``a2`` and being alive at ``a2``."""
    _check_ages(a1, a2)
    lam = _marriage_curve(model, x)
    if a2 == a1:
        return 0.0
    mu_m = mortality.married_rate
    pts, mids = _grid(a1, a2, lam, mortality.rate, mu_m)
    w = np.diff(pts)
    l0 = lam(mids)
    m0 = mortality.rate(mids)
    m1 = mu_m(mids)
    # after marrying at a, survival to a2 uses the married rate; factor it out
    eff = l0 + m0 - m1
    start = np.exp(-np.concatenate([[0.0], np.cumsum(eff * w)[:-1]]))
    married_survival = math.exp(-float(np.sum(m1 * w)))
    return float(married_survival * np.sum(start * l0 * _phi(eff, w)))


def model_from_fit(fit: FitResult):
    """Rebuild the fitted rate model from a :class:`FitResult`."""
    names = tuple(fit.names)
    if names == IncidenceModel().all_names:
        return IncidenceModel(fit.theta_hat)
    if set(names) <= set(ConstantRateModel.all_names):
        full = dict(zip(names, fit.theta_hat))
        return ConstantRateModel(full.get("m", 0.0), full.get("b", 0.0), full.get("c", 0.0), a_max=50.0)
    raise ModelError(f"unrecognised parameter set {names}")


def prediction_rows(model, mortality: MortalityTable, a1: float, ages, covariates: dict | None = None,
                    t=None) -> list[dict]:
    """Plot data: one row per (birth cohort, age) for the survey model.

    ``covariates`` fixes the non-cohort codes (default: reference levels).
    Other models give a single stratum keyed by ``x``.
    """
    rows = []
    covariates = dict(covariates or {})
    if isinstance(model, IncidenceModel):
        for cohort in range(4):
            codes = [cohort if c == "birth_cohort" else int(covariates.get(c, 0)) for c in COVARIATE_NAMES]
            for a in ages:
                rows.append({"stratum": f"birth_cohort={cohort}", "age": a,
                             "probability": predict_marriage_by_age(model, mortality, t, a1, a, codes),
                             "married_and_alive": predict_married_and_alive(model, mortality, t, a1, a, codes)})
    else:
        x = float(covariates.get("x", 0))
        for a in ages:
            rows.append({"stratum": f"x={x:g}", "age": a,
                         "probability": predict_marriage_by_age(model, mortality, t, a1, a, (x,)),
                         "married_and_alive": predict_married_and_alive(model, mortality, t, a1, a, (x,))})
    return rows
