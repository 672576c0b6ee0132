"""Conditional log-likelihoods for the two retrospective designs.

Design I (ever-married sample) contributes the marriage density conditioned
on having married before the survey age; design II (everybody) contributes
the ordinary right-censored likelihood.  Mortality and leaving-school rates
have already cancelled from these forms; see :mod:`retrocohort.kernels` for
the unsimplified densities.

Two evaluation routes exist.  The per-record functions work from
``model.hazard_path`` (a :class:`~retrocohort.core_model.PiecewiseRate`)
and accept any :class:`MarriageRateModel`.  Log-linear models additionally
expand a cohort into a :class:`CellTable` of constant-rate exposure cells,
which gives the vectorised objective and its analytic gradient used for
fitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .core_model import ModelConfig, ModelError, PiecewiseRate
from .records import CohortSample, Design, SurveyRecord


class UnsupportedModelError(TypeError):
    """The model has no differentiable parameterisation."""


@runtime_checkable
class MarriageRateModel(Protocol):
    interval_censored: bool

    def rate(self, age: float, in_school: bool, covariates: tuple) -> float: ...

    def hazard_path(self, a_w: float, covariates: tuple) -> PiecewiseRate:
        """Marriage rate along one individual's schooling path, from ``a_0``."""
        ...


def log1mexp(x):
    """``log(1 - exp(-x))`` for ``x > 0`` without cancellation."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > math.log(2), np.log1p(-np.exp(-x)), np.log(-np.expm1(-x)))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# per-record contributions


def _path_hazard(path: PiecewiseRate, u: float, v: float) -> float:
    v = min(max(v, path.lo), path.hi)
    u = min(max(u, path.lo), v)
    return path.integrate(u, v)


def _log_numerator(record: SurveyRecord, model, path: PiecewiseRate) -> float:
    """Log density (or one-year probability) of marrying at the recorded age."""
    y = record.y
    if getattr(model, "interval_censored", False):
        lo = math.floor(y)
        return -_path_hazard(path, path.lo, lo) + log1mexp(_path_hazard(path, lo, lo + 1))
    rate = model.rate(y, y < record.a_w, record.covariates)
    if rate <= 0:
        return -math.inf
    return math.log(rate) - _path_hazard(path, path.lo, y)


def _sampling_end(record: SurveyRecord, model) -> float:
    z = record.z
    if getattr(model, "interval_censored", False) and record.y is not None:
        # a marriage reported in the current year of age reaches past z
        z = max(z, math.floor(record.y) + 1)
    return z


def _check_design_i(record: SurveyRecord, config: ModelConfig):
    if record.design is not Design.I:
        raise ModelError("design-I contribution requested for a design-II record")
    if record.y is None or record.delta != 1:
        raise ModelError("design-I record must be married")
    if not (config.a_0 <= record.y <= record.z):
        raise ModelError(f"marriage age {record.y} outside [{config.a_0}, {record.z}]")


def loglik_design_I(record: SurveyRecord, model, config: ModelConfig = ModelConfig()) -> float:
    """Prevalent-cohort contribution, conditioned on being married at the survey."""
    _check_design_i(record, config)
    path = model.hazard_path(record.a_w, record.covariates)
    sampling = _path_hazard(path, path.lo, _sampling_end(record, model))
    if sampling <= 0:
        raise ModelError("record is married although marriage before z is impossible")
    return _log_numerator(record, model, path) - log1mexp(sampling)


def loglik_design_I_uncorrected(record: SurveyRecord, model, config: ModelConfig = ModelConfig()) -> float:
    """Design-I numerator only (ignores the sampling condition; biased)."""
    _check_design_i(record, config)
    path = model.hazard_path(record.a_w, record.covariates)
    if _path_hazard(path, path.lo, _sampling_end(record, model)) <= 0:
        raise ModelError("record is married although marriage before z is impossible")
    return _log_numerator(record, model, path)


def loglik_design_II(record: SurveyRecord, model, config: ModelConfig = ModelConfig()) -> float:
    """Right-censored contribution of a general-cohort record."""
    if record.design is not Design.II:
        raise ModelError("design-II contribution requested for a design-I record")
    path = model.hazard_path(record.a_w, record.covariates)
    if record.delta:
        if record.y < config.a_0:
            raise ModelError(f"marriage age {record.y} below a_0={config.a_0}")
        return _log_numerator(record, model, path)
    return -_path_hazard(path, path.lo, record.z)


def record_loglik(record: SurveyRecord, model, config: ModelConfig = ModelConfig(),
                  correction: bool = True) -> float:
    if record.design is Design.II:
        return loglik_design_II(record, model, config)
    if correction:
        return loglik_design_I(record, model, config)
    return loglik_design_I_uncorrected(record, model, config)


# ---------------------------------------------------------------------------
# vectorised route for log-linear piecewise-constant models


@dataclass
class CellTable:
    """A cohort expanded into constant-rate cells.

    Each cell belongs to record ``rec`` and has design row ``X``; its rate is
    ``exp(X @ theta)``.  The exposures are the time the record spends in the
    cell during: the survival part of the numerator (``exposure``), the
    one-year marriage interval of interval-censored records
    (``exposure_event``), and ``[a_0, z]`` for the prevalent-cohort
    correction (``exposure_sampling``).
    """

    n_records: int
    rec: np.ndarray
    X: np.ndarray
    exposure: np.ndarray
    exposure_event: np.ndarray
    exposure_sampling: np.ndarray
    event_X: np.ndarray
    exact_event: np.ndarray
    interval_event: np.ndarray


class LogLinearModel:
    """Base for models with ``log rate = X @ theta`` on constant-rate cells.

    Subclasses define ``all_names``, ``hazard_path``, ``rate`` and
    ``cells``.  ``free`` selects the estimated parameters; others stay at
    their value in ``theta``.
    """

    all_names: tuple[str, ...] = ()
    intercepts: tuple[str, ...] = ()
    interval_censored = False

    def __init__(self, theta=None, free: Sequence[str] | None = None):
        p = len(self.all_names)
        self.theta_full = np.zeros(p) if theta is None else np.array(theta, dtype=float).reshape(p)
        names = self.all_names if free is None else tuple(free)
        unknown = set(names) - set(self.all_names)
        if unknown:
            raise ModelError(f"unknown parameters {sorted(unknown)}")
        self.free_index = np.array([self.all_names.index(n) for n in names], dtype=int)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(self.all_names[i] for i in self.free_index)

    @property
    def theta(self) -> np.ndarray:
        return self.theta_full[self.free_index].copy()

    def full(self, theta) -> np.ndarray:
        out = self.theta_full.copy()
        out[self.free_index] = theta
        return out

    def default_init(self, crude_log_rate: float) -> np.ndarray:
        """Intercepts at the crude log rate, everything else zero."""
        return np.array([crude_log_rate if n in self.intercepts else 0.0 for n in self.param_names])

    def with_theta(self, theta):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.theta_full = self.full(np.asarray(theta, dtype=float))
        return new

    def cells(self, cohort: CohortSample, config: ModelConfig) -> CellTable:
        raise NotImplementedError


class ConstantRateModel(LogLinearModel):
    """Constant marriage rate ``exp(m + b*x + c*in_school)``.

    Parameters
    ----------
    m, b, c : float
        Initial / fixed log-rate parameters.
    free : sequence of str, optional
        Parameters to estimate; defaults to all three.
    a_max : float
        Upper end of the age grid of ``hazard_path``.
    """

    all_names = ("m", "b", "c")
    intercepts = ("m",)

    def __init__(self, m=0.0, b=0.0, c=0.0, free=None, a_0=12.0, a_max=120.0):
        super().__init__([m, b, c], free)
        self.a_0 = a_0
        self.a_max = a_max

    def rate(self, age, in_school, covariates):
        m, b, c = self.theta_full
        return math.exp(m + b * covariates[0] + c * bool(in_school))

    def hazard_path(self, a_w, covariates):
        x = covariates[0]
        if a_w <= self.a_0:
            return PiecewiseRate.constant(self.rate(self.a_0, False, (x,)), self.a_0, self.a_max)
        if a_w >= self.a_max:
            return PiecewiseRate.constant(self.rate(self.a_0, True, (x,)), self.a_0, self.a_max)
        return PiecewiseRate([self.a_0, a_w, self.a_max],
                             [self.rate(self.a_0, True, (x,)), self.rate(self.a_0, False, (x,))])

    def cells(self, cohort, config):
        n = len(cohort)
        a0 = config.a_0
        x = cohort.column("x")
        married = cohort.married
        y = np.where(married, cohort.y, cohort.z)
        exact = married & (cohort.y <= cohort.z)
        end = np.where(exact, y, cohort.z)
        a_w = cohort.a_w

        def split(v):
            school = np.clip(np.minimum(a_w, v) - a0, 0, None)
            out = np.clip(v - np.maximum(a_w, a0), 0, None)
            return np.concatenate([school, out])

        ones = np.ones(n)
        X = np.vstack([np.column_stack([ones, x, ones]), np.column_stack([ones, x, 0 * ones])])
        event_X = np.column_stack([ones, x, (y < a_w).astype(float)]) * exact[:, None]
        return CellTable(
            n_records=n,
            rec=np.concatenate([np.arange(n), np.arange(n)]),
            X=X,
            exposure=split(end),
            exposure_event=np.zeros(2 * n),
            exposure_sampling=split(cohort.z),
            event_X=event_X,
            exact_event=exact,
            interval_event=np.zeros(n, dtype=bool),
        )


class SchoolingSwitchModel:
    """Fixed marriage rates: ``in_school`` before ``a_w``, ``out_of_school`` after.

    Not parameterised; only the per-record route applies.
    """

    interval_censored = False

    def __init__(self, in_school: PiecewiseRate, out_of_school: PiecewiseRate, a_0: float = 12.0):
        lo = max(in_school.lo, out_of_school.lo, a_0)
        self.a_0 = lo
        self.hi = min(in_school.hi, out_of_school.hi)
        self.lambda1 = in_school
        self.lambda0 = out_of_school

    def rate(self, age, in_school, covariates=()):
        return (self.lambda1 if in_school else self.lambda0)(age)

    def hazard_path(self, a_w, covariates=()):
        cuts = np.union1d(np.union1d(self.lambda1.cuts, self.lambda0.cuts), [a_w])
        cuts = cuts[(cuts >= self.a_0) & (cuts <= self.hi)]
        cuts = np.union1d(cuts, [self.a_0, self.hi])
        mids = 0.5 * (cuts[:-1] + cuts[1:])
        values = np.where(mids < a_w, self.lambda1(mids), self.lambda0(mids))
        return PiecewiseRate(cuts, values)


# ---------------------------------------------------------------------------
# joint objective


def _validate(cohorts: Sequence[CohortSample], config: ModelConfig):
    for c in cohorts:
        try:
            c.validate(config)
        except ModelError as exc:
            raise ModelError(f"design-{c.design.value} cohort: {exc}") from exc


class Objective:
    """Sum of design-appropriate contributions over several cohorts.

    ``theta`` arguments are the model's free parameters.  ``correction=False``
    drops the prevalent-cohort denominator from design-I cohorts.
    """

    def __init__(self, cohorts: Sequence[CohortSample], model: LogLinearModel,
                 config: ModelConfig = ModelConfig(), correction: bool = True):
        if not isinstance(model, LogLinearModel):
            raise UnsupportedModelError(f"{type(model).__name__} has no differentiable parameterisation")
        _validate(cohorts, config)
        self.model = model
        self.config = config
        self.terms = []
        for cohort in cohorts:
            table = model.cells(cohort, config)
            corrected = correction and cohort.design is Design.I
            if corrected or cohort.design is Design.I:
                total = np.bincount(table.rec, table.exposure_sampling, minlength=table.n_records)
                if np.any(total <= 0):
                    raise ModelError("married design-I record with no exposure before z")
            self.terms.append((table, corrected))
        self.n_records = sum(t.n_records for t, _ in self.terms)

    @property
    def n_params(self) -> int:
        return len(self.model.free_index)

    def per_record(self, theta) -> list[np.ndarray]:
        beta = self.model.full(theta)
        out = []
        for t, corrected in self.terms:
            r = np.exp(t.X @ beta)
            ll = -np.bincount(t.rec, r * t.exposure, minlength=t.n_records)
            if t.exact_event.any():
                ll[t.exact_event] += t.event_X[t.exact_event] @ beta
            if t.interval_event.any():
                lam = np.bincount(t.rec, r * t.exposure_event, minlength=t.n_records)
                ll[t.interval_event] += log1mexp(lam[t.interval_event])
            if corrected:
                ll -= log1mexp(np.bincount(t.rec, r * t.exposure_sampling, minlength=t.n_records))
            out.append(ll)
        return out

    def loglik(self, theta) -> float:
        return float(sum(np.sum(ll) for ll in self.per_record(theta)))

    def loglik_exact(self, theta) -> float:
        """Order-independent (correctly rounded) sum of the contributions."""
        return math.fsum(v for ll in self.per_record(theta) for v in ll.tolist())

    def value_and_grad(self, theta) -> tuple[float, np.ndarray]:
        beta = self.model.full(theta)
        free = self.model.free_index
        value = 0.0
        grad = np.zeros(len(beta))
        for t, corrected in self.terms:
            r = np.exp(t.X @ beta)
            w = r * t.exposure
            value -= w.sum()
            grad -= t.X.T @ w
            if t.exact_event.any():
                ev = t.event_X[t.exact_event]
                value += float(np.sum(ev @ beta))
                grad += np.asarray(ev.sum(axis=0)).ravel()
            if t.interval_event.any():
                we = r * t.exposure_event
                lam = np.bincount(t.rec, we, minlength=t.n_records)
                sel = t.interval_event
                value += log1mexp(lam[sel]).sum()
                coef = np.zeros(t.n_records)
                coef[sel] = 1.0 / np.expm1(lam[sel])
                grad += t.X.T @ (we * coef[t.rec])
            if corrected:
                ws = r * t.exposure_sampling
                big = np.bincount(t.rec, ws, minlength=t.n_records)
                value -= log1mexp(big).sum()
                grad -= t.X.T @ (ws / np.expm1(big)[t.rec])
        return float(value), grad[free]

    def gradient(self, theta) -> np.ndarray:
        return self.value_and_grad(theta)[1]


def joint_loglik(cohorts: Sequence[CohortSample], model, config: ModelConfig = ModelConfig(),
                 correction: bool = True) -> float:
    """Total conditional log-likelihood over design-I and design-II cohorts."""
    if not cohorts:
        return 0.0
    if isinstance(model, LogLinearModel):
        return Objective(cohorts, model, config, correction).loglik_exact(model.theta)
    _validate(cohorts, config)
    return math.fsum(record_loglik(rec, model, config, correction)
                     for c in cohorts for rec in c.records())


def loglik_gradient(cohorts: Sequence[CohortSample], model, theta=None,
                    config: ModelConfig = ModelConfig(), correction: bool = True) -> np.ndarray:
    """Analytic gradient of :func:`joint_loglik` in the model's free parameters."""
    if not isinstance(model, LogLinearModel):
        raise UnsupportedModelError(f"{type(model).__name__} has no differentiable parameterisation")
    theta = model.theta if theta is None else np.asarray(theta, dtype=float)
    if not cohorts:
        return np.zeros(len(theta))
    return Objective(cohorts, model, config, correction).gradient(theta)
