"""Unsimplified state densities of the joint schooling/marriage process.

These include the leaving-school and mortality terms that cancel from the
conditional likelihoods under local independence of leaving school (A2) and
mortality that does not depend on marital status.  They serve as the oracle
for the simplified forms in :mod:`retrocohort.likelihood`.

All rates are age-indexed piecewise-constant functions, so every exponent is
an exact piecewise sum.  The calendar-time argument ``t`` is accepted for
symmetry with the densities' definitions; with one time scale and
age-indexed rates it does not enter the values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core_model import ModelConfig, ModelError, PiecewiseRate


@dataclass(frozen=True)
class RateBundle:
    """Intensities of the five-state model.

    ``alpha0`` / ``alpha1``: leaving school while unmarried / married.
    ``lambda0`` / ``lambda1``: marrying while out of / in school.
    ``mu[(j, k)]``: death with school status ``j`` and marital status ``k``.
    """

    alpha0: PiecewiseRate
    alpha1: PiecewiseRate
    lambda0: PiecewiseRate
    lambda1: PiecewiseRate
    mu: dict

    def __post_init__(self):
        if set(self.mu) != {(0, 0), (0, 1), (1, 0), (1, 1)}:
            raise ModelError("mu must be keyed by (school, married) in {0,1}^2")
        rates = [self.alpha0, self.alpha1, self.lambda0, self.lambda1, *self.mu.values()]
        lo = {r.lo for r in rates}
        hi = {r.hi for r in rates}
        if len(lo) != 1 or len(hi) != 1:
            raise ModelError("all rates must share one age range")

    @classmethod
    def constant(cls, alpha0, lambda0, lambda1, mu00, mu10, alpha1=None, mu01=None, mu11=None,
                 a_e=6.0, a_max=100.0) -> "RateBundle":
        def c(v):
            return PiecewiseRate.constant(v, a_e, a_max)
        return cls(
            alpha0=c(alpha0), alpha1=c(alpha0 if alpha1 is None else alpha1),
            lambda0=c(lambda0), lambda1=c(lambda1),
            mu={(0, 0): c(mu00), (0, 1): c(mu00 if mu01 is None else mu01),
                (1, 0): c(mu10), (1, 1): c(mu10 if mu11 is None else mu11)},
        )

    @property
    def lo(self) -> float:
        return self.alpha0.lo

    @property
    def hi(self) -> float:
        return self.alpha0.hi

    @property
    def a2(self) -> bool:
        """Leaving school does not depend on marital status."""
        return self.alpha0 == self.alpha1

    @property
    def nondifferential_mortality(self) -> bool:
        return self.mu[(0, 0)] == self.mu[(0, 1)] and self.mu[(1, 0)] == self.mu[(1, 1)]

    @property
    def cancellation_holds(self) -> bool:
        return self.a2 and self.nondifferential_mortality

    def breakpoints(self) -> np.ndarray:
        rates = [self.alpha0, self.alpha1, self.lambda0, self.lambda1, *self.mu.values()]
        return np.unique(np.concatenate([r.cuts for r in rates]))


def _integrate_switching(lo, hi, breaks, pick):
    """Integrate ``pick(midpoint)`` (a PiecewiseRate) over ``[lo, hi]``.

    ``breaks`` are the points where the selection may switch.
    """
    if hi <= lo:
        return 0.0
    pts = sorted({lo, hi, *(b for b in breaks if lo < b < hi)})
    return sum(pick(0.5 * (u + v)).integrate(u, v) for u, v in zip(pts[:-1], pts[1:]))


def _check(bundle: RateBundle, z, a_w, config):
    if a_w < config.a_e:
        raise ModelError(f"a_w={a_w} below school-start age {config.a_e}")
    if z < config.a_0:
        raise ModelError(f"z={z} below a_0={config.a_0}")
    if z > bundle.hi or config.a_e < bundle.lo:
        raise ModelError("ages outside the bundle's grid")


def _school_end(z, a_w):
    return min(a_w, z)


def _point_mass(rate: PiecewiseRate, z, a_w, config):
    if config.a_e < a_w <= z:
        return rate(a_w)
    return 1.0


def log_kernel_k(bundle, t, z, a_w, config: ModelConfig = ModelConfig()) -> float:
    _check(bundle, z, a_w, config)
    a_e, a_0 = config.a_e, config.a_0
    s_end = _school_end(z, a_w)
    log_alpha = -bundle.alpha0.integrate(a_e, s_end)
    pm = _point_mass(bundle.alpha0, z, a_w, config)
    log_mu = -_integrate_switching(a_e, z, [a_w], lambda u: bundle.mu[(int(u < a_w), 0)])
    log_lam = -_integrate_switching(a_0, z, [a_w], lambda u: bundle.lambda1 if u < a_w else bundle.lambda0)
    return log_alpha + _log(pm) + log_mu + log_lam


def kernel_k(bundle: RateBundle, t, z, a_w, config: ModelConfig = ModelConfig()) -> float:
    """Density of being unmarried and alive at age ``z`` with school ending at ``a_w``.

    ``a_w >= z`` (including ``inf``) means still in school at ``z``; then no
    leaving-school point mass enters.  ``a_w == a_e`` is the never-schooled
    path, for which the leaving-school terms vanish.
    """
    return math.exp(log_kernel_k(bundle, t, z, a_w, config))


def kernel_k1(bundle, t, z, config: ModelConfig = ModelConfig()) -> float:
    """Unmarried and still in school at ``z``."""
    _check(bundle, z, math.inf, config)
    a_e, a_0 = config.a_e, config.a_0
    expo = bundle.mu[(1, 0)].integrate(a_e, z) + bundle.alpha0.integrate(a_e, z)
    expo += bundle.lambda1.integrate(a_0, z)
    return math.exp(-expo)


def kernel_k0(bundle, t, z, a_w, config: ModelConfig = ModelConfig()) -> float:
    """Unmarried and out of school at ``z``, school having ended at ``a_w < z``.

    The marriage exponent uses the in-school rate up to and including
    ``a_w`` (a measure-zero difference from :func:`kernel_k`).
    """
    _check(bundle, z, a_w, config)
    if not a_w < z:
        raise ModelError("kernel_k0 needs a_w < z")
    a_e, a_0 = config.a_e, config.a_0
    expo = bundle.alpha0.integrate(a_e, a_w)
    expo += _integrate_switching(a_e, z, [a_w], lambda u: bundle.mu[(int(u < a_w), 0)])
    expo += _integrate_switching(a_0, z, [a_w], lambda u: bundle.lambda1 if u <= a_w else bundle.lambda0)
    return math.exp(-expo) * _point_mass(bundle.alpha0, z, a_w, config)


def _log(v):
    return math.log(v) if v > 0 else -math.inf


def log_kernel_h(bundle, t, y, z, a_w, config: ModelConfig = ModelConfig()) -> float:
    _check(bundle, z, a_w, config)
    a_e, a_0 = config.a_e, config.a_0
    if y < a_0:
        raise ModelError(f"marriage age {y} below a_0={a_0}")
    if y > z:
        raise ModelError(f"marriage age {y} after survey age {z}")
    s_end = _school_end(z, a_w)
    log_alpha = -_integrate_switching(a_e, s_end, [y],
                                      lambda u: bundle.alpha1 if y < u else bundle.alpha0)
    # tie y == a_w counts as "not yet married when school ended"
    pm = _point_mass(bundle.alpha1 if y < a_w else bundle.alpha0, z, a_w, config)
    log_mu = -_integrate_switching(a_e, z, [a_w, y],
                                   lambda u: bundle.mu[(int(u < a_w), int(y < u))])
    log_lam = -_integrate_switching(a_0, y, [a_w], lambda u: bundle.lambda1 if u < a_w else bundle.lambda0)
    terminal = (bundle.lambda1 if y < a_w else bundle.lambda0)(y)
    return log_alpha + _log(pm) + log_mu + log_lam + _log(terminal)


def kernel_h(bundle: RateBundle, t, y, z, a_w, config: ModelConfig = ModelConfig()) -> float:
    """Density of first marriage at ``y`` and being married and alive at ``z``."""
    return math.exp(log_kernel_h(bundle, t, y, z, a_w, config))


def _h_quad(bundle, t, z, a_w, config, epsrel=1e-13):
    a_0 = config.a_0
    if z <= a_0:
        return 0.0
    pts = [p for p in np.union1d(bundle.breakpoints(), [a_w]) if a_0 < p < z]
    val, _ = integrate.quad(lambda y: kernel_h(bundle, t, y, z, a_w, config), a_0, z,
                            points=pts or None, epsabs=0.0, epsrel=epsrel, limit=500)
    return val


def _survival_and_school(bundle, z, a_w, config):
    """Leaving-school and mortality factor shared by the simplified forms."""
    a_e = config.a_e
    s_end = _school_end(z, a_w)
    expo = bundle.alpha0.integrate(a_e, s_end)
    expo += _integrate_switching(a_e, z, [a_w], lambda u: bundle.mu[(int(u < a_w), 0)])
    return math.exp(-expo) * _point_mass(bundle.alpha0, z, a_w, config)


def _marriage_hazard(bundle, z, a_w, config):
    return _integrate_switching(config.a_0, z, [a_w],
                                lambda u: bundle.lambda1 if u < a_w else bundle.lambda0)


def normalizer_design_I(bundle: RateBundle, t, z, a_w, config: ModelConfig = ModelConfig(),
                        method: str = "auto") -> float:
    """Integral of :func:`kernel_h` over the marriage age on ``[a_0, z]``.

    ``method="closed"`` uses the product form that holds when leaving school
    and mortality do not depend on marital status (and raises otherwise);
    ``"quad"`` integrates numerically; ``"auto"`` picks closed form when valid.
    """
    _check(bundle, z, a_w, config)
    if method == "auto":
        method = "closed" if bundle.cancellation_holds else "quad"
    if method == "quad":
        return _h_quad(bundle, t, z, a_w, config)
    if method != "closed":
        raise ValueError(f"unknown method {method!r}")
    if not bundle.cancellation_holds:
        raise ModelError("closed form requires A2 and non-differential mortality")
    return _survival_and_school(bundle, z, a_w, config) * -math.expm1(-_marriage_hazard(bundle, z, a_w, config))


def normalizer_design_II(bundle: RateBundle, t, z, a_w, config: ModelConfig = ModelConfig(),
                         method: str = "auto") -> float:
    """Density of being alive at ``z`` with schooling ending at ``a_w``, any marital status."""
    _check(bundle, z, a_w, config)
    if method == "auto":
        method = "closed" if bundle.cancellation_holds else "quad"
    if method == "closed":
        if not bundle.cancellation_holds:
            raise ModelError("closed form requires A2 and non-differential mortality")
        return _survival_and_school(bundle, z, a_w, config)
    return kernel_k(bundle, t, z, a_w, config) + normalizer_design_I(bundle, t, z, a_w, config, method)


def conditional_design_I(bundle, t, y, z, a_w, config: ModelConfig = ModelConfig(), method="auto") -> float:
    """Prevalent-cohort conditional density of the marriage age."""
    return kernel_h(bundle, t, y, z, a_w, config) / normalizer_design_I(bundle, t, z, a_w, config, method)


def conditional_design_II(bundle, t, y, z, a_w, config: ModelConfig = ModelConfig(), method="auto") -> float:
    """General-cohort conditional likelihood; ``y=None`` for an unmarried record."""
    if y is None or y > z:
        num = kernel_k(bundle, t, z, a_w, config)
    else:
        num = kernel_h(bundle, t, y, z, a_w, config)
    return num / normalizer_design_II(bundle, t, z, a_w, config, method)
