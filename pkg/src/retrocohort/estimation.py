"""Maximum-likelihood fitting and the Monte Carlo replication harness."""
from __future__ import annotations

import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .core_model import ModelConfig
from .likelihood import ConstantRateModel, LogLinearModel, Objective
from .records import CohortSample
from .simulator import ScenarioConfig, replication_rng, simulate_cohorts

log = logging.getLogger(__name__)

Z95 = 1.959964
BOUNDARY = 30.0  # |theta| beyond this is treated as a run-away to the boundary


def _json_list(a):
    """Array to a JSON-safe list; non-finite entries become ``None``."""
    if a is None:
        return None
    return [float(v) if np.isfinite(v) else None for v in a]


@dataclass
class FitResult:
    names: tuple[str, ...]
    theta_hat: np.ndarray
    covariance: np.ndarray | None
    se: np.ndarray | None
    loglik: float
    converged: bool
    iterations: int
    message: str = ""
    n_records: int = 0
    flagged: tuple[str, ...] = ()

    @property
    def ci95(self) -> np.ndarray | None:
        if self.se is None:
            return None
        return np.column_stack([self.theta_hat - Z95 * self.se, self.theta_hat + Z95 * self.se])

    def estimate(self, name: str) -> float:
        return float(self.theta_hat[self.names.index(name)])

    def to_dict(self) -> dict:
        ci = self.ci95
        return {
            "names": list(self.names),
            "estimates": self.theta_hat.tolist(),
            "se": _json_list(self.se),
            "ci_low": None if ci is None else _json_list(ci[:, 0]),
            "ci_high": None if ci is None else _json_list(ci[:, 1]),
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "message": self.message,
            "n_records": self.n_records,
            "non_identifiable": list(self.flagged),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=kw.pop("indent", 2), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        theta = np.array(d["estimates"], dtype=float)
        se = None if d.get("se") is None else np.array(
            [np.nan if v is None else v for v in d["se"]], dtype=float)
        return cls(tuple(d["names"]), theta, None if se is None else np.diag(se ** 2), se,
                   float(d["loglik"]), bool(d["converged"]), int(d.get("iterations", 0)),
                   d.get("message", ""), int(d.get("n_records", 0)),
                   tuple(d.get("non_identifiable", ())))


def numerical_hessian(grad: Callable[[np.ndarray], np.ndarray], theta, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrised."""
    theta = np.asarray(theta, dtype=float)
    p = len(theta)
    h = np.empty((p, p))
    for j in range(p):
        step = rel_step * max(1.0, abs(theta[j]))
        up, dn = theta.copy(), theta.copy()
        up[j] += step
        dn[j] -= step
        h[:, j] = (grad(up) - grad(dn)) / (2 * step)
    return 0.5 * (h + h.T)


def covariance_from_hessian(hessian) -> np.ndarray | None:
    """Inverse of the negative Hessian, or ``None`` if it is not invertible."""
    hessian = np.asarray(hessian, dtype=float)
    if hessian.size == 0 or not np.all(np.isfinite(hessian)):
        return None
    try:
        cov = np.linalg.inv(-hessian)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(cov)) or np.linalg.cond(hessian) > 1e14:
        return None
    return 0.5 * (cov + cov.T)


def standard_errors(hessian) -> np.ndarray | None:
    """``sqrt(diag(inv(-H)))``; ``None`` when unavailable (singular or not concave)."""
    cov = covariance_from_hessian(hessian)
    if cov is None:
        return None
    d = np.diag(cov)
    if np.any(d <= 0):
        return None
    return np.sqrt(d)


def crude_log_rate(objective: Objective) -> float:
    """log(events / exposure) over all cohorts; feasible starting intercept."""
    events = exposure = 0.0
    for t, _ in objective.terms:
        events += t.exact_event.sum() + t.interval_event.sum()
        exposure += t.exposure.sum() + t.exposure_event.sum()
    if events == 0 or exposure <= 0:
        return -5.0
    return math.log(events / exposure)


def _count_events(objective: Objective) -> int:
    return int(sum(t.exact_event.sum() + t.interval_event.sum() for t, _ in objective.terms))


def fit_objective(objective: Objective, theta_init=None, max_iter: int = 500,
                  gtol: float = 1e-9) -> FitResult:
    """Maximise an :class:`Objective` by BFGS, with a Nelder-Mead fallback.

    The optimum is polished by Newton steps on the finite-difference Hessian
    of the analytic gradient, which also yields the covariance matrix.
    """
    model = objective.model
    names = model.param_names
    n = max(objective.n_records, 1)
    if theta_init is None:
        theta_init = model.default_init(crude_log_rate(objective))
    theta0 = np.asarray(theta_init, dtype=float)

    if objective.n_records == 0 or _count_events(objective) == 0:
        ll = objective.loglik(theta0) if objective.n_records else 0.0
        return FitResult(names, theta0, None, None, ll, False, 0,
                         "no observed marriages: likelihood increases without bound "
                         "as the marriage rate goes to zero (boundary solution)",
                         objective.n_records)

    def f(theta):
        with np.errstate(over="ignore", invalid="ignore"):
            v, g = objective.value_and_grad(theta)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(theta)
        return -v / n, -g / n

    res = optimize.minimize(f, theta0, jac=True, method="BFGS",
                            options={"gtol": gtol, "maxiter": max_iter})
    theta, iterations, message = res.x, int(res.nit), f"BFGS: {res.message}"
    grad_ok = np.all(np.isfinite(res.jac)) and np.max(np.abs(res.jac)) < 1e-5
    if not (res.success or grad_ok) or not np.isfinite(res.fun):
        log.info("BFGS failed (%s); falling back to Nelder-Mead", res.message)
        nm = optimize.minimize(lambda th: f(th)[0], theta if np.isfinite(res.fun) else theta0,
                               method="Nelder-Mead",
                               options={"maxiter": max_iter * 20, "xatol": 1e-10, "fatol": 1e-14})
        theta, iterations = nm.x, iterations + int(nm.nit)
        message += f"; Nelder-Mead: {nm.message}"

    hessian = numerical_hessian(objective.gradient, theta)
    polished = False
    for _ in range(4):
        g = objective.gradient(theta)
        try:
            step = np.linalg.solve(hessian, g)
        except np.linalg.LinAlgError:
            break
        candidate = theta - step
        if not objective.loglik(candidate) >= objective.loglik(theta) - 1e-9 * n:
            break
        theta, polished = candidate, True
        iterations += 1
        if np.max(np.abs(step)) < 1e-12:
            break
    if polished:
        hessian = numerical_hessian(objective.gradient, theta)

    ll = objective.loglik(theta)
    grad_norm = float(np.max(np.abs(objective.gradient(theta)))) / n
    cov = covariance_from_hessian(hessian)
    se = standard_errors(hessian)
    converged = bool(np.isfinite(ll) and grad_norm < 1e-6)
    if np.any(np.abs(theta) > BOUNDARY):
        converged = False
        message += "; estimate ran to the parameter boundary"
    if se is None:
        message += "; Hessian not invertible, covariance unavailable"
    return FitResult(names, theta, cov, se, ll, converged, iterations, message, objective.n_records)


def fit(cohorts: Sequence[CohortSample], model: LogLinearModel, theta_init=None,
        config: ModelConfig = ModelConfig(), correction: bool = True, **kw) -> FitResult:
    """Maximum-likelihood fit of ``model`` to design-I and/or design-II cohorts."""
    return fit_objective(Objective(cohorts, model, config, correction), theta_init, **kw)


# ---------------------------------------------------------------------------
# replication harness

VARIANTS = ("combined", "design_I", "design_I_uncorrected", "design_II")
SIM_PARAMS = ("m", "b", "c")


def fit_variants(cohort_i: CohortSample, cohort_ii: CohortSample,
                 config: ModelConfig = ModelConfig()) -> dict[str, FitResult]:
    """The four likelihood variants fitted with the constant-rate marriage model."""
    model = ConstantRateModel(a_0=config.a_0)
    specs = {
        "combined": ([cohort_i, cohort_ii], True),
        "design_I": ([cohort_i], True),
        "design_I_uncorrected": ([cohort_i], False),
        "design_II": ([cohort_ii], True),
    }
    return {name: fit(cohorts, model, config=config, correction=corr)
            for name, (cohorts, corr) in specs.items()}


def run_replication(sc: ScenarioConfig, index: int) -> dict:
    rng = replication_rng(sc.seed, index)
    c1, c2 = simulate_cohorts(rng, sc)
    fits = fit_variants(c1, c2, sc.config)
    return {
        "index": index,
        "sizes": (len(c1), len(c2)),
        "fits": {k: (f.theta_hat, f.se, f.converged and f.se is not None) for k, f in fits.items()},
    }


def _run_chunk(args):
    sc, indices = args
    return [run_replication(sc, i) for i in indices]


@dataclass
class ReplicationSummary:
    """Per (likelihood variant, parameter) Monte Carlo statistics."""

    scenario: str
    truth: dict
    rows: list = field(default_factory=list)
    n_replications: int = 0
    excluded: dict = field(default_factory=dict)
    mean_sizes: tuple = (math.nan, math.nan)

    COLUMNS = ("likelihood", "parameter", "truth", "mean", "bias", "mc_sd", "mean_se", "coverage")

    def row(self, likelihood: str, parameter: str) -> dict:
        for r in self.rows:
            if r["likelihood"] == likelihood and r["parameter"] == parameter:
                return r
        raise KeyError((likelihood, parameter))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["likelihood"], r["parameter"]] +
                           ["" if not np.isfinite(r[c]) else f"{r[c]:.6f}" for c in self.COLUMNS[2:]])

    @classmethod
    def from_replications(cls, sc: ScenarioConfig, reps: list[dict]) -> "ReplicationSummary":
        reps = sorted(reps, key=lambda r: r["index"])
        truth = {p: getattr(sc.params, p) for p in SIM_PARAMS}
        out = cls(sc.name, truth, n_replications=len(reps))
        if reps:
            out.mean_sizes = tuple(np.mean([r["sizes"] for r in reps], axis=0).tolist())
        for variant in VARIANTS:
            ok = [r["fits"][variant] for r in reps if r["fits"][variant][2]]
            out.excluded[variant] = len(reps) - len(ok)
            if out.excluded[variant]:
                log.warning("%s/%s: %d of %d replications excluded (not converged)",
                            sc.name, variant, out.excluded[variant], len(reps))
            est = np.array([o[0] for o in ok]).reshape(len(ok), len(SIM_PARAMS))
            se = np.array([o[1] for o in ok]).reshape(len(ok), len(SIM_PARAMS))
            for j, p in enumerate(SIM_PARAMS):
                t = truth[p]
                mean = est[:, j].mean() if len(ok) else math.nan
                mc_sd = est[:, j].std(ddof=1) if len(ok) > 1 else math.nan
                lo, hi = est[:, j] - Z95 * se[:, j], est[:, j] + Z95 * se[:, j]
                out.rows.append({
                    "likelihood": variant, "parameter": p, "truth": t, "mean": mean,
                    "bias": mean - t, "mc_sd": mc_sd,
                    "mean_se": se[:, j].mean() if len(ok) else math.nan,
                    "coverage": np.mean((lo <= t) & (t <= hi)) if len(ok) else math.nan,
                })
        return out


def run_scenario(sc: ScenarioConfig, workers: int | None = 1, progress: bool = False,
                 chunk: int = 25) -> ReplicationSummary:
    """Simulate, fit all likelihood variants and summarise over replications.

    Results do not depend on ``workers``: replication ``i`` always draws from
    the stream seeded by ``(seed, i)``.
    """
    indices = list(range(sc.replications))
    chunks = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]
    reps: list[dict] = []

    def report():
        if progress:
            print(f"\r{sc.name}: {len(reps)}/{sc.replications}", end="", file=sys.stderr, flush=True)

    if workers is None or workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_run_chunk, [(sc, c) for c in chunks]):
                reps.extend(part)
                report()
    else:
        for c in chunks:
            reps.extend(_run_chunk((sc, c)))
            report()
    if progress:
        print(file=sys.stderr)
    return ReplicationSummary.from_replications(sc, reps)
