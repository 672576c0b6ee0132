"""State space, rate parameterisation and piecewise-constant hazards.

Everything here is immutable; other modules build on these types.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class State(enum.IntEnum):
    AT_SCHOOL_UNMARRIED = 1
    AT_SCHOOL_MARRIED = 2
    OUT_OF_SCHOOL_UNMARRIED = 3
    OUT_OF_SCHOOL_MARRIED = 4
    DEAD = 5

    @property
    def in_school(self) -> bool:
        return self in (State.AT_SCHOOL_UNMARRIED, State.AT_SCHOOL_MARRIED)

    @property
    def married(self) -> bool:
        return self in (State.AT_SCHOOL_MARRIED, State.OUT_OF_SCHOOL_MARRIED)

    @property
    def absorbing(self) -> bool:
        return self is State.DEAD


S1, S2, S3, S4, S5 = State

# (from, to) -> intensity symbol
LEGAL_TRANSITIONS: dict[tuple[State, State], str] = {
    (S1, S2): "lambda1",
    (S1, S3): "alpha0",
    (S1, S5): "mu10",
    (S2, S4): "alpha1",
    (S2, S5): "mu11",
    (S3, S4): "lambda0",
    (S3, S5): "mu00",
    (S4, S5): "mu01",
}


class ModelError(ValueError):
    """Raised for arguments outside an operation's domain."""


@dataclass(frozen=True)
class ModelConfig:
    """Global age constants.

    ``a_e`` is the school-start age, ``a_0`` the minimum marriageable age and
    ``cross_section_time`` the calendar year of the survey.
    """

    a_e: float = 6.0
    a_0: float = 12.0
    cross_section_time: float = 2005.0

    def __post_init__(self):
        if not (self.a_0 > self.a_e > 0):
            raise ModelError(f"need a_0 > a_e > 0, got a_e={self.a_e}, a_0={self.a_0}")


@dataclass(frozen=True)
class SimParams:
    """Log-rate parameters of the five-state simulation model.

    ``m`` baseline marriage, ``b`` covariate effect, ``c`` in-school effect
    (on marriage and mortality), ``d`` effect of marriage on leaving school,
    ``g`` effect of marriage on mortality, ``s`` baseline leaving-school and
    ``r`` baseline mortality.
    """

    m: float = -1.5
    b: float = 0.5
    c: float = -0.5
    d: float = 0.0
    g: float = 0.0
    s: float = -1.5
    r: float = -5.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or math.isnan(v):
                raise ModelError(f"parameter {f.name} must be a real number, got {v!r}")
            # -inf is allowed: it switches the corresponding intensity off.
            if v == math.inf:
                raise ModelError(f"parameter {f.name} must not be +inf")

    @property
    def non_differential(self) -> bool:
        return self.d == 0 and self.g == 0

    def replace(self, **changes) -> "SimParams":
        return SimParams(**{**asdict(self), **changes})


def _linear_predictor(from_state: State, to_state: State, x: float, p: SimParams) -> float:
    kind = LEGAL_TRANSITIONS[(from_state, to_state)]
    bx = p.b * x
    return {
        "lambda1": p.m + bx + p.c,
        "alpha0": p.s + bx,
        "mu10": p.r + bx + p.c,
        "alpha1": p.s + bx + p.d,
        "mu11": p.r + bx + p.c + p.g,
        "lambda0": p.m + bx,
        "mu00": p.r + bx,
        "mu01": p.r + bx + p.g,
    }[kind]


def transition_rate(from_state, to_state, x: float, params: SimParams) -> float:
    """Intensity (per person-year) of a legal transition for covariate ``x``."""
    key = (State(from_state), State(to_state))
    if key not in LEGAL_TRANSITIONS:
        raise ModelError(f"illegal transition {int(key[0])} -> {int(key[1])}")
    return math.exp(_linear_predictor(*key, x, params))


def rate_matrix(x: float, params: SimParams) -> np.ndarray:
    """5x5 generator matrix (rows sum to zero) for covariate value ``x``."""
    q = np.zeros((5, 5))
    for (i, j) in LEGAL_TRANSITIONS:
        q[i - 1, j - 1] = transition_rate(i, j, x, params)
    q[np.diag_indices(5)] = -q.sum(axis=1)
    return q


@dataclass(frozen=True, eq=False)
class PiecewiseRate:
    """A hazard that is constant on ``[cuts[k], cuts[k+1])``.

    Parameters
    ----------
    cuts : sequence of float
        Strictly increasing age grid of length K + 1.
    values : sequence of float
        K non-negative finite rates per person-year.
    """

    cuts: np.ndarray
    values: np.ndarray

    def __init__(self, cuts: Sequence[float], values: Sequence[float]):
        cuts = np.array(cuts, dtype=float)
        values = np.array(values, dtype=float)
        if cuts.ndim != 1 or values.ndim != 1 or len(cuts) != len(values) + 1 or len(values) == 0:
            raise ModelError("need len(cuts) == len(values) + 1 >= 2")
        if not np.all(np.diff(cuts) > 0):
            raise ModelError("cuts must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ModelError("rates must be finite and non-negative")
        cuts.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, rate: float, lo: float, hi: float) -> "PiecewiseRate":
        return cls([lo, hi], [rate])

    @property
    def lo(self) -> float:
        return float(self.cuts[0])

    @property
    def hi(self) -> float:
        return float(self.cuts[-1])

    def __repr__(self):
        return f"PiecewiseRate(cuts={self.cuts.tolist()}, values={self.values.tolist()})"

    def __eq__(self, other):
        if not isinstance(other, PiecewiseRate):
            return NotImplemented
        return np.array_equal(self.cuts, other.cuts) and np.array_equal(self.values, other.values)

    def __call__(self, age):
        """Rate at ``age``; pieces are closed on the left, the last one also on the right."""
        age = np.asarray(age, dtype=float)
        if np.any(age < self.lo) or np.any(age > self.hi):
            raise ModelError(f"age outside [{self.lo}, {self.hi}]")
        k = np.clip(np.searchsorted(self.cuts, age, side="right") - 1, 0, len(self.values) - 1)
        out = self.values[k]
        return float(out) if out.ndim == 0 else out

    def integrate(self, u: float, v: float) -> float:
        return integrated_hazard(self, u, v)

    def scaled(self, factor: float) -> "PiecewiseRate":
        return PiecewiseRate(self.cuts, self.values * factor)

    def refined(self, extra_cuts: Sequence[float]) -> "PiecewiseRate":
        """Same function on a finer grid (``extra_cuts`` inside the range are added)."""
        extra = [c for c in extra_cuts if self.lo < c < self.hi]
        cuts = np.union1d(self.cuts, extra)
        mids = 0.5 * (cuts[:-1] + cuts[1:])
        return PiecewiseRate(cuts, self(mids))


def integrated_hazard(rate: PiecewiseRate, u: float, v: float) -> float:
    """Exact integral of a piecewise-constant rate over ``[u, v]``."""
    if u > v:
        raise ModelError(f"integration limits reversed: u={u} > v={v}")
    if u < rate.lo or v > rate.hi:
        raise ModelError(f"[{u}, {v}] not inside the rate grid [{rate.lo}, {rate.hi}]")
    overlap = np.minimum(rate.cuts[1:], v) - np.maximum(rate.cuts[:-1], u)
    return float(np.sum(rate.values * np.clip(overlap, 0.0, None)))


# ---------------------------------------------------------------------------
# key = value config files


def read_keyvalue(path: str | Path) -> dict[str, str]:
    """Parse ``name = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelError(f"{path}:{lineno}: expected 'name = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ModelError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def write_keyvalue(path: str | Path, values: Mapping[str, object], header: str | None = None) -> None:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines += [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def params_from_mapping(values: Mapping[str, object]) -> SimParams:
    names = {f.name for f in fields(SimParams)}
    return SimParams(**{k: float(v) for k, v in values.items() if k in names})


def config_from_mapping(values: Mapping[str, object]) -> ModelConfig:
    names = {f.name for f in fields(ModelConfig)}
    return ModelConfig(**{k: float(v) for k, v in values.items() if k in names})
