"""Event-history simulation from the five-state model and cohort construction.

Histories start at the minimum marriageable age ``a_0`` in state 1 or 3 and
are run as a continuous-time Markov chain (competing exponentials) until
death or the cross-section.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.special import expit

from .core_model import (
    LEGAL_TRANSITIONS,
    ModelConfig,
    ModelError,
    SimParams,
    State,
    config_from_mapping,
    params_from_mapping,
    rate_matrix,
    read_keyvalue,
    write_keyvalue,
)
from .records import STILL_IN_SCHOOL, CohortSample, Design

BIRTH_RANGE = (1965.0, 1993.0)
COHORT_SIZE_TARGET = (1864, 2229)  # reported mean cohort sizes out of 2500 per design
MAX_TRANSITIONS = 3  # longest path: 1 -> 2 -> 4 -> 5


@dataclass(frozen=True)
class EventHistory:
    birth_year: float
    x: int
    initial_state: State
    transitions: tuple[tuple[float, State], ...] = ()
    a_0: float = 12.0

    def __post_init__(self):
        state, age = State(self.initial_state), self.a_0
        for t_age, to in self.transitions:
            if t_age <= age:
                raise ModelError("transition ages must increase and exceed a_0")
            if (state, to) not in LEGAL_TRANSITIONS:
                raise ModelError(f"illegal transition {int(state)} -> {int(to)}")
            state, age = State(to), t_age

    def state_at(self, age: float) -> State:
        state = State(self.initial_state)
        for t_age, to in self.transitions:
            if t_age > age:
                break
            state = to
        return state


@dataclass
class HistoryBatch:
    """Column form of many histories; unused transition slots hold NaN / 0."""

    birth_year: np.ndarray
    x: np.ndarray
    initial_state: np.ndarray
    trans_age: np.ndarray
    trans_to: np.ndarray
    a_0: float

    def __len__(self):
        return len(self.birth_year)

    def final_state(self) -> np.ndarray:
        out = self.initial_state.copy()
        for k in range(self.trans_to.shape[1]):
            happened = self.trans_to[:, k] > 0
            out[happened] = self.trans_to[happened, k]
        return out

    def histories(self) -> list[EventHistory]:
        out = []
        for i in range(len(self)):
            trans = tuple(
                (float(self.trans_age[i, k]), State(int(self.trans_to[i, k])))
                for k in range(self.trans_to.shape[1]) if self.trans_to[i, k] > 0
            )
            out.append(EventHistory(float(self.birth_year[i]), int(self.x[i]),
                                    State(int(self.initial_state[i])), trans, self.a_0))
        return out


def _rate_tables(params: SimParams) -> np.ndarray:
    """Off-diagonal intensities indexed [x, from_state - 1, to_state - 1]."""
    tables = np.stack([rate_matrix(x, params) for x in (0, 1)])
    for t in tables:
        np.fill_diagonal(t, 0.0)
    return tables


def simulate_batch(rng: np.random.Generator, n: int, params: SimParams,
                   config: ModelConfig = ModelConfig(),
                   birth_range: Sequence[float] = BIRTH_RANGE) -> HistoryBatch:
    """Simulate ``n`` independent histories up to the cross-section."""
    x = (rng.random(n) < 0.5).astype(int)
    birth = rng.uniform(birth_range[0], birth_range[1], n)
    p_out = expit(-1.0 + 0.5 * x)
    state = np.where(rng.random(n) < p_out, 3, 1)
    initial = state.copy()
    z = config.cross_section_time - birth
    age = np.full(n, config.a_0)
    trans_age = np.full((n, MAX_TRANSITIONS), np.nan)
    trans_to = np.zeros((n, MAX_TRANSITIONS), dtype=int)

    tables = _rate_tables(params)
    active = np.flatnonzero((state != 5) & (age < z))
    for k in range(MAX_TRANSITIONS + 1):
        if active.size == 0:
            break
        rates = tables[x[active], state[active] - 1]
        total = rates.sum(axis=1)
        with np.errstate(divide="ignore"):
            dwell = rng.exponential(1.0, active.size) / total
        new_age = age[active] + dwell
        moves = new_age < z[active]
        u = rng.random(active.size) * total
        dest = np.argmax(np.cumsum(rates, axis=1) > u[:, None], axis=1) + 1
        idx = active[moves]
        if k == MAX_TRANSITIONS and idx.size:
            raise AssertionError("history exceeded the maximal path length")
        age[idx] = new_age[moves]
        state[idx] = dest[moves]
        if idx.size:
            trans_age[idx, k] = age[idx]
            trans_to[idx, k] = state[idx]
        active = idx[state[idx] != 5]
    return HistoryBatch(birth, x, initial, trans_age, trans_to, config.a_0)


def simulate_histories(rng, n, params, config=ModelConfig(), birth_range=BIRTH_RANGE):
    return simulate_batch(rng, n, params, config, birth_range).histories()


def simulate_history(rng: np.random.Generator, params: SimParams,
                     config: ModelConfig = ModelConfig(),
                     birth_range: Sequence[float] = BIRTH_RANGE) -> EventHistory:
    """One history: x ~ Bernoulli(1/2), birth year uniform, then the CTMC."""
    return simulate_histories(rng, 1, params, config, birth_range)[0]


def _admitted(state: np.ndarray, design: Design) -> np.ndarray:
    if design is Design.I:
        return (state == 2) | (state == 4)
    return state != 5


def cohort_from_batch(batch: HistoryBatch, design, config: ModelConfig = ModelConfig()) -> CohortSample:
    design = Design.parse(design)
    keep = _admitted(batch.final_state(), design)
    z = config.cross_section_time - batch.birth_year[keep]
    ages, to = batch.trans_age[keep], batch.trans_to[keep]
    prev = np.column_stack([batch.initial_state[keep], to[:, :-1]])
    marriage = ((prev == 1) & (to == 2)) | ((prev == 3) & (to == 4))
    school_end = ((prev == 1) & (to == 3)) | ((prev == 2) & (to == 4))
    y = np.where(marriage, ages, np.nan)
    y = np.nanmin(np.where(marriage.any(axis=1)[:, None], y, np.inf), axis=1)
    y[np.isinf(y)] = np.nan
    a_w = np.where(school_end, ages, np.inf).min(axis=1)
    a_w[batch.initial_state[keep] == 3] = config.a_e
    cohort = CohortSample(design, z, y, a_w, batch.x[keep].astype(float)[:, None], ("x",))
    if design is Design.I and np.isnan(cohort.y).any():
        raise AssertionError("design-I record without a marriage age")
    return cohort


def history_to_record_fields(h: EventHistory, config: ModelConfig):
    """(z, y, a_w) of a single history as seen at the cross-section."""
    z = config.cross_section_time - h.birth_year
    y = None
    a_w = config.a_e if h.initial_state == State.OUT_OF_SCHOOL_UNMARRIED else STILL_IN_SCHOOL
    state = State(h.initial_state)
    for age, to in h.transitions:
        if age > z:
            break
        if (state, to) in ((State(1), State(2)), (State(3), State(4))):
            y = age
        if (state, to) in ((State(1), State(3)), (State(2), State(4))):
            a_w = age
        state = to
    return z, y, a_w


def build_cohort(histories: Sequence[EventHistory], design,
                 config: ModelConfig = ModelConfig()) -> CohortSample:
    """Select histories by state at the cross-section and convert them to records."""
    design = Design.parse(design)
    rows = []
    for h in histories:
        z = config.cross_section_time - h.birth_year
        state = h.state_at(z)
        if not _admitted(np.array([int(state)]), design)[0]:
            continue
        z, y, a_w = history_to_record_fields(h, config)
        if design is Design.I and y is None:
            raise AssertionError("design-I record without a marriage age")
        rows.append((z, np.nan if y is None else y, a_w, h.x))
    if not rows:
        return CohortSample.empty(design)
    z, y, a_w, x = map(np.array, zip(*rows))
    return CohortSample(design, z, y, a_w, x.astype(float)[:, None], ("x",))


# ---------------------------------------------------------------------------
# scenarios


SCENARIOS = {
    "nd": {"d": 0.0, "g": 0.0},
    "diff-school": {"d": 1.0, "g": 0.0},
    "diff-mort": {"d": 0.0, "g": 1.0},
    "diff-both": {"d": 1.0, "g": 1.0},
}


@dataclass(frozen=True)
class ScenarioConfig:
    params: SimParams = SimParams()
    config: ModelConfig = ModelConfig()
    n_per_design: int = 2500
    seed: int = 20240101
    replications: int = 1000
    birth_range: tuple[float, float] = BIRTH_RANGE
    name: str = "nd"

    def with_overrides(self, **kw) -> "ScenarioConfig":
        pkw = {k: kw.pop(k) for k in list(kw) if k in SimParams.__dataclass_fields__}
        ckw = {k: kw.pop(k) for k in list(kw) if k in ModelConfig.__dataclass_fields__}
        return replace(self, params=self.params.replace(**pkw),
                       config=replace(self.config, **ckw), **kw)

    def to_mapping(self) -> dict:
        out = {"name": self.name}
        out.update(asdict(self.params))
        out.update(asdict(self.config))
        out.update(n_per_design=self.n_per_design, seed=self.seed,
                   replications=self.replications,
                   birth_min=self.birth_range[0], birth_max=self.birth_range[1])
        return out

    def save(self, path) -> None:
        write_keyvalue(path, self.to_mapping())

    @classmethod
    def from_mapping(cls, values) -> "ScenarioConfig":
        base = cls()
        return cls(
            params=params_from_mapping({**asdict(base.params), **values}),
            config=config_from_mapping({**asdict(base.config), **values}),
            n_per_design=int(values.get("n_per_design", base.n_per_design)),
            seed=int(values.get("seed", base.seed)),
            replications=int(values.get("replications", base.replications)),
            birth_range=(float(values.get("birth_min", base.birth_range[0])),
                         float(values.get("birth_max", base.birth_range[1]))),
            name=str(values.get("name", base.name)),
        )

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_mapping(read_keyvalue(path))


SCENARIO_DIR = Path(__file__).parent / "scenarios"


def scenario(name: str) -> ScenarioConfig:
    """Shipped scenario by name (``nd``, ``diff-school``, ``diff-mort``, ``diff-both``)."""
    if name not in SCENARIOS:
        raise ModelError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return ScenarioConfig.load(SCENARIO_DIR / f"{name}.cfg")


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replication)]))


def simulate_cohorts(rng: np.random.Generator, sc: ScenarioConfig) -> tuple[CohortSample, CohortSample]:
    """Design-I and design-II cohorts from two independent populations."""
    pop_i = simulate_batch(rng, sc.n_per_design, sc.params, sc.config, sc.birth_range)
    pop_ii = simulate_batch(rng, sc.n_per_design, sc.params, sc.config, sc.birth_range)
    return (cohort_from_batch(pop_i, Design.I, sc.config),
            cohort_from_batch(pop_ii, Design.II, sc.config))


# ---------------------------------------------------------------------------
# calibration of the leaving-school and mortality baselines


def expected_cohort_fractions(params: SimParams, config: ModelConfig = ModelConfig(),
                              birth_range: Sequence[float] = BIRTH_RANGE,
                              n_nodes: int = 64) -> tuple[float, float]:
    """Expected (married and alive, alive) fractions at the cross-section.

    Exact up to Gauss-Legendre quadrature over the uniform age at the
    cross-section; state probabilities come from the matrix exponential.
    """
    z_lo = config.cross_section_time - birth_range[1]
    z_hi = config.cross_section_time - birth_range[0]
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    t = (z_lo - config.a_0) + (nodes + 1) * 0.5 * (z_hi - z_lo)
    weights = weights / 2
    married = alive = 0.0
    for x in (0, 1):
        p_out = expit(-1.0 + 0.5 * x)
        p0 = np.array([1 - p_out, 0, p_out, 0, 0])
        q = rate_matrix(x, params)
        for ti, wi in zip(t, weights):
            p = p0 @ expm(q * max(ti, 0.0))
            married += 0.5 * wi * (p[1] + p[3])
            alive += 0.5 * wi * (1 - p[4])
    return float(married), float(alive)


def calibrate_school_and_mortality(params: SimParams = SimParams(),
                                   config: ModelConfig = ModelConfig(),
                                   target=COHORT_SIZE_TARGET, n: int = 2500,
                                   s_grid=np.arange(-4.0, 1.01, 0.1),
                                   r_grid=np.arange(-8.0, -1.99, 0.1)) -> tuple[float, float, tuple[float, float]]:
    """Coarse grid search for (s, r) matching expected cohort sizes.

    Returns ``(s, r, (size_I, size_II))``.
    """
    target = np.asarray(target, dtype=float)
    best = None
    # the married fraction depends mostly on s, the alive fraction on r
    for r in r_grid:
        _, alive = expected_cohort_fractions(params.replace(s=-1.0, r=float(r)), config, n_nodes=24)
        if abs(alive * n - target[1]) / target[1] > 0.05:
            continue
        for s in s_grid:
            p = params.replace(s=round(float(s), 10), r=round(float(r), 10))
            sizes = np.array(expected_cohort_fractions(p, config, n_nodes=24)) * n
            err = np.max(np.abs(sizes - target) / target)
            if best is None or err < best[0]:
                best = (err, p.s, p.r)
    if best is None:
        raise ModelError("no grid point within 5% of the target alive fraction")
    _, s, r = best
    sizes = tuple(np.array(expected_cohort_fractions(params.replace(s=s, r=r), config)) * n)
    return s, r, sizes
