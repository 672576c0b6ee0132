"""Piecewise-constant proportional-hazards marriage model for survey data.

The log marriage rate in age band ``j`` is a log-baseline ``alpha_j`` plus
covariate effects (birth cohort, residence, caste, religion, education).
Education is time-dependent: the level attained in a band is capped by the
level attainable at that age.  Marriage ages are reported in completed years,
so married records contribute the probability of marrying within the
reported year of age.
"""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .core_model import ModelConfig, ModelError, PiecewiseRate
from .estimation import Z95, FitResult, fit_objective
from .likelihood import CellTable, LogLinearModel, Objective
from .records import CohortSample, Design

log = logging.getLogger(__name__)

AGE_BAND_CUTS = np.array([12.0, *range(15, 31), 50.0])
N_BANDS = len(AGE_BAND_CUTS) - 1  # 17
A_MAX = 50.0

# (column, number of levels); level 0 is the reference
COVARIATES = (
    ("birth_cohort", 4),
    ("residence", 2),
    ("caste", 4),
    ("religion", 5),
    ("education", 4),
)
COVARIATE_NAMES = tuple(name for name, _ in COVARIATES)
LEVEL_LABELS = {
    "birth_cohort": ("1942-62", "1962-72", "1972-82", "1982-92"),
    "residence": ("urban", "rural"),
    "caste": ("SC", "ST", "OBC", "other"),
    "religion": ("Hindu", "Muslim", "Christian", "Sikh", "other"),
    "education": ("none", "primary", "secondary", "higher"),
}
CSV_COLUMNS = ("design", "age_at_survey", "age_at_marriage", *COVARIATE_NAMES)
REQUIRED_COLUMNS = CSV_COLUMNS[1:]
SIM_COLUMNS = ("design", "age_at_survey", "age_at_marriage", "x", "age_school_end")

_BIRTH_COHORT_STARTS = (1962.0, 1972.0, 1982.0)


class SurveyFormatError(ModelError):
    """Malformed survey file; the message names the file and line."""


def band_labels(cuts: Sequence[float] = AGE_BAND_CUTS) -> list[str]:
    return [f"[{int(a)},{int(b)})" for a, b in zip(cuts[:-1], cuts[1:])]


def education_at_band(x5: int, j: int) -> int:
    """Education level counted in age band ``j`` (1-based) for final level ``x5``."""
    if not 0 <= x5 <= 3:
        raise ModelError(f"education code {x5} outside 0..3")
    if not 1 <= j <= N_BANDS:
        raise ModelError(f"band index {j} outside 1..{N_BANDS}")
    if j == 1:
        return min(x5, 1)
    if j <= 4:
        return min(x5, 2)
    return x5


def education_at_age(x5, age):
    """Same capping expressed by age: primary below 15, secondary below 18."""
    x5 = np.asarray(x5)
    age = np.asarray(age)
    return np.where(age < 15, np.minimum(x5, 1), np.where(age < 18, np.minimum(x5, 2), x5))


def birth_cohort_code(birth_year):
    return np.searchsorted(_BIRTH_COHORT_STARTS, np.asarray(birth_year, dtype=float), side="right")


class IncidenceModel(LogLinearModel):
    """Log-linear marriage rate on age bands with categorical covariates.

    Parameters
    ----------
    theta : array, optional
        Full parameter vector (baselines first, then covariate effects).
    free : sequence of str, optional
        Names of estimated parameters; default all.
    cuts : array
        Age-band edges; default the 17 standard bands on [12, 50).
    covariates : sequence of str
        Subset of :data:`COVARIATE_NAMES` to include.
    interval_censored : bool
        Marriage ages known to the completed year (default) or exactly.
    time_dependent_education : bool
        Apply the age caps of :func:`education_at_age`.
    """

    def __init__(self, theta=None, free=None, cuts=AGE_BAND_CUTS,
                 covariates: Sequence[str] = COVARIATE_NAMES, interval_censored: bool = True,
                 time_dependent_education: bool = True):
        self.cuts = np.asarray(cuts, dtype=float)
        self.covariates = tuple(covariates)
        unknown = set(self.covariates) - set(COVARIATE_NAMES)
        if unknown:
            raise ModelError(f"unknown covariates {sorted(unknown)}")
        self.levels = dict(COVARIATES)
        self.n_bands = len(self.cuts) - 1
        width = len(str(self.n_bands))
        self.baseline_names = tuple(f"alpha_{j:0{width}d}" for j in range(1, self.n_bands + 1))
        effect_names = []
        self.offsets = {}
        for cov in self.covariates:
            self.offsets[cov] = self.n_bands + len(effect_names)
            effect_names += [f"{cov}_{lv}" for lv in range(1, self.levels[cov])]
        self.effect_names = tuple(effect_names)
        self.all_names = self.baseline_names + self.effect_names
        self.intercepts = self.baseline_names
        self.interval_censored = interval_censored
        self.time_dependent_education = time_dependent_education
        super().__init__(theta, free)

    @property
    def a_0(self) -> float:
        return float(self.cuts[0])

    def _band_education(self, x5, band):
        if not self.time_dependent_education:
            return np.asarray(x5)
        return education_at_age(x5, self.cuts[np.asarray(band)])

    def _linear_predictor(self, band, cov: dict) -> np.ndarray:
        """Log rate for arrays of band indices (0-based) and covariate codes."""
        beta = self.theta_full
        eta = beta[np.asarray(band)].astype(float)
        for c in self.covariates:
            level = np.asarray(cov[c]).astype(int)
            if c == "education":
                level = self._band_education(level, band).astype(int)
            col = self.offsets[c] + level - 1
            eta = eta + np.where(level > 0, beta[np.clip(col, 0, len(beta) - 1)], 0.0)
        return eta

    def _cov_dict(self, covariates) -> dict:
        if isinstance(covariates, dict):
            return covariates
        return dict(zip(COVARIATE_NAMES, covariates))

    def band_rates(self, covariates) -> np.ndarray:
        cov = self._cov_dict(covariates)
        return np.exp(self._linear_predictor(np.arange(self.n_bands), cov))

    def rate(self, age, in_school=None, covariates=()):
        if not self.cuts[0] <= age <= self.cuts[-1]:
            raise ModelError(f"age {age} outside [{self.cuts[0]}, {self.cuts[-1]}]")
        band = min(int(np.searchsorted(self.cuts, age, side="right")) - 1, self.n_bands - 1)
        return float(self.band_rates(covariates)[band])

    def hazard_path(self, a_w=None, covariates=()) -> PiecewiseRate:
        return PiecewiseRate(self.cuts, self.band_rates(covariates))

    def marriage_rate(self, covariates, fixed_education: bool = True) -> PiecewiseRate:
        """Rate curve for given covariate codes.

        For prediction the education level is taken as already attained
        (``fixed_education``), so the age caps do not apply.
        """
        if not fixed_education:
            return self.hazard_path(None, covariates)
        saved = self.time_dependent_education
        try:
            self.time_dependent_education = False
            return PiecewiseRate(self.cuts, self.band_rates(covariates))
        finally:
            self.time_dependent_education = saved

    # -- vectorised cells --------------------------------------------------

    def _overlap(self, a, b):
        lo, hi = self.cuts[:-1], self.cuts[1:]
        return np.clip(np.minimum(b[:, None], hi) - np.maximum(a[:, None], lo), 0.0, None)

    def _design_rows(self, rec, band, cov: dict) -> sparse.csr_matrix:
        n_cells = len(rec)
        rows = [np.arange(n_cells)]
        cols = [band]
        for c in self.covariates:
            level = cov[c][rec].astype(int)
            if c == "education":
                level = self._band_education(level, band).astype(int)
            sel = level > 0
            rows.append(np.flatnonzero(sel))
            cols.append(self.offsets[c] + level[sel] - 1)
        r = np.concatenate(rows)
        cc = np.concatenate(cols)
        return sparse.csr_matrix((np.ones(len(r)), (r, cc)), shape=(n_cells, len(self.all_names)))

    def cells(self, cohort: CohortSample, config: ModelConfig = ModelConfig()) -> CellTable:
        missing = [c for c in self.covariates if c not in cohort.covariate_names]
        if missing:
            raise ModelError(f"cohort lacks covariate columns {missing}")
        n = len(cohort)
        top = self.cuts[-1]
        a0 = np.full(n, self.cuts[0])
        z = np.minimum(cohort.z, top)
        married = cohort.married
        y = np.where(married, cohort.y, np.nan)
        cov = {c: cohort.column(c).astype(int) for c in self.covariates}
        if self.interval_censored:
            yf = np.floor(np.nan_to_num(y, nan=0.0))
            num_end = np.where(married, yf, z)
            ev_lo = np.where(married, yf, 0.0)
            exp_event = self._overlap(ev_lo, np.where(married, yf + 1, 0.0))
            samp_end = np.where(married, np.maximum(z, np.minimum(yf + 1, top)), z)
            exact = np.zeros(n, dtype=bool)
            interval = married.copy()
        else:
            exact = married & (np.nan_to_num(y, nan=np.inf) <= cohort.z)
            num_end = np.where(exact, y, z)
            exp_event = np.zeros((n, self.n_bands))
            samp_end = z
            interval = np.zeros(n, dtype=bool)
        exp_num = self._overlap(a0, num_end)
        exp_samp = self._overlap(a0, samp_end)
        keep = (exp_num + exp_event + exp_samp) > 0
        rec, band = np.nonzero(keep)
        X = self._design_rows(rec, band, cov)
        if exact.any():
            idx = np.flatnonzero(exact)
            ev_band = np.minimum(np.searchsorted(self.cuts, y[idx], side="right") - 1, self.n_bands - 1)
            ev_rows = self._design_rows(idx, ev_band, cov)
            event_X = sparse.csr_matrix((ev_rows.data, ev_rows.indices, ev_rows.indptr),
                                        shape=ev_rows.shape)
            full = sparse.lil_matrix((n, len(self.all_names)))
            full[idx] = event_X
            event_X = full.tocsr()
        else:
            event_X = sparse.csr_matrix((n, len(self.all_names)))
        return CellTable(
            n_records=n, rec=rec, X=X,
            exposure=exp_num[keep], exposure_event=exp_event[keep],
            exposure_sampling=exp_samp[keep],
            event_X=event_X, exact_event=exact, interval_event=interval,
        )


def interval_censored_numerator(model: IncidenceModel, covariates, y_floor: int) -> float:
    """Probability of first marriage within ``[y_floor, y_floor + 1)``."""
    a0 = model.a_0
    if y_floor < a0:
        raise ModelError(f"marriage age {y_floor} below a_0={a0}")
    if y_floor + 1 > model.cuts[-1]:
        raise ModelError(f"marriage age {y_floor} beyond the model range")
    path = model.hazard_path(None, covariates)
    before = path.integrate(a0, y_floor)
    within = path.integrate(y_floor, y_floor + 1)
    return math.exp(-before) * -math.expm1(-within)


# ---------------------------------------------------------------------------
# ingestion


def _int_field(value: str, column: str, where: str) -> int:
    try:
        f = float(value)
    except ValueError:
        raise SurveyFormatError(f"{where}: {column}={value!r} is not a number") from None
    if not f.is_integer():
        raise SurveyFormatError(f"{where}: {column}={value!r} must be whole years / a category code")
    return int(f)


def _read_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SurveyFormatError(f"{path}: empty file, header row missing")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        yield header
        for row in reader:
            yield reader.line_num, row


def parse_survey_file(path, design=None, config: ModelConfig = ModelConfig()) -> dict[Design, CohortSample]:
    """Read a survey CSV into one cohort per design.

    ``design`` tags every row; otherwise a ``design`` column is required.
    Women reported married before ``a_0`` are dropped with a warning and
    counted in ``cohort.meta["rejected_early_marriage"]``.
    """
    path = Path(path)
    rows = _read_rows(path)
    header = next(rows)
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise SurveyFormatError(f"{path}: missing required column {col!r}")
    if design is None and "design" not in header:
        raise SurveyFormatError(f"{path}: no 'design' column and no design given")
    fixed = None if design is None else Design.parse(design)
    data = {Design.I: [], Design.II: []}
    rejected = {Design.I: 0, Design.II: 0}
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        if fixed is not None:
            d = fixed
            tag = (row.get("design") or "").strip()
            if tag and Design.parse(tag) is not fixed:
                continue
        else:
            try:
                d = Design.parse(row["design"])
            except ModelError as exc:
                raise SurveyFormatError(f"{where}: {exc}") from None
        z = _int_field((row["age_at_survey"] or "").strip(), "age_at_survey", where)
        if z < config.a_0:
            raise SurveyFormatError(f"{where}: age_at_survey={z} below {config.a_0:g}")
        raw_y = (row["age_at_marriage"] or "").strip()
        if raw_y == "":
            if d is Design.I:
                raise SurveyFormatError(f"{where}: design-I row without age_at_marriage")
            y = math.nan
        else:
            y = _int_field(raw_y, "age_at_marriage", where)
            if y > z:
                raise SurveyFormatError(f"{where}: age_at_marriage={y} after age_at_survey={z}")
            if y >= A_MAX:
                raise SurveyFormatError(f"{where}: age_at_marriage={y} beyond the model range")
            if y < config.a_0:
                rejected[d] += 1
                continue
        codes = []
        for name, levels in COVARIATES:
            code = _int_field((row[name] or "").strip(), name, where)
            if not 0 <= code < levels:
                raise SurveyFormatError(f"{where}: {name}={code} outside 0..{levels - 1}")
            codes.append(code)
        data[d].append((z, y, codes))
    out = {}
    for d, recs in data.items():
        if rejected[d]:
            log.warning("%s: %d design-%s rows married before age %g rejected",
                        path, rejected[d], d.value, config.a_0)
        if recs:
            z, y, codes = zip(*recs)
            cohort = CohortSample(d, np.array(z, float), np.array(y, float),
                                  np.full(len(z), np.nan), np.array(codes, float), COVARIATE_NAMES)
        else:
            cohort = CohortSample.empty(d, COVARIATE_NAMES)
        cohort.meta["rejected_early_marriage"] = rejected[d]
        cohort.meta["source"] = str(path)
        out[d] = cohort
    return out


def parse_survey_csv(path, design, config: ModelConfig = ModelConfig()) -> CohortSample:
    """Read the design-``design`` rows of a survey CSV."""
    return parse_survey_file(path, design, config)[Design.parse(design)]


def _fmt(v) -> str:
    if isinstance(v, float) and math.isnan(v):
        return ""
    if isinstance(v, float) and math.isinf(v):
        return ""
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_cohort_csv(path, cohorts: Iterable[CohortSample]) -> None:
    """Write cohorts with a ``design`` column.

    Survey cohorts use the survey schema; simulated cohorts carry ``x`` and
    ``age_school_end`` (blank: still in school) instead of the categorical
    covariates.
    """
    cohorts = list(cohorts)
    survey = all(c.covariate_names == COVARIATE_NAMES for c in cohorts)
    columns = CSV_COLUMNS if survey else SIM_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for c in cohorts:
            for i in range(len(c)):
                row = [c.design.value, _fmt(float(c.z[i])), _fmt(float(c.y[i]))]
                if survey:
                    row += [_fmt(float(v)) for v in c.covariates[i]]
                else:
                    row += [_fmt(float(c.column("x")[i])), _fmt(float(c.a_w[i]))]
                w.writerow(row)


def read_simulation_csv(path) -> dict[Design, CohortSample]:
    path = Path(path)
    rows = _read_rows(path)
    header = next(rows)
    for col in SIM_COLUMNS:
        if col not in header:
            raise SurveyFormatError(f"{path}: missing required column {col!r}")
    data = {Design.I: [], Design.II: []}
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        try:
            d = Design.parse(row["design"])
            z = float(row["age_at_survey"])
            y = float(row["age_at_marriage"]) if row["age_at_marriage"].strip() else math.nan
            x = float(row["x"])
            a_w = float(row["age_school_end"]) if row["age_school_end"].strip() else math.inf
        except (ValueError, ModelError) as exc:
            raise SurveyFormatError(f"{where}: {exc}") from None
        if d is Design.I and math.isnan(y):
            raise SurveyFormatError(f"{where}: design-I row without age_at_marriage")
        data[d].append((z, y, a_w, x))
    out = {}
    for d, recs in data.items():
        if recs:
            z, y, a_w, x = map(np.array, zip(*recs))
            out[d] = CohortSample(d, z, y, a_w, x[:, None], ("x",))
        else:
            out[d] = CohortSample.empty(d)
    return out


def read_cohort_file(path) -> dict[Design, CohortSample]:
    """Dispatch on the header: survey schema or simulation schema."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in (fh.readline().strip().split(","))]
    if "x" in header and "age_school_end" in header:
        return read_simulation_csv(path)
    return parse_survey_file(path, None if "design" in header else Design.II)


# ---------------------------------------------------------------------------
# fitting


def _column_totals(tables: Sequence[CellTable], p: int):
    exposure = np.zeros(p)
    events = np.zeros(p)
    for t in tables:
        w = t.exposure + t.exposure_event + t.exposure_sampling
        exposure += np.asarray(t.X.T @ w).ravel()
        if t.interval_event.any():
            events += np.asarray(t.X.T @ (t.exposure_event > 0).astype(float)).ravel()
        if t.exact_event.any():
            events += np.asarray(t.event_X.sum(axis=0)).ravel()
    return exposure, events


def fit_survey(cohort_I: CohortSample | None, cohort_II: CohortSample | None,
               spec_init: IncidenceModel | None = None, correction: bool = True,
               config: ModelConfig = ModelConfig(), theta_init=None) -> FitResult:
    """Fit the banded incidence model to the design-I and/or design-II cohort.

    Parameters without any exposure are not identifiable; they are held at
    zero, reported in ``FitResult.flagged`` and given no standard error.
    """
    cohorts = [c for c in (cohort_I, cohort_II) if c is not None and len(c)]
    base = spec_init if spec_init is not None else IncidenceModel()
    cfg = ModelConfig(config.a_e, base.a_0, config.cross_section_time)
    full_model = IncidenceModel(base.theta_full, None, base.cuts, base.covariates,
                                base.interval_censored, base.time_dependent_education)
    tables = [full_model.cells(c, cfg) for c in cohorts]
    exposure, events = _column_totals(tables, len(full_model.all_names))
    names = full_model.all_names
    flagged = tuple(n for n, e in zip(names, exposure) if e <= 0)
    for n in flagged:
        log.warning("parameter %s has no exposure; not identifiable, held at 0", n)
    no_events = [n for n, e, x in zip(names, events, exposure) if e == 0 and x > 0]
    for n in no_events:
        log.warning("parameter %s has exposure but no marriages; estimate will diverge", n)
    free = [n for n in names if n not in flagged]
    theta = full_model.theta_full.copy()
    for i, n in enumerate(names):
        if n in flagged:
            theta[i] = 0.0
    model = IncidenceModel(theta, free, base.cuts, base.covariates,
                           base.interval_censored, base.time_dependent_education)
    objective = Objective(cohorts, model, cfg, correction)
    init = None
    if theta_init is not None:
        init = np.asarray(theta_init, dtype=float)[[names.index(n) for n in free]]
    res = fit_objective(objective, init)

    theta_full = model.full(res.theta_hat)
    se_full = cov_full = None
    if res.se is not None:
        idx = [names.index(n) for n in free]
        se_full = np.full(len(names), np.nan)
        se_full[idx] = res.se
        cov_full = np.full((len(names), len(names)), np.nan)
        cov_full[np.ix_(idx, idx)] = res.covariance
    message = res.message
    if flagged:
        message += "; not identifiable (no exposure): " + ", ".join(flagged)
    if no_events:
        message += "; no marriages observed for: " + ", ".join(no_events)
    return FitResult(names, theta_full, cov_full, se_full, res.loglik, res.converged,
                     res.iterations, message, res.n_records, flagged)


def baseline_rate_table(fit: FitResult, cuts: Sequence[float] = AGE_BAND_CUTS) -> list[dict]:
    """``exp(alpha_j)`` with 95% intervals, one row per age band."""
    rows = []
    labels = band_labels(cuts)
    for j, label in enumerate(labels):
        a = fit.theta_hat[j]
        s = math.nan if fit.se is None else fit.se[j]
        rows.append({"band": label, "rate": math.exp(a),
                     "ci_low": math.exp(a - Z95 * s), "ci_high": math.exp(a + Z95 * s)})
    return rows


def rate_ratio_table(fit: FitResult) -> list[dict]:
    """``exp(beta)`` with 95% intervals for every non-reference covariate level."""
    rows = []
    for i, name in enumerate(fit.names):
        if name.startswith("alpha_"):
            continue
        cov, level = name.rsplit("_", 1)
        b = fit.theta_hat[i]
        s = math.nan if fit.se is None else fit.se[i]
        rows.append({"covariate": cov, "level": LEVEL_LABELS[cov][int(level)], "rr": math.exp(b),
                     "ci_low": math.exp(b - Z95 * s), "ci_high": math.exp(b + Z95 * s)})
    return rows


def write_table(path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([f"{r[c]:.6g}" if isinstance(r[c], float) else r[c] for c in columns])


# ---------------------------------------------------------------------------
# synthetic surveys

#: population shares used by :func:`generate_survey`, roughly all-India
DEFAULT_COVARIATE_PROBS = {
    "residence": (0.40, 0.60),
    "caste": (0.17, 0.13, 0.30, 0.40),
    "religion": (0.75, 0.13, 0.07, 0.02, 0.03),
    "education": (0.48, 0.28, 0.16, 0.08),
}


def default_true_theta() -> np.ndarray:
    """A plausible 31-parameter truth for synthetic round trips."""
    baseline = np.log([0.010, 0.040, 0.070, 0.100, 0.130, 0.150, 0.160, 0.160, 0.150,
                       0.140, 0.130, 0.120, 0.110, 0.100, 0.090, 0.080, 0.040])
    effects = [
        -0.10, -0.25, -0.45,          # birth cohort
        0.17,                         # rural
        -0.10, 0.00, -0.15,           # caste
        0.05, -0.40, -0.30, -0.20,    # religion
        -0.70, -1.15, -1.30,          # education
    ]
    return np.concatenate([baseline, effects])


def generate_survey(rng: np.random.Generator, n: int, design, theta=None,
                    survey_year: float = 2005.0, ages=(15, 49),
                    probs: dict | None = None, model: IncidenceModel | None = None) -> CohortSample:
    """Draw a synthetic survey of ``n`` women from a known incidence model.

    Interviews happen at whole-year ages drawn uniformly from ``ages``;
    birth cohort follows from the implied birth year.  Design I keeps only
    women married by the interview, drawing until ``n`` are collected.
    """
    design = Design.parse(design)
    probs = {**DEFAULT_COVARIATE_PROBS, **(probs or {})}
    if model is None:
        model = IncidenceModel(default_true_theta() if theta is None else theta)
    elif theta is not None:
        model = model.with_theta(theta)
    parts, have = [], 0
    while have < n:
        batch = max(n - have, 16) if design is Design.II else int(1.6 * (n - have)) + 16
        z = rng.integers(ages[0], ages[1] + 1, batch).astype(float)
        birth = survey_year - z - rng.random(batch)
        cov = {"birth_cohort": birth_cohort_code(birth)}
        for name in ("residence", "caste", "religion", "education"):
            cov[name] = rng.choice(len(probs[name]), size=batch, p=probs[name])
        full_cov = {c: cov[c] for c in COVARIATE_NAMES}
        bands = np.arange(model.n_bands)
        eta = np.stack([model._linear_predictor(np.full(batch, k), full_cov) for k in bands], axis=1)
        rates = np.exp(eta)
        widths = np.diff(model.cuts)
        cum = np.concatenate([np.zeros((batch, 1)), np.cumsum(rates * widths, axis=1)], axis=1)
        e = rng.exponential(1.0, batch)
        k = np.minimum((cum[:, 1:] < e[:, None]).sum(axis=1), model.n_bands - 1)
        y = model.cuts[k] + (e - cum[np.arange(batch), k]) / rates[np.arange(batch), k]
        y[e >= cum[:, -1]] = np.nan
        married = ~np.isnan(y) & (y < z)
        y_rep = np.where(married, np.floor(np.nan_to_num(y)), np.nan)
        keep = married if design is Design.I else np.ones(batch, dtype=bool)
        codes = np.column_stack([full_cov[c] for c in COVARIATE_NAMES])[keep]
        parts.append((z[keep], y_rep[keep], codes))
        have += int(keep.sum())
    z, y, codes = (np.concatenate(a) for a in zip(*parts))
    return CohortSample(design, z[:n], y[:n], np.full(n, np.nan), codes[:n].astype(float), COVARIATE_NAMES)
