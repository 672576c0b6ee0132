"""Observed survey records and cohorts.

A cohort is stored column-wise (numpy arrays) because every consumer, the
likelihood in particular, works on whole columns.  ``SurveyRecord`` is the
row view.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core_model import ModelConfig, ModelError

#: a_w value for somebody still in school when observation stops
STILL_IN_SCHOOL = math.inf


class Design(enum.Enum):
    """Sampling design: I = ever-married only (prevalent), II = everybody."""

    I = "I"
    II = "II"

    @classmethod
    def parse(cls, value) -> "Design":
        if isinstance(value, Design):
            return value
        text = str(value).strip().upper()
        if text in ("1", "I"):
            return cls.I
        if text in ("2", "II"):
            return cls.II
        raise ModelError(f"unknown design {value!r}")


@dataclass(frozen=True)
class SurveyRecord:
    design: Design
    z: float
    y: float | None
    a_w: float
    covariates: tuple = ()

    @property
    def delta(self) -> int:
        return int(self.y is not None and self.y <= self.z)

    def validate(self, config: ModelConfig = ModelConfig()) -> None:
        if self.design is Design.I and self.y is None:
            raise ModelError("design-I record without a marriage age")
        if self.y is not None and not (config.a_0 <= self.y <= self.z):
            raise ModelError(f"marriage age {self.y} outside [{config.a_0}, {self.z}]")
        if self.a_w < config.a_e:
            raise ModelError(f"a_w={self.a_w} below school-start age {config.a_e}")


@dataclass(eq=False)
class CohortSample:
    """Records of one design.

    ``y`` holds NaN for never-married individuals and ``a_w`` holds
    ``inf`` for individuals still in school.
    """

    design: Design
    z: np.ndarray
    y: np.ndarray
    a_w: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ("x",)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.design = Design.parse(self.design)
        self.z = np.asarray(self.z, dtype=float).reshape(-1)
        n = len(self.z)
        self.y = np.asarray(self.y, dtype=float).reshape(n)
        self.a_w = np.asarray(self.a_w, dtype=float).reshape(n)
        cov = np.asarray(self.covariates)
        if cov.size == 0:
            cov = np.zeros((n, len(self.covariate_names)))
        self.covariates = cov.reshape(n, len(self.covariate_names) if n == 0 else -1)
        if self.covariates.shape[1] != len(self.covariate_names):
            raise ModelError("covariate columns do not match covariate_names")
        self.covariate_names = tuple(self.covariate_names)

    def __len__(self) -> int:
        return len(self.z)

    @property
    def married(self) -> np.ndarray:
        return ~np.isnan(self.y)

    @property
    def delta(self) -> np.ndarray:
        return (self.married & (np.nan_to_num(self.y, nan=np.inf) <= self.z)).astype(int)

    def column(self, name: str) -> np.ndarray:
        return self.covariates[:, self.covariate_names.index(name)]

    def validate(self, config: ModelConfig = ModelConfig()) -> "CohortSample":
        married = self.married
        if self.design is Design.I and not married.all():
            raise ModelError("design-I cohort contains records without a marriage age")
        y = self.y[married]
        if np.any(y < config.a_0) or np.any(y > self.z[married]):
            raise ModelError("marriage ages must lie in [a_0, z]")
        if np.any(self.a_w < config.a_e):
            raise ModelError("a_w below school-start age")
        return self

    def records(self) -> Iterator[SurveyRecord]:
        for i in range(len(self)):
            y = None if np.isnan(self.y[i]) else float(self.y[i])
            cov = tuple(v.item() for v in self.covariates[i])
            yield SurveyRecord(self.design, float(self.z[i]), y, float(self.a_w[i]), cov)

    def subset(self, index) -> "CohortSample":
        return CohortSample(self.design, self.z[index], self.y[index], self.a_w[index],
                            self.covariates[index], self.covariate_names, dict(self.meta))

    @classmethod
    def from_records(cls, design, records: Iterable[SurveyRecord],
                     covariate_names: Sequence[str] = ("x",)) -> "CohortSample":
        design = Design.parse(design)
        rows = list(records)
        for r in rows:
            if r.design is not design:
                raise ModelError(f"record tagged {r.design.value} in a design-{design.value} cohort")
        k = len(covariate_names)
        return cls(
            design,
            np.array([r.z for r in rows], dtype=float),
            np.array([np.nan if r.y is None else r.y for r in rows], dtype=float),
            np.array([r.a_w for r in rows], dtype=float),
            np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), k),
            tuple(covariate_names),
        )

    @classmethod
    def empty(cls, design, covariate_names: Sequence[str] = ("x",)) -> "CohortSample":
        k = len(covariate_names)
        return cls(design, np.empty(0), np.empty(0), np.empty(0), np.empty((0, k)),
                   tuple(covariate_names))

    @classmethod
    def concat(cls, samples: Sequence["CohortSample"]) -> "CohortSample":
        """Stack cohorts of one design with identical covariate columns."""
        samples = list(samples)
        if not samples:
            raise ModelError("nothing to concatenate")
        first = samples[0]
        for s in samples[1:]:
            if s.design is not first.design or s.covariate_names != first.covariate_names:
                raise ModelError("cohorts differ in design or covariate columns")
        return cls(first.design,
                   np.concatenate([s.z for s in samples]),
                   np.concatenate([s.y for s in samples]),
                   np.concatenate([s.a_w for s in samples]),
                   np.concatenate([s.covariates for s in samples]),
                   first.covariate_names)
