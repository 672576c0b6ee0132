import math

import numpy as np
import pytest

from retrocohort.core_model import ModelError
from retrocohort.records import STILL_IN_SCHOOL, CohortSample, Design, SurveyRecord


@pytest.mark.parametrize("text,expected", [("I", Design.I), (" ii ", Design.II), ("1", Design.I), (2, Design.II)])
def test_design_parse(text, expected):
    assert Design.parse(text) is expected


def test_design_parse_unknown():
    with pytest.raises(ModelError):
        Design.parse("III")


@pytest.mark.parametrize("rec", [
    SurveyRecord(Design.I, 20.0, None, 6.0),
    SurveyRecord(Design.II, 20.0, 11.0, 6.0),
    SurveyRecord(Design.II, 20.0, 21.0, 6.0),
    SurveyRecord(Design.II, 20.0, None, 5.0),
])
def test_record_validation(rec):
    with pytest.raises(ModelError):
        rec.validate()


def test_record_delta():
    assert SurveyRecord(Design.II, 20.0, 18.0, STILL_IN_SCHOOL).delta == 1
    assert SurveyRecord(Design.II, 20.0, None, 6.0).delta == 0
    SurveyRecord(Design.II, 20.0, 18.0, math.inf).validate()


def test_cohort_row_view_roundtrip():
    recs = [SurveyRecord(Design.II, 20.0, 18.0, 16.0, (1.0,)), SurveyRecord(Design.II, 25.0, None, math.inf, (0.0,))]
    c = CohortSample.from_records(Design.II, recs)
    assert list(c.records()) == recs
    assert c.delta.tolist() == [1, 0]


def test_cohort_concat_and_empty():
    a = CohortSample(Design.I, [20.0], [18.0], [6.0], [[1.0]])
    b = CohortSample(Design.I, [30.0, 31.0], [19.0, 20.0], [6.0, 6.0], [[0.0], [1.0]])
    c = CohortSample.concat([a, b, CohortSample.empty(Design.I)])
    assert len(c) == 3 and c.z.tolist() == [20.0, 30.0, 31.0]
    with pytest.raises(ModelError):
        CohortSample.concat([a, CohortSample.empty(Design.II)])
    assert len(CohortSample.empty(Design.II, ("p", "q")).covariates.T) == 2


def test_cohort_shape_checks():
    with pytest.raises(ModelError):
        CohortSample(Design.II, [20.0], [np.nan], [6.0], [[1.0, 2.0]], ("x",))
    with pytest.raises(ModelError):
        CohortSample(Design.I, [20.0], [np.nan], [6.0], [[1.0]]).validate()
