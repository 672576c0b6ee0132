import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retrocohort.core_model import (
    LEGAL_TRANSITIONS,
    ModelConfig,
    ModelError,
    PiecewiseRate,
    SimParams,
    State,
    integrated_hazard,
    params_from_mapping,
    rate_matrix,
    read_keyvalue,
    transition_rate,
    config_from_mapping,
    write_keyvalue,
)

# exponents written out by hand from the intensity matrix:
# (from, to) -> coefficients of (m, b*x, c, d, g, s, r)
EXPONENTS = {
    (1, 2): "m bx c",
    (1, 3): "s bx",
    (1, 5): "r bx c",
    (2, 4): "s bx d",
    (2, 5): "r bx c g",
    (3, 4): "m bx",
    (3, 5): "r bx",
    (4, 5): "r bx g",
}


def reference_rate(i, j, x, p):
    terms = {"m": p.m, "bx": p.b * x, "c": p.c, "d": p.d, "g": p.g, "s": p.s, "r": p.r}
    return math.exp(sum(terms[t] for t in EXPONENTS[(i, j)].split()))


def test_state_space():
    assert len(State) == 5
    assert State.DEAD.absorbing
    assert not any(s.absorbing for s in State if s is not State.DEAD)
    assert set((int(a), int(b)) for a, b in LEGAL_TRANSITIONS) == set(EXPONENTS)
    assert all(a is not State.DEAD for a, _ in LEGAL_TRANSITIONS)


def test_model_config_defaults_and_validation():
    cfg = ModelConfig()
    assert (cfg.a_e, cfg.a_0) == (6, 12)
    with pytest.raises(ModelError):
        ModelConfig(a_e=12, a_0=12)
    with pytest.raises(ModelError):
        ModelConfig(a_e=0, a_0=12)


def test_simparams_non_differential():
    assert SimParams().non_differential
    assert not SimParams(d=1.0).non_differential
    assert not SimParams(g=1.0).non_differential
    with pytest.raises(ModelError):
        SimParams(m=math.nan)


@pytest.mark.parametrize("frm,to,x,expected", [
    (3, 4, 0, math.exp(-1.5)),
    (1, 2, 1, math.exp(-1.5)),
])
def test_transition_rate_examples(frm, to, x, expected):
    assert transition_rate(State(frm), State(to), x, SimParams()) == pytest.approx(expected, rel=1e-15)
    assert expected == pytest.approx(0.22313, abs=5e-6)


@pytest.mark.parametrize("x", [0, 1])
def test_stop_school_rates_equal_without_d(x):
    p = SimParams(d=0.0)
    assert transition_rate(State(1), State(3), x, p) == transition_rate(State(2), State(4), x, p)


@pytest.mark.parametrize("pair", [(1, 4), (3, 1), (5, 1), (2, 3), (4, 3), (1, 1)])
def test_illegal_transition(pair):
    with pytest.raises(ModelError):
        transition_rate(State(pair[0]), State(pair[1]), 0, SimParams())


@pytest.mark.parametrize("params", [SimParams(), SimParams(d=1.0, g=1.0), SimParams(m=0.3, b=-1, c=2, s=-2, r=-4)])
@pytest.mark.parametrize("x", [0, 1])
def test_rate_matrix_against_independent_table(params, x):
    q = rate_matrix(x, params)
    for i in range(1, 6):
        legal = [j for (a, j) in EXPONENTS if a == i]
        exit_rate = sum(reference_rate(i, j, x, params) for j in legal)
        assert -q[i - 1, i - 1] == pytest.approx(exit_rate, rel=1e-14)
        for j in range(1, 6):
            if j in legal:
                assert q[i - 1, j - 1] == pytest.approx(reference_rate(i, j, x, params), rel=1e-14)
            elif j != i:
                assert q[i - 1, j - 1] == 0.0
    np.testing.assert_allclose(q.sum(axis=1), 0.0, atol=1e-15)


@pytest.mark.parametrize("rate,u,v,expected", [
    (PiecewiseRate.constant(0.2, 12, 50), 12, 17, 1.0),
    (PiecewiseRate.constant(0.2, 12, 50), 30, 30, 0.0),
    (PiecewiseRate([12, 15, 20], [0.1, 0.3]), 13, 17, 0.8),
])
def test_integrated_hazard_examples(rate, u, v, expected):
    assert integrated_hazard(rate, u, v) == pytest.approx(expected, rel=1e-14, abs=1e-15)


def test_integrated_hazard_domain_errors():
    r = PiecewiseRate([12, 15, 20], [0.1, 0.3])
    with pytest.raises(ModelError):
        integrated_hazard(r, 16, 14)
    with pytest.raises(ModelError):
        integrated_hazard(r, 11, 14)
    with pytest.raises(ModelError):
        integrated_hazard(r, 13, 21)


@pytest.mark.parametrize("cuts,values", [([12], []), ([12, 15], [0.1, 0.2]), ([12, 12], [0.1]),
                                         ([12, 15], [-0.1]), ([12, 15], [math.inf])])
def test_piecewise_rate_validation(cuts, values):
    with pytest.raises(ModelError):
        PiecewiseRate(cuts, values)


def test_piecewise_rate_is_immutable():
    r = PiecewiseRate([0, 1, 2], [1.0, 2.0])
    with pytest.raises(ValueError):
        r.values[0] = 5.0


def test_piecewise_rate_evaluation_left_closed():
    r = PiecewiseRate([0, 1, 2], [1.0, 2.0])
    assert r(0) == 1.0 and r(1) == 2.0 and r(2) == 2.0
    with pytest.raises(ModelError):
        r(2.5)
    assert r.refined([0.5, 1.5]) .integrate(0, 2) == pytest.approx(3.0)


@st.composite
def rate_and_points(draw):
    k = draw(st.integers(1, 8))
    widths = draw(st.lists(st.floats(0.1, 10), min_size=k, max_size=k))
    values = draw(st.lists(st.floats(0, 5), min_size=k, max_size=k))
    cuts = np.concatenate([[12.0], 12.0 + np.cumsum(widths)])
    pts = sorted(draw(st.lists(st.floats(0, 1), min_size=3, max_size=3)))
    u, v, w = (cuts[0] + p * (cuts[-1] - cuts[0]) for p in pts)
    return PiecewiseRate(cuts, values), u, v, w


@settings(max_examples=200, deadline=None)
@given(rate_and_points())
def test_integrated_hazard_additive_and_monotone(args):
    rate, u, v, w = args
    whole = integrated_hazard(rate, u, w)
    parts = integrated_hazard(rate, u, v) + integrated_hazard(rate, v, w)
    assert whole == pytest.approx(parts, rel=1e-12, abs=1e-12)
    assert integrated_hazard(rate, u, v) >= 0
    assert integrated_hazard(rate, u, w) >= integrated_hazard(rate, u, v)
    assert integrated_hazard(rate, u, w) >= integrated_hazard(rate, v, w)


def test_keyvalue_roundtrip(tmp_path):
    path = tmp_path / "s.cfg"
    write_keyvalue(path, {"m": -1.5, "d": 1.0, "a_0": 12}, header="test scenario")
    path.write_text(path.read_text() + "# trailing comment\n\n")
    values = read_keyvalue(path)
    p = params_from_mapping(values)
    assert (p.m, p.d) == (-1.5, 1.0)
    assert config_from_mapping(values).a_0 == 12


def test_keyvalue_malformed(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("m -1.5\n")
    with pytest.raises(ModelError):
        read_keyvalue(path)
