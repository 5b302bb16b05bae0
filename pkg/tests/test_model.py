import copy
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delay_impulse import catalog
from delay_impulse.model import (
    DelayExceedsHorizon,
    DimensionMismatch,
    EmptyImpulseSet,
    ImpulseNotInSet,
    InvalidParameter,
    ProblemSpec,
    SchemaViolation,
    as_fraction,
    check_problem,
    eval_dynamics,
    eval_rewards,
    validate_problem,
)


def gbm_doc(**delay):
    doc = catalog.harvest(m=2)
    doc["delay"].update(delay)
    return doc


def load(doc):
    return validate_problem(ProblemSpec.from_dict(doc))


def single(dynamics, rewards=None, impulses=(0.0,), x0=(0.0,)):
    doc = catalog.counting()
    doc["dynamics"] = dynamics
    if rewards:
        doc["rewards"].update(rewards)
    doc["impulses"] = list(impulses)
    doc["initial_state"] = list(x0)
    doc["grid"]["x_min"] = [-1.0] * len(x0)
    doc["grid"]["x_max"] = [1.0] * len(x0)
    doc["grid"]["nx"] = [5] * len(x0)
    return load(doc)


def test_valid_gbm_problem():
    p = load(gbm_doc(T=1, h=0.25, m=2))
    assert p.dim == 1 and p.n_impulses == 2 and p.delay.delay == Fraction(1, 2)


def test_delay_exceeds_horizon():
    with pytest.raises(DelayExceedsHorizon):
        load(gbm_doc(h=0.6, m=2))


def test_empty_impulse_set():
    doc = gbm_doc()
    doc["impulses"] = []
    with pytest.raises(EmptyImpulseSet):
        load(doc)


def test_duplicate_impulses_rejected():
    doc = gbm_doc()
    doc["impulses"] = [0.25, 0.25]
    with pytest.raises(InvalidParameter):
        load(doc)


def test_negative_volatility_rejected():
    doc = gbm_doc()
    doc["dynamics"]["sigma"] = -0.1
    with pytest.raises(InvalidParameter):
        load(doc)


def test_dimension_mismatch_initial_state():
    doc = gbm_doc()
    doc["initial_state"] = [1.0, 2.0]
    with pytest.raises(DimensionMismatch):
        load(doc)


def test_violations_are_all_reported():
    doc = gbm_doc(h=0.6)
    doc["initial_state"] = [1.0, 2.0]
    codes = {v.code for v in check_problem(ProblemSpec.from_dict(doc))}
    assert {"DelayExceedsHorizon", "DimensionMismatch"} <= codes


def test_m_zero_is_schema_violation():
    with pytest.raises(SchemaViolation):
        ProblemSpec.from_dict(gbm_doc(m=0))


def test_unknown_key_is_schema_violation():
    doc = gbm_doc()
    doc["delay"]["lag"] = 1
    with pytest.raises(SchemaViolation):
        ProblemSpec.from_dict(doc)
    doc = gbm_doc()
    doc["extra"] = 1
    with pytest.raises(SchemaViolation):
        ProblemSpec.from_dict(doc)


def test_missing_key_is_schema_violation():
    doc = gbm_doc()
    del doc["rewards"]["cost"]
    with pytest.raises(SchemaViolation):
        ProblemSpec.from_dict(doc)


def test_as_fraction_forms():
    assert as_fraction(0.1) == Fraction(1, 10)
    assert as_fraction("1/480") == Fraction(1, 480)
    assert as_fraction(3) == 3
    with pytest.raises(SchemaViolation):
        as_fraction("abc")
    with pytest.raises(SchemaViolation):
        as_fraction(True)


@pytest.mark.parametrize("name", sorted(catalog.BUNDLED))
def test_round_trip_of_bundled_problems(name):
    spec = ProblemSpec.from_dict(catalog.bundled(name))
    again = ProblemSpec.from_dict(copy.deepcopy(spec.to_dict()))
    assert again == spec
    assert again.to_dict() == spec.to_dict()


@pytest.mark.parametrize("name", sorted(catalog.BUNDLED))
def test_bundled_files_match_builders(name):
    assert catalog.bundled(name) == catalog.BUNDLED[name]()


def test_eval_dynamics_gbm():
    p = single({"family": "gbm", "mu": 0.1, "sigma": 0.2})
    b, s = eval_dynamics(p, [2.0])
    np.testing.assert_allclose(b, [0.2])
    np.testing.assert_allclose(s, [[0.4]])


def test_eval_dynamics_abm():
    p = single({"family": "abm", "mu": 0.0, "sigma": 1.0})
    b, s = eval_dynamics(p, [5.0])
    assert b.tolist() == [0.0] and s.tolist() == [[1.0]]


def test_eval_dynamics_ou():
    p = single({"family": "ou", "kappa": 1.0, "theta": 0.0, "sigma": 0.5})
    b, s = eval_dynamics(p, [-1.0])
    assert b.tolist() == [1.0] and s.tolist() == [[0.5]]


def test_eval_dynamics_dimension_mismatch():
    p = single({"family": "abm", "mu": 0.0, "sigma": 1.0})
    with pytest.raises(DimensionMismatch):
        eval_dynamics(p, [1.0, 2.0])


def test_financial_impulse_map():
    doc = catalog.shortfall()
    doc["impulses"] = [2.0]
    p = load(doc)
    _, _, c, gamma = eval_rewards(p, [10.0, 1.0, 5.0], 2.0)
    assert gamma.tolist() == [10.0, 2.0, -15.0]
    assert c == pytest.approx(-0.002)


def test_constant_rewards():
    p = load(catalog.counting())
    f, g, c, gamma = eval_rewards(p, [3.0], 0.0)
    assert (f, g, c) == (0.0, 0.0, 1.0) and gamma.tolist() == [3.0]


def test_affine_terminal():
    p = load(catalog.harvest())
    assert eval_rewards(p, [7.0], 0.25)[1] == 7.0


def test_impulse_not_in_set():
    p = load(catalog.counting())
    with pytest.raises(ImpulseNotInSet):
        eval_rewards(p, [0.0], 5.0)


def test_shortfall_payoff_values():
    p = load(catalog.shortfall(strike=1.0))
    # put claim (K - S)_+ against wealth Z + Y S
    x = np.array([[0.8, -0.5, 0.1], [1.2, 0.0, 0.0], [0.8, -1.0, 1.0]])
    assert p.terminal(x).tolist() == pytest.approx([-(0.2 - (0.1 - 0.4)), 0.0, 0.0])


def test_harvest_cost_and_map():
    p = load(catalog.harvest(fee=0.01))
    x = np.array([[2.0]])
    assert p.cost(x, 1)[0] == pytest.approx(0.5 * 2.0 - 0.01)
    assert p.impulse_map(x, 1)[0, 0] == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_growth_bound_holds_on_random_problems(seed):
    p = load(catalog.tiny_random(seed))
    g = p.spec.grid
    box = np.maximum(np.abs(g.x_min), np.abs(g.x_max))
    x = np.linspace(-box, box, 41)
    c_r, c_m = p.growth_constants(box)
    norm = 1.0 + np.linalg.norm(x, axis=-1)
    for e in range(p.n_impulses):
        lhs = np.abs(p.running(x)) + np.abs(p.terminal(x)) + np.abs(p.cost(x, e))
        assert np.all(lhs <= c_r * norm + 1e-12)
        assert np.all(np.linalg.norm(p.impulse_map(x, e), axis=-1) <= c_m * norm + 1e-12)
