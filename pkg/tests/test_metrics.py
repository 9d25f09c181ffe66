import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgnflow.errors import InvalidArgument
from mgnflow.metrics import (RolloutResult, ensemble_summary, plume_saturation_error,
                             pressure_relative_error)


def sat(pred, truth):
    return RolloutResult(np.atleast_2d(np.asarray(pred, float)),
                         np.atleast_2d(np.asarray(truth, float)), "s_g")


def pres(pred, truth):
    return RolloutResult(np.atleast_2d(np.asarray(pred, float)),
                         np.atleast_2d(np.asarray(truth, float)), "p_g")


# decimal inputs are not exact binary fractions, so "exact" means a few ulp
ULP = 1e-15


def test_plume_examples():
    assert plume_saturation_error(sat([0.4, 0.005], [0.5, 0.0])) == pytest.approx(0.1, rel=ULP)
    assert plume_saturation_error(sat([0.0, 0.02], [0.0, 0.0])) == 0.02
    assert plume_saturation_error(sat([0.3, 0.2], [0.3, 0.2])) == 0.0


def test_plume_empty_indicator_is_zero():
    assert plume_saturation_error(sat([0.005, -0.01], [0.0, 0.01])) == 0.0


def test_pressure_example():
    assert pressure_relative_error(pres([10.9e6], [11e6]), 10e6) == pytest.approx(0.01, rel=ULP)
    assert pressure_relative_error(pres([11e6, 9e6], [11e6, 9e6])) == 0.0


def test_wrong_variable_and_pinit():
    with pytest.raises(InvalidArgument):
        pressure_relative_error(sat([0.1], [0.1]))
    with pytest.raises(InvalidArgument):
        plume_saturation_error(pres([1.0], [1.0]))
    with pytest.raises(InvalidArgument):
        pressure_relative_error(pres([1.0], [1.0]), p_init=0.0)


def test_shape_mismatch():
    with pytest.raises(InvalidArgument):
        RolloutResult(np.zeros((2, 3)), np.zeros((2, 4)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_pressure_linear_in_error(seed):
    rng = np.random.default_rng(seed)
    truth = rng.uniform(9e6, 12e6, (3, 5))
    err = rng.normal(scale=1e5, size=(3, 5))
    one = pressure_relative_error(pres(truth + err, truth))
    two = pressure_relative_error(pres(truth + 2 * err, truth))
    assert two == pytest.approx(2 * one, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_plume_ignores_quiet_cells_and_cell_order(seed):
    rng = np.random.default_rng(seed)
    truth = rng.uniform(0, 0.6, (4, 6))
    pred = truth + rng.normal(scale=0.05, size=truth.shape)
    base = plume_saturation_error(sat(pred, truth))
    assert base >= 0
    quiet_t = rng.uniform(0, 0.01, (4, 3))
    quiet_p = rng.uniform(-0.01, 0.01, (4, 3))
    padded = plume_saturation_error(sat(np.hstack([pred, quiet_p]), np.hstack([truth, quiet_t])))
    assert padded == pytest.approx(base, rel=1e-12)
    perm = rng.permutation(6)
    assert plume_saturation_error(sat(pred[:, perm], truth[:, perm])) == pytest.approx(base, rel=1e-12)


def test_upto_restricts_steps():
    r = sat([[0.1], [0.5]], [[0.1], [0.1]])
    assert plume_saturation_error(r.upto(1)) == 0.0
    assert plume_saturation_error(r.upto(2)) == pytest.approx(0.2)
    with pytest.raises(InvalidArgument):
        r.upto(3)


def test_summary_examples():
    assert ensemble_summary([0.1]) == dict(min=0.1, q1=0.1, median=0.1, q3=0.1, max=0.1)
    s = ensemble_summary([1, 2, 3, 4, 5])
    assert (s["q1"], s["median"], s["q3"]) == (2.0, 3.0, 4.0)
    with pytest.raises(InvalidArgument):
        ensemble_summary([])


@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=20), st.randoms())
def test_summary_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert ensemble_summary(values) == ensemble_summary(shuffled)
