import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from boundary_rl.dynamics import (BENCHMARKS, UnknownBenchmark, VisibilityError, CostSpec,
                                  eval_drift, eval_input_map, make_benchmark, quadratic_cost,
                                  running_cost, BoundaryProblem)


def test_drift_examples(circuit, cubic, manipulator):
    assert eval_drift(circuit.system, [0.5]) == pytest.approx([-0.5])
    assert eval_drift(cubic.system, [0.0]) == pytest.approx([0.0])
    np.testing.assert_allclose(eval_drift(manipulator.system, [0.3, 0.0]),
                               [0.0, -10 * math.sin(0.3)], atol=1e-12)
    assert eval_drift(manipulator.system, [0.3, 0.0])[1] == pytest.approx(-2.9552, abs=1e-4)


@pytest.mark.parametrize("name", BENCHMARKS)
def test_drift_vanishes_at_origin(name):
    p = make_benchmark(name)
    assert np.all(eval_drift(p.system, np.zeros(p.system.n)) == 0)


def test_input_map_examples(circuit, cubic, manipulator):
    assert eval_input_map(circuit.system, [3.0]).tolist() == [[1.0]]
    assert eval_input_map(cubic.system, [-2.0]).tolist() == [[1.0]]
    assert eval_input_map(manipulator.system, [0.1, 0.2]).tolist() == [[0.0], [1.0]]


def test_learner_view_hides_drift(circuit):
    view = circuit.system.learner_view()
    with pytest.raises(VisibilityError):
        eval_drift(view, [0.1])
    assert eval_input_map(view, [0.1]).tolist() == [[1.0]]


@pytest.mark.parametrize("name", BENCHMARKS)
def test_views_share_input_map(name):
    p = make_benchmark(name)
    view = p.system.learner_view()
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(1000, p.system.n)):
        np.testing.assert_array_equal(eval_input_map(view, x), eval_input_map(p.system, x))


def test_running_cost_examples(manipulator):
    c = quadratic_cost(np.eye(1), np.eye(1))
    assert running_cost(c, [1.0], [1.0]) == 2.0
    assert running_cost(c, [0.0], [0.0]) == 0.0
    assert running_cost(manipulator.cost, [0.3, 0.0], [0.0]) == pytest.approx(0.9)


@given(arrays(float, 2, elements=st.floats(-5, 5)), arrays(float, 1, elements=st.floats(-5, 5)))
def test_running_cost_zero_iff_origin(x, u):
    c = make_benchmark("manipulator").cost
    r = running_cost(c, x, u)
    assert r >= 0
    if np.any(x != 0) or np.any(u != 0):
        assert r > 0 or np.linalg.norm(np.concatenate([x, u])) < 1e-150


def test_benchmark_boundaries(circuit, cubic, manipulator):
    assert circuit.x0.tolist() == [0.5] and circuit.xT.tolist() == [0.9]
    assert cubic.x0.tolist() == [1.0] and cubic.xT.tolist() == [1.5]
    assert manipulator.x0.tolist() == [0.3, 0.0] and manipulator.xT.tolist() == [0.1, 0.0]
    assert eval_drift(cubic.system, [2.0]) == pytest.approx([8.0])


def test_unknown_benchmark():
    with pytest.raises(UnknownBenchmark):
        make_benchmark("pendulum")
    with pytest.raises(ValueError):
        make_benchmark("rl_circuit", {"mass": 1.0})


def test_params_override():
    p = make_benchmark("rl_circuit", {"r": 2.0, "l": 0.5})
    assert eval_drift(p.system, [1.0]) == pytest.approx([-4.0])
    assert eval_input_map(p.system, [1.0]).tolist() == [[2.0]]


@given(st.floats(0.01, 1e4))
def test_epsilon_horizon(T):
    p = make_benchmark("rl_circuit").with_horizon(T)
    assert p.epsilon == 1.0 / T
    assert p.epsilon * p.horizon == pytest.approx(1.0, rel=1e-15)


def test_problem_validation(circuit):
    with pytest.raises(ValueError):
        BoundaryProblem(circuit.system, circuit.cost, [0.0, 1.0], [0.0], 1.0)
    with pytest.raises(ValueError):
        circuit.with_horizon(0.0)
    with pytest.raises(ValueError):
        eval_drift(circuit.system, [np.nan])
    with pytest.raises(ValueError):
        CostSpec(lambda x: 0.0, np.array([[0.0]]))
