import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from boundary_rl.composer import (ADDITIVE, OVERLAY, CompositeController, GridMismatch,
                                  RegulatorPolicy, compose, compose_additive, compose_overlay,
                                  interior_quietness, near_optimality_gap, reflect,
                                  regulator_trajectories, scale_time, sweep, sweep_from_csv,
                                  sweep_to_csv, terminal_error)
from boundary_rl.critic import BACKWARD, FORWARD
from boundary_rl.dynamics import make_benchmark
from boundary_rl.oracle import linear_tpbvp
from boundary_rl.sim import IntegratorConfig, Trajectory, simulate

SQRT2 = math.sqrt(2.0)


@pytest.fixture(scope="module")
def pair():
    p = make_benchmark("rl_circuit")
    return (p, RegulatorPolicy.from_quadratic(p, [[SQRT2 - 1]], FORWARD),
            RegulatorPolicy.from_quadratic(p, [[1 + SQRT2]], BACKWARD))


def closed_form(p, T):
    return linear_tpbvp([[-1.0]], [[1.0]], [[1.0]], [[1.0]], p.x0, p.xT, T)


@given(st.floats(0, 100), st.floats(0.01, 100))
def test_scale_time(t, T):
    tau, eps = scale_time(t, T)
    assert tau == t / T and eps == 1 / T


def test_scale_time_examples():
    assert scale_time(5, 10) == (0.5, 0.1)
    assert scale_time(0, 4) == (0.0, 0.25)
    assert scale_time(4, 4) == (1.0, 0.25)


def test_controller_validation(pair):
    p, f, b = pair
    with pytest.raises(ValueError):
        CompositeController(b, f, 10.0)
    with pytest.raises(ValueError):
        CompositeController(f, b, 0.0)
    with pytest.raises(ValueError):
        CompositeController(f, b, 10.0, "sum")


def test_overlay_with_zero_backward_equals_forward(pair):
    p, f, _ = pair
    fwd = simulate(p.system, f, p.x0, 5.0, cost=p.cost)
    zero = Trajectory(fwd.times.copy(), np.zeros_like(fwd.states), np.zeros_like(fwd.controls),
                      np.zeros(len(fwd)))
    out = compose_overlay(fwd, zero, 5.0, p.cost)
    np.testing.assert_array_equal(out.states, fwd.states)
    assert out.total_cost == pytest.approx(fwd.total_cost, rel=1e-12)


def test_overlay_grid_checks(pair):
    p, f, _ = pair
    a = simulate(p.system, f, p.x0, 1.0)
    b = simulate(p.system, f, p.x0, 1.0, IntegratorConfig(2e-3))
    with pytest.raises(GridMismatch):
        compose_overlay(a, b, 1.0)
    with pytest.raises(GridMismatch):
        compose_overlay(a, a, 2.0)


def test_reflect_maps_endpoints(pair):
    p, _, b = pair
    tr = simulate(p.system, b, p.xT, 3.0, direction="reverse", cost=p.cost)
    r = reflect(tr, 3.0)
    assert r.times[0] == pytest.approx(0.0) and r.times[-1] == pytest.approx(3.0)
    np.testing.assert_array_equal(r.final_state, p.xT)
    assert r.total_cost == pytest.approx(tr.total_cost)
    assert np.all(np.diff(r.cost_integral) >= 0)


def test_overlay_tracks_exact_optimum(pair):
    p, f, b = pair
    T = 20.0
    traj = compose(CompositeController(f, b, T), p.with_horizon(T))
    x_exact = closed_form(p, T)[2]
    interior = (traj.times > 0.0) & (traj.times < T)
    dev = max(abs(traj.states[k, 0] - x_exact(t)[0])
              for k, t in enumerate(traj.times) if interior[k])
    assert dev <= 0.02


def test_regulators_quiet_in_middle_third(pair):
    p, f, b = pair
    fwd, bwd = regulator_trajectories(CompositeController(f, b, 20.0), p.with_horizon(20.0))
    mid = (fwd.times >= 20 / 3) & (fwd.times <= 40 / 3)
    assert np.max(np.abs(fwd.states[mid])) <= 1e-4
    assert np.max(np.abs(bwd.states[mid])) <= 1e-4
    # both layers decay as exp(-sqrt2 s) from their boundary value
    fwd, bwd = regulator_trajectories(CompositeController(f, b, 10.0), p.with_horizon(10.0))
    np.testing.assert_allclose(fwd.states[:, 0], 0.5 * np.exp(-SQRT2 * fwd.times), rtol=1e-9)
    np.testing.assert_allclose(bwd.states[:, 0], 0.9 * np.exp(-SQRT2 * (10 - bwd.times)),
                               rtol=1e-9)


def test_additive_examples(pair):
    p, f, b = pair
    T = 20.0
    add = compose_additive(CompositeController(f, b, T, ADDITIVE), p.with_horizon(T))
    assert terminal_error(add, p.xT) <= 0.05
    short = compose_additive(CompositeController(f, b, 2.0, ADDITIVE), p.with_horizon(2.0))
    assert terminal_error(short, p.xT) > terminal_error(add, p.xT)
    zero = make_benchmark("rl_circuit", {"x0": [0.0], "xT": [0.0]})
    z = compose_additive(CompositeController(f, b, 5.0, ADDITIVE), zero.with_horizon(5.0))
    assert not np.any(z.states) and z.total_cost == 0.0


def test_additive_and_overlay_agree(pair):
    p, f, b = pair
    T = 20.0
    ov = compose(CompositeController(f, b, T, OVERLAY), p.with_horizon(T))
    ad = compose(CompositeController(f, b, T, ADDITIVE), p.with_horizon(T))
    assert np.max(np.abs(ov.states - ad.states)) <= 0.02


def test_gap_examples(pair):
    p, f, b = pair
    zero = make_benchmark("rl_circuit", {"x0": [0.0], "xT": [0.0]})
    assert near_optimality_gap(zero, f.value(zero.x0), -b.value(zero.xT), 0.0) == 0.0
    gaps = []
    for eps in (0.5, 0.2, 0.1, 0.05):
        J = closed_form(p, 1 / eps)[0]
        gaps.append(near_optimality_gap(p, f.value(p.x0), -b.value(p.xT), J))
    assert all(a > c for a, c in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 0.02 * closed_form(p, 20.0)[0]


def test_sweep_rows_and_csv(pair, tmp_path):
    p, f, b = pair
    rows, trajs = sweep(p, f, b, [0.5, 0.1, 0.05], lambda T: closed_form(p, T)[0])
    assert [r.T for r in rows] == [2.0, 10.0, 20.0]
    assert all(len(t) == int(round(r.T / 1e-3)) + 1 for r, t in zip(rows, trajs))
    gaps = [r.gap for r in rows]
    assert gaps[0] > gaps[1] > gaps[2]
    quiet = [r.quietness for r in rows]
    assert quiet[0] > quiet[1] > quiet[2]
    text = sweep_to_csv(rows, tmp_path / "s.csv")
    back = sweep_from_csv(str(tmp_path / "s.csv"))
    assert sweep_to_csv(back) == text
    with pytest.raises(ValueError):
        sweep(p, f, b, [], lambda T: 0.0)
    with pytest.raises(ValueError):
        sweep(p, f, b, [1.5], lambda T: 0.0)


def test_interior_quietness_window():
    t = np.linspace(0, 10, 11)
    x = np.where((t >= 3) & (t <= 7), 0.1, 5.0)[:, None]
    tr = Trajectory(t, x, np.zeros((11, 1)), np.zeros(11))
    assert interior_quietness(tr, 10.0) == pytest.approx(0.1)
