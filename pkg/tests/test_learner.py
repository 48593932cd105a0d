import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from boundary_rl.config import default_config
from boundary_rl.critic import BACKWARD, BENCHMARK_BASES, FORWARD
from boundary_rl.learner import (LearnerConfig, LearnerState, NonConvergence, PEViolation,
                                 TrainingLog, WindowBuffer, compensated_regressor, delta_phi,
                                 filter_step, heldout_bellman_residual, implicit_weight_step,
                                 pe_metric, rho, train_regulator, weight_update_direction)
from boundary_rl.sim import RangeError

SQRT2 = math.sqrt(2.0)
X2 = BENCHMARK_BASES["rl_circuit"]
FREE_DECAY = (1 - math.exp(-2)) / 2


def free_decay_buffer(circuit, h=1e-3, duration=1.0):
    K = int(round(duration / h)) + 1
    buf = WindowBuffer(K, h, circuit.cost, X2)
    for k in range(K):
        buf.push(k * h, np.array([math.exp(-k * h)]), np.zeros(1))
    return buf


def test_delta_phi_examples(circuit):
    buf = free_decay_buffer(circuit)
    assert delta_phi(buf, X2, 1.0, 1.0)[0] == pytest.approx(math.exp(-2) - 1, abs=1e-9)
    assert delta_phi(buf, X2, 1.0, 0.0)[0] == 0.0
    const = WindowBuffer(11, 0.1, circuit.cost, X2)
    for k in range(11):
        const.push(0.1 * k, np.array([0.7]), np.zeros(1))
    assert delta_phi(const, X2, 1.0, 1.0)[0] == 0.0


def test_rho_examples(circuit):
    buf = free_decay_buffer(circuit)
    assert rho(buf, circuit.cost, 1.0, 1.0, FORWARD) == pytest.approx(FREE_DECAY, abs=1e-6)
    assert rho(buf, circuit.cost, 1.0, 1.0, BACKWARD) == pytest.approx(-FREE_DECAY, abs=1e-6)
    # the slow path (a different cost object) integrates the same samples
    other = replace(circuit.cost)
    assert rho(buf, other, 1.0, 1.0) == pytest.approx(rho(buf, circuit.cost, 1.0, 1.0), rel=1e-12)
    zero = WindowBuffer(3, 0.1, circuit.cost, X2)
    for k in range(3):
        zero.push(0.1 * k, np.zeros(1), np.zeros(1))
    assert rho(zero, circuit.cost, 0.2, 0.2) == 0.0


def test_window_before_full_raises(circuit):
    buf = WindowBuffer(101, 1e-3, circuit.cost, X2)
    buf.push(0.0, np.ones(1), np.zeros(1))
    buf.push(1e-3, np.ones(1), np.zeros(1))
    with pytest.raises(RangeError):
        delta_phi(buf, X2, 1e-3, 0.1)
    with pytest.raises(RangeError):
        rho(buf, circuit.cost, 1e-3, 0.1)


def test_compensation_removes_noise_term(circuit):
    # data from xdot = -x + u + e with u = -k x; the compensated regressor must
    # match the one from noise-free data integrating the same policy part
    from boundary_rl.sim import simulate
    k, h = SQRT2 - 1, 1e-3
    e = lambda t: np.array([2 * math.sin(t)])
    tr = simulate(circuit.system, lambda x: -k * x, [0.5], 1.0, noise=e)
    buf = WindowBuffer(len(tr), h, circuit.cost, X2)
    for t, x in zip(tr.times, tr.states):
        buf.push(t, x, -k * x, 2 * x * e(t))
    d = compensated_regressor(buf, 1.0, 1.0)
    # d/dt x^2 along the noiseless closed-loop field
    expected = np.trapezoid(2 * tr.states[:, 0] * (-(1 + k) * tr.states[:, 0]), tr.times)
    assert d[0] == pytest.approx(expected, abs=1e-6)


def test_filter_step_examples():
    s = LearnerState(np.eye(2) * 3.0, np.zeros(2), np.zeros(2))
    ell, h = 2.0, 0.01
    out = filter_step(s, np.zeros(2), 0.0, ell, h)
    assert np.linalg.norm(out.xi) == pytest.approx(math.exp(-ell * h) * np.linalg.norm(s.xi), rel=1e-14)
    assert not np.any(out.psi)
    d = np.array([1.0, -2.0])
    s = LearnerState.initial(2, np.zeros(2))
    for _ in range(100):
        s = filter_step(s, d, 0.0, ell, h)
    np.testing.assert_allclose(s.xi, (1 - math.exp(-ell)) / ell * np.outer(d, d), rtol=1e-12)
    assert not np.any(s.psi)


@given(arrays(float, (20, 3), elements=st.floats(-10, 10)),
       arrays(float, 20, elements=st.floats(-10, 10)))
def test_filter_keeps_xi_symmetric_psd(D, r):
    s = LearnerState.initial(3, np.zeros(3))
    for d, rv in zip(D, r):
        s = filter_step(s, d, rv, 0.5, 0.05)
        assert np.array_equal(s.xi, s.xi.T)
        assert pe_metric(s.xi) >= -1e-10 * max(1.0, np.abs(s.xi).max())


def test_weight_direction_examples():
    s = LearnerState(np.array([[2.0]]), np.array([-1.0]), np.array([0.0]))
    assert weight_update_direction(s, np.eye(1), 1e-6).tolist() == [2.0]
    assert weight_update_direction(s, 5.0, 1e-6).tolist() == [10.0]
    eq = LearnerState(np.array([[2.0]]), np.array([-1.0]), np.array([0.5]))
    assert weight_update_direction(eq, np.eye(1), 1e-6).tolist() == [0.0]


@given(arrays(float, (6, 3), elements=st.floats(-3, 3)), arrays(float, 3, elements=st.floats(-3, 3)),
       st.floats(1e-4, 1.0), st.floats(0.1, 1e4))
def test_implicit_step_solves_linear_system(D, w, h, gamma):
    xi = D.T @ D + 1e-3 * np.eye(3)
    psi = D.T @ np.arange(6.0)
    s = LearnerState(xi, psi, w)
    G = np.diag([gamma, 2 * gamma, 0.5 * gamma])
    w_new = implicit_weight_step(s, np.linalg.cholesky(G), 1e-6, h)
    a = h / max(np.linalg.norm(s.G), 1e-6)
    lhs = (np.eye(3) + a * G @ xi @ xi) @ w_new
    rhs = w - a * G @ xi @ psi
    assert np.allclose(lhs, rhs, rtol=1e-7, atol=1e-7 * max(1.0, np.abs(rhs).max()))


def test_pe_metric_examples():
    assert pe_metric(np.zeros((2, 2))) == 0.0
    assert pe_metric(np.eye(3)) == pytest.approx(1.0)
    assert pe_metric(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(window=0)
    with pytest.raises(ValueError):
        LearnerConfig(policy_mode="sometimes")
    with pytest.raises(ValueError):
        LearnerConfig(gamma=[[1.0, 2.0], [0.0, 1.0]])
    assert LearnerConfig(gamma=3.0).gamma_matrix(2).tolist() == [[3, 0], [0, 3]]


def circuit_setup(direction):
    cfg = default_config("rl_circuit")
    return (cfg.problem(), X2, cfg.learner_config(direction), cfg.phase_seeds()[f"train_{direction}"],
            cfg.integrator_config())


@pytest.fixture(scope="module")
def circuit_runs():
    out = {}
    for d in (FORWARD, BACKWARD):
        p, b, lc, seed, ic = circuit_setup(d)
        out[d] = train_regulator(p, b, lc, d, seed, ic)
    return out


def test_circuit_forward_weight(circuit_runs):
    w, log = circuit_runs[FORWARD]
    assert abs(w.w[0] - (SQRT2 - 1)) <= 0.05
    assert w.direction == FORWARD


def test_circuit_backward_weight(circuit_runs):
    w, log = circuit_runs[BACKWARD]
    assert abs(abs(w.w[0]) - (1 + SQRT2)) <= 0.1
    assert w.direction == BACKWARD


def test_training_log_contents(circuit_runs):
    for d, (w, log) in circuit_runs.items():
        assert log.rows and log.pe_time is not None and log.pe_time <= 5.0
        assert all(ok for _, _, ok in log.pe_trace)
        np.testing.assert_array_equal(log.weights()[-1], w.w)
        back = TrainingLog.from_csv(log.to_csv())
        assert back.to_csv() == log.to_csv()


def test_equilibrium_at_returned_weights():
    for d in (FORWARD, BACKWARD):
        p, b, lc, seed, ic = circuit_setup(d)
        w, log = train_regulator(p, b, lc, d, seed, ic)
        assert log.rows[-1][-2] <= 10 * lc.deadzone


def test_heldout_residual_circuit(circuit_runs):
    p, b, lc, _, ic = circuit_setup(FORWARD)
    for d, (w, _) in circuit_runs.items():
        assert heldout_bellman_residual(p, b, w, lc, 99, integrator=ic) <= 0.05


def test_training_is_deterministic():
    p, b, lc, seed, ic = circuit_setup(FORWARD)
    lc = replace(lc, max_iterations=2)
    a = train_regulator(p, b, lc, FORWARD, seed, ic, raise_on_nonconvergence=False)[1]
    c = train_regulator(p, b, lc, FORWARD, seed, ic, raise_on_nonconvergence=False)[1]
    assert a.to_csv() == c.to_csv()


def test_zero_noise_raises_pe_violation():
    p, b, lc, seed, ic = circuit_setup(FORWARD)
    with pytest.raises(PEViolation):
        train_regulator(p, b, replace(lc, noise_amplitude=0.0), FORWARD, seed, ic)


def test_nonconvergence_carries_log():
    p, b, lc, seed, ic = circuit_setup(FORWARD)
    with pytest.raises(NonConvergence) as info:
        train_regulator(p, b, replace(lc, max_iterations=1), FORWARD, seed, ic)
    assert info.value.log is not None and len(info.value.log.rows) == 1


def test_basis_dimension_mismatch(circuit):
    with pytest.raises(ValueError):
        train_regulator(circuit, BENCHMARK_BASES["manipulator"], LearnerConfig(), FORWARD)
