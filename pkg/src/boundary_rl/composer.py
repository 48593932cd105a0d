"""Finite-horizon boundary controllers built from a forward and a backward regulator.

Overlay mode runs the forward regulator from ``x0`` in forward time, the
backward one from ``xT`` in reverse time, reflects the latter onto ``[0, T]``
and adds the two. Additive mode closes a single loop on the plant (see
:func:`compose_additive`).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .critic import BACKWARD, FORWARD, BasisSet, CriticWeights, eval_value, policy_from_weights
from .dynamics import BoundaryProblem, CostSpec
from .sim import (FORWARD as SIM_FORWARD, REVERSE, DivergenceError, IntegratorConfig,
                  Trajectory, rk4_advance, sample_count, simulate)

OVERLAY = "overlay"
ADDITIVE = "additive"


class GridMismatch(ValueError):
    pass


def scale_time(t: float, horizon: float):
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    return t / horizon, 1.0 / horizon


@dataclass(frozen=True)
class RegulatorPolicy:
    """State feedback with a direction tag and, optionally, its value function."""

    direction: str
    law: Callable
    value: Optional[Callable] = None
    label: str = ""

    def __post_init__(self):
        if self.direction not in (FORWARD, BACKWARD):
            raise ValueError(f"bad direction {self.direction!r}")

    def __call__(self, x):
        return self.law(x)

    @classmethod
    def from_critic(cls, problem: BoundaryProblem, basis: BasisSet, w: CriticWeights,
                    label="learned"):
        view = problem.system.learner_view()
        law = policy_from_weights(view.input_map, problem.cost, basis, w)
        return cls(w.direction, law, lambda x: eval_value(basis, w, x), label)

    @classmethod
    def from_quadratic(cls, problem: BoundaryProblem, P, direction, label="riccati"):
        """u = sign R^-1 g' P x for V = x'Px (forward sign -1, backward +1)."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        sgn = -1.0 if direction == FORWARD else 1.0
        R_inv, g = problem.cost.R_inv, problem.system.input_map
        return cls(direction, lambda x: sgn * R_inv @ (g(x).T @ (P @ x)),
                   lambda x: float(x @ P @ x), label)


@dataclass(frozen=True)
class CompositeController:
    forward_policy: RegulatorPolicy
    backward_policy: RegulatorPolicy
    horizon: float
    mode: str = OVERLAY

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.mode not in (OVERLAY, ADDITIVE):
            raise ValueError(f"mode must be {OVERLAY!r} or {ADDITIVE!r}")
        if self.forward_policy.direction != FORWARD or self.backward_policy.direction != BACKWARD:
            raise ValueError("need one forward and one backward policy")


def reflect(traj: Trajectory, horizon: float) -> Trajectory:
    """Map a reverse-time trajectory on s in [0, T] onto forward time t = T - s."""
    times = horizon - traj.times[::-1]
    J = traj.cost_integral[-1] - traj.cost_integral[::-1]
    return Trajectory(times, traj.states[::-1].copy(), traj.controls[::-1].copy(), J)


def regulator_trajectories(ctrl: CompositeController, problem: BoundaryProblem,
                           cfg: Optional[IntegratorConfig] = None):
    """Forward run from x0 and reflected reverse-time run from xT, both on [0, T]."""
    cfg = cfg or IntegratorConfig()
    T, sys, cost = ctrl.horizon, problem.system, problem.cost
    fwd = simulate(sys, ctrl.forward_policy, problem.x0, T, cfg, SIM_FORWARD, cost=cost)
    bwd = simulate(sys, ctrl.backward_policy, problem.xT, T, cfg, REVERSE, cost=cost)
    return fwd, reflect(bwd, T)


def _trapezoid_cost(cost: CostSpec, states, controls, h):
    r = np.array([cost.state_cost(x) + u @ cost.control_weight @ u
                  for x, u in zip(states, controls)])
    J = np.zeros(len(r))
    if len(r) > 1:
        J[1:] = np.cumsum(0.5 * h * (r[1:] + r[:-1]))
    return J


def compose_overlay(forward_traj: Trajectory, backward_traj: Trajectory, horizon: float,
                    cost: Optional[CostSpec] = None) -> Trajectory:
    """Pointwise sum of the forward run and the reflected backward run.

    ``backward_traj`` must already be on forward time (see :func:`reflect`).
    The cost column is recomputed on the summed states and controls when
    ``cost`` is given, and left at zero otherwise.
    """
    if len(forward_traj) != len(backward_traj):
        raise GridMismatch(f"{len(forward_traj)} vs {len(backward_traj)} samples")
    if abs(forward_traj.step - backward_traj.step) > 1e-12:
        raise GridMismatch(f"steps {forward_traj.step} and {backward_traj.step} differ")
    if np.max(np.abs(forward_traj.times - backward_traj.times)) > 1e-9 * max(1.0, horizon):
        raise GridMismatch("time grids differ")
    if abs(forward_traj.times[-1] - forward_traj.times[0] - horizon) > forward_traj.step:
        raise GridMismatch(f"trajectories do not span the horizon {horizon}")
    states = forward_traj.states + backward_traj.states
    controls = forward_traj.controls + backward_traj.controls
    J = (np.zeros(len(states)) if cost is None
         else _trapezoid_cost(cost, states, controls, forward_traj.step))
    return Trajectory(forward_traj.times.copy(), states, controls, J)


def compose_additive(ctrl: CompositeController, problem: BoundaryProblem,
                     cfg: Optional[IntegratorConfig] = None) -> Trajectory:
    """One closed loop on the plant: u(t, x) = u+(x - x-(t)) + u-(x-(t)).

    ``x-(t)`` is the reflected reverse-time run of the backward regulator from
    ``xT``; it is generated at half the step so RK4 stages need no
    interpolation. For linear plants the deviation ``x - x-`` then obeys the
    forward closed loop exactly. Experimental: for nonlinear plants this is an
    approximation.
    """
    cfg = cfg or IntegratorConfig()
    h, T = cfg.step, ctrl.horizon
    sys, cost = problem.system, problem.cost
    fine = simulate(sys, ctrl.backward_policy, problem.xT, T,
                    IntegratorConfig(h / 2, cfg.method, cfg.max_state_norm), REVERSE)
    xb = fine.states[::-1]          # index j <-> t = j h / 2
    ub = np.array([ctrl.backward_policy(x) for x in xb])
    K = sample_count(T, h)
    if 2 * (K - 1) >= len(xb):
        raise GridMismatch("backward reference shorter than the horizon")
    f, g, up = sys.drift, sys.input_map, ctrl.forward_policy

    def control(j, x):
        return up(x - xb[j]) + ub[j]

    def field(t, x):
        j = int(round(2 * t / h))
        return f(x) + g(x) @ control(j, x)

    times = h * np.arange(K)
    states = np.empty((K, sys.n))
    controls = np.empty((K, sys.m))
    x = problem.x0.copy()
    for k in range(K):
        if k:
            x = rk4_advance(field, times[k - 1], x, h)
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > cfg.max_state_norm:
                raise DivergenceError(f"additive composite diverged at t={times[k]:g}")
        states[k] = x
        controls[k] = control(2 * k, x)
    return Trajectory(times, states, controls, _trapezoid_cost(cost, states, controls, h))


def compose(ctrl: CompositeController, problem: BoundaryProblem,
            cfg: Optional[IntegratorConfig] = None) -> Trajectory:
    if ctrl.mode == ADDITIVE:
        return compose_additive(ctrl, problem, cfg)
    fwd, bwd = regulator_trajectories(ctrl, problem, cfg)
    return compose_overlay(fwd, bwd, ctrl.horizon, problem.cost)


def near_optimality_gap(problem: BoundaryProblem, v_fwd: float, v_bwd: float,
                        oracle_cost: float) -> float:
    """|V+(x0) - V-(xT) - J*(T)|.

    ``v_bwd`` carries the sign of the value of the terminal layer as seen from
    forward time, i.e. minus the (positive) critic value of the backward
    regulator at ``xT``.
    """
    return abs(v_fwd - v_bwd - oracle_cost)


def interior_quietness(traj: Trajectory, horizon: float, lo: float = 0.3, hi: float = 0.7) -> float:
    """max |x(t)| over t in [lo T, hi T]."""
    t0 = traj.times[0]
    mask = (traj.times - t0 >= lo * horizon - 1e-12) & (traj.times - t0 <= hi * horizon + 1e-12)
    if not mask.any():
        raise ValueError("no samples in the interior window")
    return float(np.max(np.linalg.norm(traj.states[mask], axis=1)))


def terminal_error(traj: Trajectory, xT) -> float:
    return float(np.linalg.norm(traj.final_state - np.asarray(xT, dtype=float)))


SWEEP_HEADER = ["epsilon", "T", "terminal_error", "J_learned", "J_oracle", "gap"]


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    T: float
    terminal_error: float
    J_learned: float
    J_oracle: float
    gap: float
    quietness: float = float("nan")


def sweep(problem: BoundaryProblem, forward_policy: RegulatorPolicy,
          backward_policy: RegulatorPolicy, epsilons: Sequence[float],
          oracle_cost: Callable[[float], float], cfg: Optional[IntegratorConfig] = None,
          mode: str = OVERLAY):
    """Compose at each horizon T = 1/eps. Returns (rows, trajectories)."""
    if len(epsilons) == 0:
        raise ValueError("empty epsilon list")
    if any(not 0 < e <= 1 for e in epsilons):
        raise ValueError("epsilon values must lie in (0, 1]")
    if forward_policy.value is None or backward_policy.value is None:
        raise ValueError("sweep needs policies that carry their value functions")
    rows, trajs = [], []
    v_fwd = forward_policy.value(problem.x0)
    v_bwd = -backward_policy.value(problem.xT)
    for eps in epsilons:
        T = 1.0 / eps
        ctrl = CompositeController(forward_policy, backward_policy, T, mode)
        traj = compose(ctrl, problem.with_horizon(T), cfg)
        J_star = float(oracle_cost(T))
        rows.append(SweepRow(eps, T, terminal_error(traj, problem.xT), traj.total_cost,
                             J_star, near_optimality_gap(problem, v_fwd, v_bwd, J_star),
                             interior_quietness(traj, T)))
        trajs.append(traj)
    return rows, trajs


def sweep_to_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([f"{getattr(r, k):.12g}" for k in SWEEP_HEADER])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def sweep_from_csv(source):
    if "\n" not in str(source):
        with open(source) as fh:
            source = fh.read()
    rows = list(csv.reader(io.StringIO(source)))
    if rows[0] != SWEEP_HEADER:
        raise ValueError(f"not a sweep header: {rows[0]}")
    return [SweepRow(*[float(v) for v in r]) for r in rows[1:]]
