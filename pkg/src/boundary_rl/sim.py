"""Fixed-step RK4 closed-loop simulation in forward or reverse time."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import FULL, AffineDynamics, CostSpec, VisibilityError, as_vector

FORWARD = "forward"
REVERSE = "reverse"


class DivergenceError(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class RangeError(ValueError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 1e-3
    method: str = "rk4"
    max_state_norm: float = 1e3

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("integration step must be positive")
        if not self.max_state_norm > 0:
            raise ValueError("max_state_norm must be positive")
        if self.method != "rk4":
            raise ValueError(f"unsupported integration method {self.method!r}")


@dataclass
class Trajectory:
    times: np.ndarray          # (K,)
    states: np.ndarray         # (K, n)
    controls: np.ndarray       # (K, m)
    cost_integral: np.ndarray  # (K,)

    def __len__(self):
        return len(self.times)

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def total_cost(self) -> float:
        return float(self.cost_integral[-1])

    def to_csv(self, path=None) -> str:
        n, m = self.states.shape[1], self.controls.shape[1]
        header = (["t"] + [f"x{i + 1}" for i in range(n)]
                  + [f"u{i + 1}" for i in range(m)] + ["J"])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for k in range(len(self.times)):
            row = [self.times[k], *self.states[k], *self.controls[k], self.cost_integral[k]]
            w.writerow([f"{v:.12g}" for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "Trajectory":
        """Parse CSV text, or a path if ``source`` names an existing file."""
        if "\n" not in str(source):
            with open(source) as fh:
                source = fh.read()
        rows = list(csv.reader(io.StringIO(source)))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        n = sum(h.startswith("x") for h in header)
        m = sum(h.startswith("u") for h in header)
        if header[0] != "t" or header[-1] != "J" or 1 + n + m + 1 != len(header):
            raise ValueError(f"not a trajectory CSV header: {header}")
        return cls(body[:, 0], body[:, 1:1 + n], body[:, 1 + n:1 + n + m], body[:, -1])


def closed_loop_field(sys: AffineDynamics, policy, direction=FORWARD, noise=None):
    """Return F(t, x) for ``xdot = +/-(f + g (policy(x) + noise(t)))``."""
    if sys.visibility != FULL:
        raise VisibilityError("simulation needs the full plant")
    if direction not in (FORWARD, REVERSE):
        raise ValueError(f"direction must be {FORWARD!r} or {REVERSE!r}")
    sign = 1.0 if direction == FORWARD else -1.0
    f, g = sys.drift, sys.input_map

    def field(t, x):
        u = policy(x)
        if noise is not None:
            u = u + noise(t)
        return sign * (f(x) + g(x) @ u)

    return field


def rk4_advance(field, t, x, h):
    k1 = field(t, x)
    k2 = field(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = field(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = field(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(sys: AffineDynamics, policy, x, h: float, direction=FORWARD, *,
             t: float = 0.0, noise=None, max_state_norm: float = np.inf) -> np.ndarray:
    x = as_vector(x, sys.n)
    x_next = rk4_advance(closed_loop_field(sys, policy, direction, noise), t, x, h)
    if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > max_state_norm:
        raise DivergenceError(f"state left the ball of radius {max_state_norm} at t={t + h:g}")
    return x_next


def sample_count(duration: float, h: float) -> int:
    return int(np.floor(duration / h + 1e-9)) + 1


def simulate(sys: AffineDynamics, policy, x_init, duration: float,
             cfg: Optional[IntegratorConfig] = None, direction=FORWARD,
             noise: Optional[Callable] = None, cost: Optional[CostSpec] = None,
             t0: float = 0.0) -> Trajectory:
    """Integrate the closed loop from ``x_init`` for ``duration`` seconds.

    Stored controls include the exploration noise; the running cost is charged
    on the noiseless policy output. For ``direction="reverse"`` the time axis is
    reverse time ``s``.
    """
    cfg = cfg or IntegratorConfig()
    if not duration > 0:
        raise ValueError("duration must be positive")
    h = cfg.step
    K = sample_count(duration, h)
    field = closed_loop_field(sys, policy, direction, noise)
    x = as_vector(x_init, sys.n)
    times = t0 + h * np.arange(K)
    states = np.empty((K, sys.n))
    controls = np.empty((K, sys.m))
    J = np.zeros(K)

    def record(k, x):
        u = np.asarray(policy(x), dtype=float).reshape(sys.m)
        states[k] = x
        controls[k] = u + (noise(times[k]) if noise is not None else 0.0)
        if cost is None:
            return 0.0
        return cost.state_cost(x) + u @ cost.control_weight @ u

    prev = record(0, x)
    for k in range(1, K):
        x = rk4_advance(field, times[k - 1], x, h)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > cfg.max_state_norm:
            partial = Trajectory(times[:k], states[:k], controls[:k], J[:k])
            raise DivergenceError(
                f"state left the ball of radius {cfg.max_state_norm} at t={times[k]:g}",
                partial=partial)
        cur = record(k, x)
        J[k] = J[k - 1] + 0.5 * h * (prev + cur)
        prev = cur
    return Trajectory(times, states, controls, J)


def window_cost(traj: Trajectory, t_lo: float, t_hi: float) -> float:
    tol = 1e-9 * max(1.0, abs(traj.times[-1]))
    if t_lo > t_hi or t_lo < traj.times[0] - tol or t_hi > traj.times[-1] + tol:
        raise RangeError(f"window [{t_lo}, {t_hi}] outside "
                         f"[{traj.times[0]}, {traj.times[-1]}]")
    lo, hi = np.interp([t_lo, t_hi], traj.times, traj.cost_integral)
    return float(hi - lo)
