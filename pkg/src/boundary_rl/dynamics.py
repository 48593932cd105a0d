"""Control-affine plants, quadratic-type costs and the three benchmark problems.

A plant is ``xdot = f(x) + g(x) u``. The drift ``f`` is what the learner is not
allowed to see: :meth:`AffineDynamics.learner_view` strips it, and any attempt
to evaluate it afterwards raises :class:`VisibilityError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

FULL = "full"
G_ONLY = "g_only"


class VisibilityError(RuntimeError):
    """Raised when code holding a g-only view asks for the drift."""


class UnknownBenchmark(ValueError):
    pass


def as_vector(x, n: int, what: str = "state") -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise ValueError(f"{what} has length {v.shape[0]}, expected {n}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what} has non-finite entries: {v}")
    return v


@dataclass(frozen=True)
class AffineDynamics:
    n: int
    m: int
    drift: Optional[Callable[[np.ndarray], np.ndarray]]
    input_map: Callable[[np.ndarray], np.ndarray]
    visibility: str = FULL
    name: str = ""

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("state and input dimensions must be positive")
        if self.visibility not in (FULL, G_ONLY):
            raise ValueError(f"unknown visibility {self.visibility!r}")
        if self.visibility == FULL and self.drift is None:
            raise ValueError("a full view needs a drift function")

    def learner_view(self) -> "AffineDynamics":
        return replace(self, drift=None, visibility=G_ONLY)


def eval_drift(sys: AffineDynamics, x) -> np.ndarray:
    if sys.visibility != FULL:
        raise VisibilityError(
            f"drift of {sys.name or 'system'} is hidden from g-only views")
    return np.asarray(sys.drift(as_vector(x, sys.n)), dtype=float).reshape(sys.n)


def eval_input_map(sys: AffineDynamics, x) -> np.ndarray:
    g = np.asarray(sys.input_map(as_vector(x, sys.n)), dtype=float)
    return g.reshape(sys.n, sys.m)


@dataclass(frozen=True)
class CostSpec:
    """Running cost ``S(x) + u' R u``.

    ``state_cost_grad`` is only needed by the shooting oracle.
    """

    state_cost: Callable[[np.ndarray], float]
    control_weight: np.ndarray
    state_cost_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    state_weight: Optional[np.ndarray] = None  # Q, when S(x) = x'Qx
    R_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.control_weight, dtype=float))
        if R.shape[0] != R.shape[1]:
            raise ValueError("control weight must be square")
        if np.max(np.abs(R - R.T)) > 1e-12:
            raise ValueError("control weight must be symmetric")
        if np.min(np.linalg.eigvalsh(R)) <= 0:
            raise ValueError("control weight must be positive definite")
        object.__setattr__(self, "control_weight", R)
        object.__setattr__(self, "R_inv", np.linalg.inv(R))


def quadratic_cost(Q, R) -> CostSpec:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if np.max(np.abs(Q - Q.T)) > 1e-12:
        raise ValueError("state weight must be symmetric")
    return CostSpec(state_cost=lambda x: float(x @ Q @ x),
                    control_weight=R,
                    state_cost_grad=lambda x: 2.0 * Q @ x,
                    state_weight=Q)


def running_cost(cost: CostSpec, x, u) -> float:
    u = np.asarray(u, dtype=float).reshape(-1)
    return float(cost.state_cost(np.asarray(x, dtype=float).reshape(-1))
                 + u @ cost.control_weight @ u)


@dataclass(frozen=True)
class BoundaryProblem:
    system: AffineDynamics
    cost: CostSpec
    x0: np.ndarray
    xT: np.ndarray
    horizon: float
    domain: tuple = None  # (low, high) training box
    name: str = ""

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "x0", as_vector(self.x0, self.system.n, "x0"))
        object.__setattr__(self, "xT", as_vector(self.xT, self.system.n, "xT"))
        if self.domain is not None:
            lo, hi = (as_vector(b, self.system.n, "domain bound") for b in self.domain)
            if np.any(lo >= hi):
                raise ValueError("empty training domain")
            object.__setattr__(self, "domain", (lo, hi))

    @property
    def epsilon(self) -> float:
        return 1.0 / self.horizon

    def with_horizon(self, horizon: float) -> "BoundaryProblem":
        return replace(self, horizon=float(horizon))


# Benchmarks. Drift functions index rows so they also work column-wise on
# (n, k) arrays; the shooting oracle relies on this for batched sensitivities.

BENCHMARKS = ("rl_circuit", "cubic", "manipulator")

_DEFAULTS = {
    "rl_circuit": dict(r=1.0, l=1.0, R=1.0, x0=[0.5], xT=[0.9], horizon=20.0,
                       domain=([-1.5], [1.5])),
    "cubic": dict(R=1.0, x0=[1.0], xT=[1.5], horizon=10.0, domain=([-2.0], [2.0])),
    "manipulator": dict(Q=[[10.0, 1.0], [1.0, 10.0]], R=1.0, damping=2.0,
                        stiffness=10.0, x0=[0.3, 0.0], xT=[0.1, 0.0],
                        horizon=20.0, domain=([-0.5, -0.5], [0.5, 0.5])),
}


def benchmark_defaults(name: str) -> dict:
    if name not in _DEFAULTS:
        raise UnknownBenchmark(f"unknown benchmark {name!r}; choose from {BENCHMARKS}")
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in _DEFAULTS[name].items()}


def make_benchmark(name: str, params: Optional[dict] = None) -> BoundaryProblem:
    p = benchmark_defaults(name)
    for key, val in (params or {}).items():
        if key not in p:
            raise ValueError(f"benchmark {name!r} has no parameter {key!r}")
        p[key] = val
    R = np.atleast_2d(np.asarray(p["R"], dtype=float))

    if name == "rl_circuit":
        r, l = float(p["r"]), float(p["l"])
        if l <= 0:
            raise ValueError("inductance must be positive")
        G = np.array([[1.0 / l]])
        sys = AffineDynamics(1, 1, drift=lambda x: -(r / l) * x,
                             input_map=lambda x: G, name=name)
        cost = quadratic_cost(np.eye(1), R)
    elif name == "cubic":
        G = np.array([[1.0]])
        sys = AffineDynamics(1, 1, drift=lambda x: x ** 3,
                             input_map=lambda x: G, name=name)
        cost = quadratic_cost(np.eye(1), R)
    else:
        c, k = float(p["damping"]), float(p["stiffness"])
        G = np.array([[0.0], [1.0]])
        sys = AffineDynamics(
            2, 1,
            drift=lambda x: np.stack([x[1], -c * x[1] - k * np.sin(x[0])]),
            input_map=lambda x: G, name=name)
        cost = quadratic_cost(p["Q"], R)

    return BoundaryProblem(system=sys, cost=cost, x0=p["x0"], xT=p["xT"],
                           horizon=float(p["horizon"]), domain=tuple(p["domain"]),
                           name=name)
