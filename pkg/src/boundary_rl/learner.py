"""Filtered policy iteration for the forward and backward regulators.

The learner sees only ``g``. Data come from closed-loop episodes run by the
simulator (which knows ``f``). Each step:

* the state advances by one RK4 step of the closed loop plus exploration noise
  (reverse time for the backward regulator);
* a window of length ``T_w`` gives the regressor ``d`` and signed cost ``rho``;
* the filters ``xi, psi`` take one exact exponential-Euler step;
* the weights take one linearly implicit step of the sliding-mode law.

Weights inside the filters (``LearnerState.w``) live in the frame where the
Bellman identity reads ``rho + w'd = 0``. For the forward regulator that frame
equals the critic frame; for the backward one ``rho`` is negated, so the critic
weights are ``-w``.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .critic import (BACKWARD, FORWARD, BasisSet, CriticWeights, eval_basis,
                     eval_basis_gradient, policy_sign)
from .dynamics import BoundaryProblem, CostSpec
from .linalg import min_eigenvalue
from .sim import DivergenceError, IntegratorConfig, RangeError, rk4_advance

SYNCHRONOUS = "synchronous"
INTERVAL = "interval"


class PEViolation(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    def __init__(self, message, weights=None, log=None):
        super().__init__(message)
        self.weights = weights
        self.log = log


def frame_sign(direction: str) -> float:
    """Critic weights = frame_sign * filter-frame weights."""
    return 1.0 if direction == FORWARD else -1.0


def integration_sign(direction: str) -> float:
    return 1.0 if direction == FORWARD else -1.0


@dataclass
class LearnerConfig:
    window: float = 0.1
    ell: float = 1.0
    gamma: object = 10.0            # scalar (times I) or N x N SPD matrix
    deadzone: float = 1e-6
    pe_floor: float = 1e-3
    noise_amplitude: float = 2.0    # e(t) = A sin(omega t) on every input
    noise_frequency: float = 1.0
    reset_period: Optional[float] = None
    reset_low: Optional[list] = None   # defaults to the problem's training box
    reset_high: Optional[list] = None
    convergence_eps: float = 1e-3
    patience: int = 3
    max_iterations: int = 50
    iteration_period: float = 2.0
    policy_mode: str = SYNCHRONOUS
    pe_timeout: float = 5.0
    pe_check_period: float = 0.1
    init_low: object = 0.0
    init_high: object = 1.0
    init_weights: Optional[list] = None  # critic frame; overrides sampling

    def __post_init__(self):
        for name in ("window", "ell", "deadzone", "pe_floor", "convergence_eps",
                     "iteration_period", "pe_timeout", "pe_check_period"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_amplitude < 0 or self.noise_frequency < 0:
            raise ValueError("noise amplitude and frequency must be non-negative")
        if self.reset_period is not None and not self.reset_period > 0:
            raise ValueError("reset_period must be positive or None")
        if self.max_iterations < 1 or self.patience < 1:
            raise ValueError("max_iterations and patience must be >= 1")
        if self.policy_mode not in (SYNCHRONOUS, INTERVAL):
            raise ValueError(f"policy_mode must be {SYNCHRONOUS!r} or {INTERVAL!r}")
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 0:
            if not g > 0:
                raise ValueError("gamma must be positive")
        else:
            if g.ndim != 2 or g.shape[0] != g.shape[1]:
                raise ValueError("gamma must be a scalar or a square matrix")
            if np.max(np.abs(g - g.T)) > 1e-12 or np.min(np.linalg.eigvalsh(g)) <= 0:
                raise ValueError("gamma must be symmetric positive definite")

    def gamma_matrix(self, N: int) -> np.ndarray:
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 0:
            return float(g) * np.eye(N)
        if g.shape != (N, N):
            raise ValueError(f"gamma is {g.shape}, basis has {N} terms")
        return g

    def noise(self, m: int):
        A, om = float(self.noise_amplitude), float(self.noise_frequency)
        ones = np.ones(m)
        return lambda t: A * math.sin(om * t) * ones


class WindowBuffer:
    """Rolling store of the last ``capacity`` samples of one episode.

    Besides states and controls it keeps two running trapezoidal integrals: the
    running cost of the noiseless control, and ``int grad_phi(x) g(x) e dt``
    (the part of ``d phi/dt`` caused by exploration noise).
    """

    def __init__(self, capacity: int, step: float, cost: CostSpec, basis: BasisSet):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity, self.step, self.cost, self.basis = capacity, step, cost, basis
        self.times = deque(maxlen=capacity)
        self.states = deque(maxlen=capacity)
        self.controls = deque(maxlen=capacity)
        self.phis = deque(maxlen=capacity)
        self.cum_cost = deque(maxlen=capacity)
        self.cum_comp = deque(maxlen=capacity)
        self._last = None  # (running cost, compensation integrand)

    def __len__(self):
        return len(self.times)

    @property
    def full(self) -> bool:
        return len(self.times) == self.capacity

    def clear(self):
        for q in (self.times, self.states, self.controls, self.phis,
                  self.cum_cost, self.cum_comp):
            q.clear()
        self._last = None

    def push(self, t, x, u, comp_integrand=None):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        r = self.cost.state_cost(x) + u @ self.cost.control_weight @ u
        m = (np.zeros(self.basis.N) if comp_integrand is None
             else np.asarray(comp_integrand, dtype=float))
        if self._last is None:
            C, M = 0.0, np.zeros(self.basis.N)
        else:
            h = t - self.times[-1]
            C = self.cum_cost[-1] + 0.5 * h * (self._last[0] + r)
            M = self.cum_comp[-1] + 0.5 * h * (self._last[1] + m)
        self.times.append(float(t))
        self.states.append(x)
        self.controls.append(u)
        self.phis.append(eval_basis(self.basis, x))
        self.cum_cost.append(C)
        self.cum_comp.append(M)
        self._last = (r, m)

    def index(self, t: float) -> int:
        if not self.times:
            raise RangeError("empty window buffer")
        k = int(round((t - self.times[0]) / self.step))
        if k < 0 or k >= len(self.times) or abs(self.times[k] - t) > 1e-6 * self.step:
            raise RangeError(f"time {t:g} not covered by buffer "
                             f"[{self.times[0]:g}, {self.times[-1]:g}]")
        return k

    def span(self, t: float, window: float):
        if window < 0:
            raise ValueError("window must be non-negative")
        return self.index(t - window), self.index(t)


def delta_phi(buffer: WindowBuffer, basis: BasisSet, t: float, window: float) -> np.ndarray:
    """phi(x(t)) - phi(x(t - window))."""
    lo, hi = buffer.span(t, window)
    if basis is buffer.basis:
        return buffer.phis[hi] - buffer.phis[lo]
    return eval_basis(basis, buffer.states[hi]) - eval_basis(basis, buffer.states[lo])


def rho(buffer: WindowBuffer, cost: CostSpec, t: float, window: float, direction=FORWARD) -> float:
    """Window cost, + for the forward regulator and - for the backward one."""
    lo, hi = buffer.span(t, window)
    if cost is buffer.cost:
        total = buffer.cum_cost[hi] - buffer.cum_cost[lo]
    else:
        r = [cost.state_cost(buffer.states[k])
             + buffer.controls[k] @ cost.control_weight @ buffer.controls[k]
             for k in range(lo, hi + 1)]
        total = float(np.trapezoid(r, dx=buffer.step)) if len(r) > 1 else 0.0
    return frame_sign(direction) * float(total)


def compensated_regressor(buffer: WindowBuffer, t: float, window: float, direction=FORWARD):
    """delta_phi with the exploration-noise contribution removed.

    Along the data, d phi/dt = grad_phi (f + g u) + grad_phi g e (times -1 in
    reverse time). Subtracting the noise term leaves a regressor for which the
    Bellman identity of the noiseless policy holds exactly.
    """
    lo, hi = buffer.span(t, window)
    dm = buffer.cum_comp[hi] - buffer.cum_comp[lo]
    return buffer.phis[hi] - buffer.phis[lo] - integration_sign(direction) * dm


@dataclass
class LearnerState:
    xi: np.ndarray
    psi: np.ndarray
    w: np.ndarray               # filter frame
    direction: str = FORWARD
    window_buffer: Optional[WindowBuffer] = field(default=None, repr=False)

    @classmethod
    def initial(cls, N: int, w0_critic, direction=FORWARD, buffer=None):
        w = frame_sign(direction) * np.asarray(w0_critic, dtype=float).reshape(N)
        return cls(np.zeros((N, N)), np.zeros(N), w, direction, buffer)

    @property
    def w_hat(self) -> CriticWeights:
        return CriticWeights(frame_sign(self.direction) * self.w, self.direction)

    @property
    def G(self) -> np.ndarray:
        return self.xi @ self.w + self.psi


def filter_step(state: LearnerState, dphi, rho_val: float, ell: float, h: float) -> LearnerState:
    """Exact step of xi' = -l xi + d d', psi' = -l psi + d rho for d, rho held over h."""
    if not h > 0:
        raise ValueError("step must be positive")
    d = np.asarray(dphi, dtype=float)
    a = math.exp(-ell * h)
    b = -math.expm1(-ell * h) / ell
    return replace(state, xi=a * state.xi + b * np.outer(d, d),
                   psi=a * state.psi + b * float(rho_val) * d)


def weight_update_direction(state: LearnerState, gamma, deadzone: float) -> np.ndarray:
    """Sliding-mode law -Gamma xi G / max(|G|, delta), with G = xi w + psi."""
    G = state.G
    gamma = np.asarray(gamma, dtype=float)
    step = state.xi @ G / max(np.linalg.norm(G), deadzone)
    return -(gamma * step if gamma.ndim == 0 else gamma @ step)


def implicit_weight_step(state: LearnerState, gamma_chol: np.ndarray, deadzone: float,
                         h: float) -> np.ndarray:
    """One linearly implicit step of the sliding-mode law.

    With a = h / max(|G|, delta) frozen, solves
    (I + a Gamma xi xi) w+ = w - a Gamma xi psi. The law is stiff once G is
    small (a up to h / delta), so an explicit step would blow up. Written in
    z = L^-1 w with Gamma = L L' the system becomes (I + a B'B) z+ = z - a B' psi
    with B = xi L, solved through the SVD of B.
    """
    G = state.G
    a = h / max(np.linalg.norm(G), deadzone)
    L = gamma_chol
    B = state.xi @ L
    U, s, Vt = np.linalg.svd(B)
    z = np.linalg.solve(L, state.w)
    zt = Vt @ z
    pt = U.T @ state.psi
    return L @ (Vt.T @ ((zt - a * s * pt) / (1.0 + a * s * s)))


def pe_metric(xi) -> float:
    """Smallest eigenvalue of the filtered regressor Gramian."""
    return min_eigenvalue(xi)


@dataclass
class TrainingLog:
    """One row per checkpoint. Weights are stored in the critic frame."""

    N: int
    rows: list = field(default_factory=list)
    pe_time: Optional[float] = None     # first time lambda_min(xi) >= pe_floor
    pe_trace: list = field(default_factory=list)  # (t, lambda_min, xi symmetric-PSD ok)

    def header(self):
        return (["iter", "t"] + [f"w_{k + 1}" for k in range(self.N)]
                + ["pe_metric", "g_norm", "bellman_residual"])

    def add(self, it, t, w, pe, g_norm, bellman):
        self.rows.append((int(it), float(t), *[float(v) for v in w],
                          float(pe), float(g_norm), float(bellman)))

    def weights(self) -> np.ndarray:
        return np.array([r[2:2 + self.N] for r in self.rows])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.header())
        for r in self.rows:
            wr.writerow([str(r[0])] + [f"{v:.12g}" for v in r[1:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "TrainingLog":
        if "\n" not in str(source):
            with open(source) as fh:
                source = fh.read()
        rows = list(csv.reader(io.StringIO(source)))
        N = sum(h.startswith("w_") for h in rows[0])
        log = cls(N)
        if rows[0] != log.header():
            raise ValueError(f"not a training-log header: {rows[0]}")
        for r in rows[1:]:
            log.rows.append((int(r[0]), *[float(v) for v in r[1:]]))
        return log


def initial_weights(cfg: LearnerConfig, N: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.init_weights is not None:
        w = np.asarray(cfg.init_weights, dtype=float).reshape(-1)
        if w.shape[0] != N:
            raise ValueError(f"init_weights has {w.shape[0]} entries, basis has {N}")
        return w
    lo = np.broadcast_to(np.asarray(cfg.init_low, dtype=float), (N,))
    hi = np.broadcast_to(np.asarray(cfg.init_high, dtype=float), (N,))
    return rng.uniform(lo, hi)


def _reset_box(problem: BoundaryProblem, cfg: LearnerConfig):
    n = problem.system.n
    if cfg.reset_low is not None and cfg.reset_high is not None:
        lo = np.broadcast_to(np.asarray(cfg.reset_low, dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(cfg.reset_high, dtype=float), (n,))
    elif problem.domain is not None:
        lo, hi = problem.domain
    else:
        raise ValueError("resets need a box: set reset_low/reset_high or a problem domain")
    return np.array(lo, dtype=float), np.array(hi, dtype=float)


def _steps(duration: float, h: float) -> int:
    return max(1, int(round(duration / h)))


def train_regulator(problem: BoundaryProblem, basis: BasisSet, cfg: LearnerConfig,
                    direction: str = FORWARD, rng_seed: int = 0,
                    integrator: Optional[IntegratorConfig] = None,
                    raise_on_nonconvergence: bool = True):
    """Learn one regulator from closed-loop data. Returns (CriticWeights, TrainingLog).

    The forward regulator starts from ``x0`` and runs in forward time; the
    backward one starts from ``xT`` and runs in reverse time, where its target
    policy is stabilizing.
    """
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"direction must be {FORWARD!r} or {BACKWARD!r}")
    integrator = integrator or IntegratorConfig()
    env = problem.system            # the simulator: knows f
    view = env.learner_view()       # what the learner gets: g only
    cost = problem.cost
    if basis.n != env.n:
        raise ValueError(f"basis is over {basis.n} states, system has {env.n}")
    N, h = basis.N, integrator.step

    init_ss, reset_ss = np.random.SeedSequence(rng_seed).spawn(2)
    init_rng, reset_rng = np.random.default_rng(init_ss), np.random.default_rng(reset_ss)

    w0 = initial_weights(cfg, N, init_rng)
    buffer = WindowBuffer(_steps(cfg.window, h) + 1, h, cost, basis)
    state = LearnerState.initial(N, w0, direction, buffer)
    L = np.linalg.cholesky(cfg.gamma_matrix(N))
    noise = cfg.noise(env.m)
    sgn_int = integration_sign(direction)
    fs = frame_sign(direction)
    gain = 0.5 * policy_sign(direction) * cost.R_inv
    g = view.input_map

    # policy weights in the critic frame, read by the closure below
    w_pol = [fs * state.w]

    def policy(x):
        return gain @ (g(x).T @ (eval_basis_gradient(basis, x).T @ w_pol[0]))

    def field_fn(t, x):
        return sgn_int * (env.drift(x) + g(x) @ (policy(x) + noise(t)))

    reset_lo, reset_hi = _reset_box(problem, cfg) if cfg.reset_period else (None, None)

    def observe(t, x):
        u = policy(x)
        m = eval_basis_gradient(basis, x) @ (g(x) @ noise(t))
        buffer.push(t, x, u, m)

    n_iter = _steps(cfg.iteration_period, h)
    n_pe = _steps(cfg.pe_check_period, h)
    n_reset = _steps(cfg.reset_period, h) if cfg.reset_period else None
    n_timeout = _steps(cfg.pe_timeout, h)
    total = n_iter * cfg.max_iterations

    log = TrainingLog(N)
    x = problem.x0.copy() if direction == FORWARD else problem.xT.copy()
    t = 0.0
    observe(t, x)
    pe = 0.0
    pe_ok = False
    below_since = 0
    prev_w = fs * state.w
    small = 0
    res_num = res_den = 0.0
    it = 0

    for k in range(1, total + 1):
        x = rk4_advance(field_fn, t, x, h)
        t = k * h
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > integrator.max_state_norm:
            raise DivergenceError(
                f"{direction} training left the ball of radius "
                f"{integrator.max_state_norm} at t={t:g} with w={fs * state.w}")

        if n_reset and k % n_reset == 0:
            x = reset_rng.uniform(reset_lo, reset_hi)
            buffer.clear()
        observe(t, x)

        if buffer.full:
            d = compensated_regressor(buffer, t, cfg.window, direction)
            r = rho(buffer, cost, t, cfg.window, direction)
            state = filter_step(state, d, r, cfg.ell, h)
            state.w = implicit_weight_step(state, L, cfg.deadzone, h)
            res_num += abs(r + state.w @ d)
            res_den += abs(r)

        if k % n_pe == 0:
            pe = pe_metric(state.xi)
            sym_ok = (np.max(np.abs(state.xi - state.xi.T)) <= 1e-9
                      and pe >= -1e-9 * max(1.0, np.abs(state.xi).max()))
            log.pe_trace.append((t, pe, bool(sym_ok)))
            pe_ok = pe >= cfg.pe_floor
            if pe_ok:
                below_since = k
                if log.pe_time is None:
                    log.pe_time = t
            elif k - below_since >= n_timeout:
                raise PEViolation(
                    f"lambda_min(xi) = {pe:.3g} stayed below {cfg.pe_floor:g} for "
                    f"{cfg.pe_timeout:g} s ({direction}, t={t:g})")

        if pe_ok and cfg.policy_mode == SYNCHRONOUS:
            w_pol[0] = fs * state.w

        if k % n_iter == 0:
            it += 1
            w_now = fs * state.w
            change = np.linalg.norm(w_now - prev_w) / max(1.0, np.linalg.norm(prev_w))
            bell = res_num / res_den if res_den > 0 else float("nan")
            log.add(it, t, w_now, pe, np.linalg.norm(state.G), bell)
            res_num = res_den = 0.0
            prev_w = w_now
            small = small + 1 if (pe_ok and change < cfg.convergence_eps) else 0
            if small < cfg.patience:
                continue
            if cfg.policy_mode == SYNCHRONOUS:
                return CriticWeights(w_now, direction), log
            # interval mode: evaluation of the current policy has settled, so
            # either it is a fixed point of improvement or we improve it
            moved = np.linalg.norm(w_now - w_pol[0]) / max(1.0, np.linalg.norm(w_pol[0]))
            if moved < cfg.convergence_eps:
                return CriticWeights(w_now, direction), log
            w_pol[0] = w_now
            small = 0

    weights = CriticWeights(fs * state.w, direction)
    if raise_on_nonconvergence:
        raise NonConvergence(f"{direction} weights still moving after "
                             f"{cfg.max_iterations} iterations", weights, log)
    return weights, log


def heldout_bellman_residual(problem: BoundaryProblem, basis: BasisSet, weights: CriticWeights,
                             cfg: LearnerConfig, rng_seed: int = 12345, episodes: int = 5,
                             duration: float = 2.0,
                             integrator: Optional[IntegratorConfig] = None) -> float:
    """mean |rho + w'd| / mean |rho| over fresh episodes with the learned policy.

    Episodes start from uniform draws over the training box and use the same
    exploration signal, shifted by a random phase so the data differ from
    training.
    """
    integrator = integrator or IntegratorConfig()
    env, cost, h = problem.system, problem.cost, integrator.step
    direction = weights.direction
    g = env.learner_view().input_map
    gain = 0.5 * policy_sign(direction) * cost.R_inv
    w = weights.w
    fs, sgn_int = frame_sign(direction), integration_sign(direction)
    rng = np.random.default_rng(rng_seed)
    lo, hi = _reset_box(problem, cfg)
    base_noise = cfg.noise(env.m)
    num = den = 0.0
    for _ in range(episodes):
        phase = rng.uniform(0, 2 * np.pi)
        noise = lambda t, p=phase: base_noise(t + p)

        def policy(x):
            return gain @ (g(x).T @ (eval_basis_gradient(basis, x).T @ w))

        def field_fn(t, x, noise=noise):
            return sgn_int * (env.drift(x) + g(x) @ (policy(x) + noise(t)))

        buffer = WindowBuffer(_steps(cfg.window, h) + 1, h, cost, basis)
        x, t = rng.uniform(lo, hi), 0.0
        buffer.push(t, x, policy(x), eval_basis_gradient(basis, x) @ (g(x) @ noise(t)))
        for k in range(1, _steps(duration, h) + 1):
            x = rk4_advance(field_fn, t, x, h)
            t = k * h
            buffer.push(t, x, policy(x), eval_basis_gradient(basis, x) @ (g(x) @ noise(t)))
            if buffer.full:
                d = compensated_regressor(buffer, t, cfg.window, direction)
                r = rho(buffer, cost, t, cfg.window, direction)
                num += abs(r + fs * w @ d)
                den += abs(r)
    return num / den if den > 0 else float("nan")
