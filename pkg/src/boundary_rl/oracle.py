"""Model-based ground truth used to check the learner.

Everything here is allowed to see the drift ``f``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm
from scipy.signal import place_poles

from .critic import BACKWARD, FORWARD, BasisSet, eval_basis
from .dynamics import FULL, BoundaryProblem, CostSpec, VisibilityError
from .sim import IntegratorConfig, Trajectory, rk4_advance, sample_count


class NoStabilizingSolution(RuntimeError):
    pass


class ShootingDiverged(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class RankDeficient(ValueError):
    pass


# ---------------------------------------------------------------- Riccati

@dataclass(frozen=True)
class RiccatiSolution:
    p: np.ndarray
    direction: str
    closed_loop_eigs: np.ndarray
    gain: np.ndarray          # u = -gain x (forward) or +gain x (backward)
    iterations: int = 0


def lyapunov_solve(A, Q) -> np.ndarray:
    """X with A'X + XA + Q = 0, by the Kronecker-vectorised linear system."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = A.shape[0]
    I = np.eye(n)
    M = np.kron(I, A.T) + np.kron(A.T, I)
    X = np.linalg.solve(M, -Q.reshape(-1, order="F")).reshape(n, n, order="F")
    return 0.5 * (X + X.T)


def care_residual(A, B, Q, R, P) -> float:
    A, B, Q, R, P = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R, P))
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.max(np.abs(res)))


def stabilizing_seed(A, B) -> np.ndarray:
    """A gain K with A - BK Hurwitz (zero if A already is).

    Candidates are pole placement (it can fail for multi-input pairs) and
    Bass's method: with beta > |A|, solve (A + beta I) W + W (A + beta I)' = 2BB'
    and take K = B'W^-1, which gives (A - BK) W + W (A - BK)' = -2 beta W.
    The smaller stabilizing gain wins.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    # eigenvalues within rounding of the axis count as unstable: the first
    # Lyapunov solve would be singular
    margin = np.sqrt(np.finfo(float).eps) * (1.0 + np.linalg.norm(A, 2))
    if np.max(np.linalg.eigvals(A).real) < -margin:
        return np.zeros((B.shape[1], n))
    rad = max(1.0, np.max(np.abs(np.linalg.eigvals(A))))
    poles = -rad * (1.0 + np.arange(n))
    candidates = []
    try:
        K = place_poles(A, B, poles).gain_matrix
        if np.max(np.linalg.eigvals(A - B @ K).real) < -margin:
            candidates.append(K)
    except (ValueError, np.linalg.LinAlgError):
        pass
    beta = 1.0 + np.linalg.norm(A, 2)
    W = lyapunov_solve(-(A + beta * np.eye(n)).T, 2.0 * B @ B.T)
    try:
        np.linalg.cholesky(W)
        K = np.linalg.solve(W, B).T
        if np.max(np.linalg.eigvals(A - B @ K).real) < -margin:
            candidates.append(K)
    except np.linalg.LinAlgError as exc:
        if not candidates:
            raise NoStabilizingSolution("pair (A, B) is not controllable") from exc
    if not candidates:
        raise NoStabilizingSolution("could not find a stabilizing seed gain")
    # a huge seed gain (weakly actuated input) drowns the first Lyapunov solve
    return min(candidates, key=np.linalg.norm)


def _newton_kleinman(A, B, Q, R, tol, max_iter):
    K = stabilizing_seed(A, B)
    R_inv = np.linalg.inv(R)
    P = None
    best = (np.inf, None, None)
    prev_change = np.inf
    for it in range(1, max_iter + 1):
        Ak = A - B @ K
        if np.max(np.linalg.eigvals(Ak).real) >= 0:
            raise NoStabilizingSolution("Newton-Kleinman iterate lost stability")
        P_new = lyapunov_solve(Ak, Q + K.T @ R @ K)
        K = R_inv @ B.T @ P_new
        res = care_residual(A, B, Q, R, P_new)
        if res < best[0]:
            best = (res, P_new, K)
        if P is not None:
            scale = max(1.0, np.max(np.abs(P_new)))
            change = np.max(np.abs(P_new - P))
            if change <= tol * scale:
                break
            # the update stopped shrinking once already small: rounding floor,
            # which grows with the conditioning of P
            if change >= prev_change and change <= 1e-5 * scale:
                break
            prev_change = change
        P = P_new
    else:
        raise NoStabilizingSolution(f"Newton-Kleinman did not converge in {max_iter} steps")
    return best[1], best[2], it


def solve_riccati(A, B, Q, R, direction=FORWARD, tol: float = 1e-14,
                  max_iter: int = 100) -> RiccatiSolution:
    """Stabilizing Riccati solution with V = x'Px.

    Backward: the reverse-time pair (-A, -B) is regulated; ``p`` is positive
    semidefinite in the critic convention and ``closed_loop_eigs`` are the
    reverse-time eigenvalues of -A - B R^-1 B' P (all in the left half plane).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"bad direction {direction!r}")
    As, Bs = (A, B) if direction == FORWARD else (-A, -B)
    P, K, it = _newton_kleinman(As, Bs, Q, R, tol, max_iter)
    eigs = np.linalg.eigvals(As - Bs @ K)
    if np.max(eigs.real) >= 0:
        raise NoStabilizingSolution("closed loop is not stable")
    gain = np.linalg.solve(R, B.T @ P)
    return RiccatiSolution(P, direction, eigs, gain, it)


def linearize(problem: BoundaryProblem, x=None, step: float = 1e-6):
    """(A, B) of the plant at x (default: origin), by central differences."""
    sys = problem.system
    if sys.visibility != FULL:
        raise VisibilityError("linearization needs the drift")
    x = np.zeros(sys.n) if x is None else np.asarray(x, dtype=float)
    A = np.empty((sys.n, sys.n))
    for j in range(sys.n):
        e = np.zeros(sys.n)
        e[j] = step
        A[:, j] = (sys.drift(x + e) - sys.drift(x - e)) / (2 * step)
    return A, np.asarray(sys.input_map(x), dtype=float).reshape(sys.n, sys.m)


# ------------------------------------------------------------ cubic plant

def cubic_value(x: float, direction=FORWARD):
    """Analytic value and slope for xdot = x^3 + u, cost x^2 + u^2.

    Forward: V' = 2x^3 + 2x sqrt(1+x^4). Backward (reverse-time regulator):
    V' = -2x^3 + 2x sqrt(1+x^4).
    """
    x = float(x)
    if abs(x) > 10:
        raise ValueError("cubic_value is guarded to |x| <= 10")
    s = math.sqrt(1.0 + x ** 4)
    sign = 1.0 if direction == FORWARD else -1.0
    V = sign * 0.5 * x ** 4 + 0.5 * x * x * s + 0.5 * math.log(x * x + s)
    dV = sign * 2.0 * x ** 3 + 2.0 * x * s
    return V, dV


def cubic_hjb_residual(x: float, dV: float, direction=FORWARD) -> float:
    """x^2 +/- dV x^3 - dV^2/4: the HJB after minimising over u."""
    sign = 1.0 if direction == FORWARD else -1.0
    return x * x + sign * dV * x ** 3 - 0.25 * dV * dV


def hjb_residual(problem: BoundaryProblem, grad_V: Callable, x, direction=FORWARD):
    """Pointwise HJB residual and its scale for a candidate value gradient.

    Forward: S + dV f - 1/4 dV g R^-1 g' dV'. Backward regulates the
    reverse-time plant, so f enters with a minus sign. Returns (residual, scale)
    with scale = S + 1/4 dV g R^-1 g' dV'.
    """
    sys, cost = problem.system, problem.cost
    x = np.asarray(x, dtype=float)
    p = np.asarray(grad_V(x), dtype=float)
    f = sys.drift(x)
    g = np.asarray(sys.input_map(x), dtype=float).reshape(sys.n, sys.m)
    q = g.T @ p
    quad = 0.25 * q @ cost.R_inv @ q
    S = cost.state_cost(x)
    sign = 1.0 if direction == FORWARD else -1.0
    return float(S + sign * p @ f - quad), float(S + quad)


def relative_hjb_residual(problem: BoundaryProblem, grad_V: Callable, points,
                          direction=FORWARD) -> float:
    num = den = 0.0
    for x in points:
        r, s = hjb_residual(problem, grad_V, x, direction)
        num += abs(r)
        den += s
    return num / den


# -------------------------------------------------------------- shooting

@dataclass
class BvpSolution:
    trajectory: Trajectory
    costate_init: np.ndarray
    optimal_cost: float
    converged: bool
    residual: float
    costates: Optional[np.ndarray] = None
    segments: int = 1
    newton_iterations: int = 0

    def summary(self, benchmark: str = "") -> dict:
        return {
            "benchmark": benchmark,
            "T": float(self.trajectory.times[-1] - self.trajectory.times[0]),
            "optimal_cost": float(self.optimal_cost),
            "costate_init": [float(v) for v in self.costate_init],
            "residual": float(self.residual),
        }

    def to_json(self, path=None, benchmark: str = "") -> str:
        text = json.dumps(self.summary(benchmark), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class _Hamiltonian:
    """Batched state/costate field; columns of (2n, k) arrays are separate runs."""

    def __init__(self, problem: BoundaryProblem, fd_step: float = 1e-6):
        sys, cost = problem.system, problem.cost
        if sys.visibility != FULL:
            raise VisibilityError("the shooting oracle needs the drift")
        if cost.state_cost_grad is None:
            raise ValueError("the shooting oracle needs the state-cost gradient")
        self.n, self.m = sys.n, sys.m
        self.f, self.g, self.dS = sys.drift, sys.input_map, cost.state_cost_grad
        self.R_inv = cost.R_inv
        self.fd = fd_step
        self.G = self._constant_input_map(problem)

    def _constant_input_map(self, problem):
        rng = np.random.default_rng(0)
        lo, hi = problem.domain if problem.domain is not None else (-np.ones(self.n), np.ones(self.n))
        G0 = np.asarray(self.g(np.zeros(self.n)), dtype=float).reshape(self.n, self.m)
        for _ in range(5):
            x = rng.uniform(lo, hi)
            if np.max(np.abs(np.asarray(self.g(x), dtype=float).reshape(self.n, self.m) - G0)) > 0:
                return None
        return G0

    def _gmat(self, x):
        return np.asarray(self.g(x), dtype=float).reshape(self.n, self.m)

    def control(self, X, Lam):
        """u* = -1/2 R^-1 g' lambda, column-wise."""
        if self.G is not None:
            return -0.5 * self.R_inv @ (self.G.T @ Lam)
        return np.stack([-0.5 * self.R_inv @ (self._gmat(X[:, k]).T @ Lam[:, k])
                         for k in range(X.shape[1])], axis=1)

    def __call__(self, t, Z):
        n = self.n
        X, Lam = Z[:n], Z[n:]
        U = self.control(X, Lam)
        if self.G is not None:
            Xdot = self.f(X) + self.G @ U
        else:
            Xdot = self.f(X) + np.stack([self._gmat(X[:, k]) @ U[:, k]
                                         for k in range(X.shape[1])], axis=1)
        # lambda' = -dS - (df/dx)' lambda - (d(g u)/dx)' lambda, u held fixed
        Ldot = -self.dS(X)
        for j in range(n):
            E = np.zeros((n, 1))
            E[j] = self.fd
            col = (self.f(X + E) - self.f(X - E)) / (2 * self.fd)
            if self.G is None:
                col = col + np.stack([(self._gmat(X[:, k] + E[:, 0]) - self._gmat(X[:, k] - E[:, 0]))
                                      @ U[:, k] for k in range(X.shape[1])], axis=1) / (2 * self.fd)
            Ldot[j] -= np.sum(col * Lam, axis=0)
        return np.concatenate([Xdot, Ldot])


def _propagate(ham, Z0, lengths, h, record=False):
    """RK4 for each column over its own number of steps; returns end states."""
    Z = np.array(Z0, dtype=float)
    out = np.empty_like(Z)
    lengths = np.asarray(lengths)
    done = lengths == 0
    out[:, done] = Z[:, done]
    path = [Z.copy()] if record else None
    for k in range(1, int(lengths.max()) + 1 if len(lengths) else 1):
        Z = rk4_advance(ham, 0.0, Z, h)
        if not np.all(np.isfinite(Z)):
            Z = np.where(np.isfinite(Z), Z, 1e300)
        ends = lengths == k
        out[:, ends] = Z[:, ends]
        if record:
            path.append(Z.copy())
    return out, path


def _residual(ham, z, x0, xT, lengths, h):
    n, S = ham.n, len(lengths)
    nodes = np.concatenate([np.concatenate([x0, z[:n]])[:, None],
                            z[n:].reshape(S - 1, 2 * n).T], axis=1) if S > 1 else \
        np.concatenate([x0, z[:n]])[:, None]
    ends, _ = _propagate(ham, nodes, lengths, h)
    parts = [ends[:, s] - nodes[:, s + 1] for s in range(S - 1)]
    parts.append(ends[:n, -1] - xT)
    return np.concatenate(parts), nodes


def _jacobian(ham, z, x0, xT, lengths, h, r0, step):
    """Finite-difference Jacobian exploiting the block structure.

    Node s only influences segment s, so every perturbation of every node is
    propagated in one batched run.
    """
    n, S = ham.n, len(lengths)
    nz = z.size
    J = np.zeros((r0.size, nz))
    # columns: unknown j lives in segment seg(j), component c(j) of its start node
    cols, segs, comps = [], [], []
    for j in range(nz):
        if j < n:
            segs.append(0)
            comps.append(n + j)
        else:
            segs.append(1 + (j - n) // (2 * n))
            comps.append((j - n) % (2 * n))
        cols.append(j)
    base = np.concatenate([np.concatenate([x0, z[:n]])[:, None],
                           z[n:].reshape(S - 1, 2 * n).T], axis=1) if S > 1 else \
        np.concatenate([x0, z[:n]])[:, None]
    starts = np.repeat(base[:, segs], 2, axis=1)
    dz = step * np.maximum(1.0, np.abs(z))
    for i, j in enumerate(cols):
        starts[comps[i], 2 * i] += dz[j]
        starts[comps[i], 2 * i + 1] -= dz[j]
    seg_len = np.repeat(np.asarray(lengths)[segs], 2)
    ends, _ = _propagate(ham, starts, seg_len, h)
    for i, j in enumerate(cols):
        s = segs[i]
        dend = (ends[:, 2 * i] - ends[:, 2 * i + 1]) / (2 * dz[j])
        row = 2 * n * s
        if s < S - 1:
            J[row:row + 2 * n, j] = dend
        else:
            J[row:row + n, j] = dend[:n]
        if s >= 1:
            # the node is also the target of the previous segment's continuity block
            J[2 * n * (s - 1) + comps[i], j] -= 1.0
    return J


def _segment_lengths(K: int, S: int):
    base, extra = divmod(K, S)
    return [base + (1 if s < extra else 0) for s in range(S)]


def _initial_guess(problem: BoundaryProblem, ham, lengths, h):
    """Nodes from the linearized dichotomy: forward layer from x0, backward layer into xT."""
    n = ham.n
    A, B = linearize(problem)
    Q = 0.5 * np.atleast_2d(_hessian_of_cost(problem))
    R = problem.cost.control_weight
    try:
        Pf = solve_riccati(A, B, Q, R, FORWARD).p
        Pb = solve_riccati(A, B, Q, R, BACKWARD).p
    except NoStabilizingSolution:
        Pf = Pb = np.zeros((n, n))
    Ff = A - B @ np.linalg.solve(R, B.T @ Pf)     # forward closed loop
    Fb = A + B @ np.linalg.solve(R, B.T @ Pb)     # backward layer in forward time
    T = h * sum(lengths)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]) * h
    lam0 = 2 * Pf @ problem.x0 - 2 * Pb @ _expm_apply(-Fb * T, problem.xT)
    guesses = [lam0]
    for t in starts[1:]:
        xf = _expm_apply(Ff * t, problem.x0)
        xb = _expm_apply(-Fb * (T - t), problem.xT)
        guesses.append(np.concatenate([xf + xb, 2 * Pf @ xf - 2 * Pb @ xb]))
    return np.concatenate(guesses)


def _expm_apply(M, v):
    return expm(M) @ v


def _hessian_of_cost(problem: BoundaryProblem, step: float = 1e-5):
    cost, n = problem.cost, problem.system.n
    if cost.state_weight is not None:
        return 2.0 * np.asarray(cost.state_weight, dtype=float)
    H = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        H[:, j] = (cost.state_cost_grad(e) - cost.state_cost_grad(-e)) / (2 * step)
    return 0.5 * (H + H.T)


def quadratic_weight(problem: BoundaryProblem):
    """Q of the quadratic part of the state cost at the origin (S ~ x'Qx)."""
    return 0.5 * np.atleast_2d(_hessian_of_cost(problem))


def _newton(ham, z, x0, xT, lengths, h, tol, max_iter, fd_step):
    r, _ = _residual(ham, z, x0, xT, lengths, h)
    best = (np.max(np.abs(r)), z.copy())
    it = 0
    for it in range(1, max_iter + 1):
        if best[0] <= tol:
            break
        J = _jacobian(ham, z, x0, xT, lengths, h, r, fd_step)
        try:
            dz = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            dz = np.linalg.lstsq(J, -r, rcond=None)[0]
        norm0 = np.linalg.norm(r)
        alpha = 1.0
        while alpha >= 1.0 / 1024:
            z_try = z + alpha * dz
            r_try, _ = _residual(ham, z_try, x0, xT, lengths, h)
            if np.all(np.isfinite(r_try)) and np.linalg.norm(r_try) < (1 - 1e-4 * alpha) * norm0:
                break
            alpha *= 0.5
        else:
            return best, it, False
        z, r = z_try, r_try
        err = np.max(np.abs(r))
        if err < best[0]:
            best = (err, z.copy())
    return best, it, best[0] <= tol


def hamiltonian_growth_rate(problem: BoundaryProblem) -> float:
    """Largest real part among the linearized state/costate modes at the origin."""
    A, B = linearize(problem)
    Q = 0.5 * _hessian_of_cost(problem)
    R = problem.cost.control_weight
    H = np.block([[A, -0.5 * B @ np.linalg.solve(R, B.T)], [-2.0 * Q, -A.T]])
    return float(np.max(np.abs(np.linalg.eigvals(H).real)))


def default_segments(problem: BoundaryProblem, growth_per_segment: float = 4.0) -> int:
    """Smallest power of two keeping e^(mu T / S) below e^growth_per_segment."""
    need = hamiltonian_growth_rate(problem) * problem.horizon / growth_per_segment
    S = 1
    while S < need:
        S *= 2
    return S


def solve_tpbvp_shooting(problem: BoundaryProblem, cfg: Optional[IntegratorConfig] = None,
                         tol: float = 1e-8, max_iter: int = 30, segments: Optional[int] = None,
                         max_segments: int = 64, fd_step: float = 1e-6,
                         initial_costate=None) -> BvpSolution:
    """Solve the necessary conditions on [0, T] by (multiple) shooting.

    Unknowns are the initial costate and, with several segments, the full
    state/costate at interior nodes. Damped Newton with finite-difference
    sensitivities. The first attempt uses ``segments`` pieces (default: sized
    from the linearized growth rate, so short horizons use single shooting);
    whenever Newton stalls the segment count doubles, up to ``max_segments``.
    """
    cfg = cfg or IntegratorConfig()
    ham = _Hamiltonian(problem)
    n, h, T = ham.n, cfg.step, problem.horizon
    x0, xT = problem.x0, problem.xT
    K = sample_count(T, h) - 1
    if K < 1:
        raise ValueError("horizon shorter than one step")
    S = segments or default_segments(problem)
    overall_best = None
    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            S = min(S, K)
            lengths = _segment_lengths(K, S)
            z = _initial_guess(problem, ham, lengths, h)
            if initial_costate is not None:
                z[:n] = np.asarray(initial_costate, dtype=float)
            (err, z_best), iters, ok = _newton(ham, z, x0, xT, lengths, h, tol, max_iter, fd_step)
            if overall_best is None or err < overall_best[0]:
                overall_best = (err, z_best, lengths, iters)
            if ok:
                return _assemble(problem, ham, z_best, lengths, h, err, True, iters)
            if S >= min(max_segments, K):
                break
            S *= 2
        err, z_best, lengths, iters = overall_best
        best = _assemble(problem, ham, z_best, lengths, h, err, False, iters)
    raise ShootingDiverged(f"shooting did not reach tol {tol:g}; best residual {err:.3g}", best)


def _assemble(problem, ham, z, lengths, h, err, converged, iters):
    n, S = ham.n, len(lengths)
    x0 = problem.x0
    nodes = np.concatenate([np.concatenate([x0, z[:n]])[:, None],
                            z[n:].reshape(S - 1, 2 * n).T], axis=1) if S > 1 else \
        np.concatenate([x0, z[:n]])[:, None]
    _, path = _propagate(ham, nodes, lengths, h, record=True)
    Zs = [path[0][:, 0]]
    for s, L in enumerate(lengths):
        Zs.extend(path[k][:, s] for k in range(1, L + 1))
    Z = np.array(Zs)
    X, Lam = Z[:, :n], Z[:, n:]
    U = ham.control(X.T, Lam.T).T
    times = h * np.arange(len(Z))
    cost = problem.cost
    r = np.array([cost.state_cost(x) + u @ cost.control_weight @ u for x, u in zip(X, U)])
    J = np.zeros(len(r))
    J[1:] = np.cumsum(0.5 * h * (r[1:] + r[:-1]))
    traj = Trajectory(times, X, U, J)
    return BvpSolution(traj, Lam[0].copy(), float(J[-1]), converged, float(err),
                       Lam, S, iters)


def linear_tpbvp(A, B, Q, R, x0, xT, T: float):
    """Closed-form optimal cost and initial costate for the linear-quadratic problem.

    The Hamiltonian system z' = H z, H = [[A, -1/2 B R^-1 B'], [-2Q, -A']], is
    split into its stable and anti-stable modes; each mode is anchored at the
    end where it is largest so no exponential is ever bigger than one. The cost
    follows from d(lambda'x)/dt = -2(x'Qx + u'Ru).
    Returns (cost, lambda0, (t -> x(t))).
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    xT = np.asarray(xT, dtype=float).reshape(-1)
    n = A.shape[0]
    H = np.block([[A, -0.5 * B @ np.linalg.solve(R, B.T)], [-2.0 * Q, -A.T]])
    mu, V = np.linalg.eig(H)
    order = np.argsort(mu.real)
    mu, V = mu[order], V[:, order]
    ms, mu_u = mu[:n], mu[n:]
    Vs, Vu = V[:, :n], V[:, n:]
    if np.max(ms.real) >= 0 or np.min(mu_u.real) <= 0:
        raise NoStabilizingSolution("Hamiltonian has modes on the imaginary axis")
    Es, Eu = np.exp(ms * T), np.exp(-mu_u * T)
    M = np.block([[Vs[:n], Vu[:n] * Eu], [Vs[:n] * Es, Vu[:n]]])
    coef = np.linalg.solve(M, np.concatenate([x0, xT]).astype(complex))
    a, b = coef[:n], coef[n:]

    def z(t):
        return (Vs @ (np.exp(ms * t) * a) + Vu @ (np.exp(mu_u * (t - T)) * b)).real

    z0, zT = z(0.0), z(T)
    cost = 0.5 * (z0[n:] @ z0[:n] - zT[n:] @ zT[:n])
    return float(cost), z0[n:], lambda t: z(t)[:n]


# ------------------------------------------------------------ projection

def box_grid(domain, n_samples: int) -> np.ndarray:
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in domain)
    n = lo.shape[0]
    per = int(math.ceil(n_samples ** (1.0 / n) - 1e-9))
    axes = [np.linspace(lo[i], hi[i], per) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def project_value_on_basis(value_fn: Callable, basis: BasisSet, domain, n_samples: int = 1000):
    """Least-squares coefficients of value_fn on the basis over a uniform grid."""
    if n_samples < 10 * basis.N:
        raise ValueError(f"need at least {10 * basis.N} samples")
    X = box_grid(domain, n_samples)
    Phi = np.array([eval_basis(basis, x) for x in X])
    if np.linalg.matrix_rank(Phi) < basis.N:
        raise RankDeficient("sampled basis matrix is rank deficient")
    v = np.array([float(value_fn(x)) for x in X])
    return np.linalg.lstsq(Phi, v, rcond=None)[0]


def finite_horizon_cost(traj: Trajectory, cost: CostSpec) -> float:
    """Trapezoidal integral of S(x) + u'Ru over the stored samples."""
    if len(traj) < 2:
        return 0.0
    r = np.array([cost.state_cost(x) + u @ cost.control_weight @ u
                  for x, u in zip(traj.states, traj.controls)])
    return float(np.sum(0.5 * np.diff(traj.times) * (r[1:] + r[:-1])))
