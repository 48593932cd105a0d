"""Polynomial critics ``V(x) = w' phi(x)`` and the policies they induce."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import CostSpec

FORWARD = "forward"
BACKWARD = "backward"
DIRECTIONS = (FORWARD, BACKWARD)


class CorruptWeightsError(ValueError):
    pass


@dataclass(frozen=True)
class BasisSet:
    """Monomials prod_i x_i**alpha_i, one multi-index alpha per term."""

    terms: tuple
    _exp: np.ndarray = field(init=False, repr=False, compare=False)
    _grad: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        terms = tuple(tuple(int(a) for a in t) for t in self.terms)
        if not terms:
            raise ValueError("basis needs at least one term")
        n = len(terms[0])
        if any(len(t) != n for t in terms):
            raise ValueError("all multi-indices must have the same length")
        if any(a < 0 for t in terms for a in t):
            raise ValueError("exponents must be non-negative")
        if any(sum(t) < 2 for t in terms):
            raise ValueError("every term needs total degree >= 2 so that u(0) = 0")
        if len(set(terms)) != len(terms):
            raise ValueError("basis terms must be distinct")
        exp = np.array(terms, dtype=float)
        grad = []
        for j in range(n):
            lowered = exp.copy()
            lowered[:, j] = np.maximum(lowered[:, j] - 1, 0)
            grad.append((exp[:, j].copy(), lowered))
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "_exp", exp)
        object.__setattr__(self, "_grad", tuple(grad))

    @property
    def n(self) -> int:
        return self._exp.shape[1]

    @property
    def N(self) -> int:
        return self._exp.shape[0]

    def label(self, k: int) -> str:
        parts = []
        for i, a in enumerate(self.terms[k]):
            if a == 1:
                parts.append(f"x{i + 1}")
            elif a > 1:
                parts.append(f"x{i + 1}^{a}")
        return "*".join(parts)


BENCHMARK_BASES = {
    "rl_circuit": BasisSet(((2,),)),
    "cubic": BasisSet(((2,), (4,))),
    "manipulator": BasisSet(((2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3))),
}


def eval_basis(basis: BasisSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    return np.prod(x ** basis._exp, axis=1)


def eval_basis_gradient(basis: BasisSet, x) -> np.ndarray:
    """N x n matrix; row k is the gradient of term k."""
    x = np.asarray(x, dtype=float).reshape(-1)
    out = np.empty((basis.N, basis.n))
    for j, (coef, lowered) in enumerate(basis._grad):
        out[:, j] = coef * np.prod(x ** lowered, axis=1)
    return out


@dataclass(frozen=True)
class CriticWeights:
    w: np.ndarray
    direction: str = FORWARD

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValueError("critic weights must be finite")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        object.__setattr__(self, "w", w)


def _check(basis: BasisSet, w: CriticWeights):
    if w.w.shape[0] != basis.N:
        raise ValueError(f"{w.w.shape[0]} weights for a basis of {basis.N} terms")


def eval_value(basis: BasisSet, w: CriticWeights, x) -> float:
    _check(basis, w)
    return float(w.w @ eval_basis(basis, x))


def policy_sign(direction: str) -> float:
    # forward: u = -1/2 R^-1 g' dV/dx ; backward: u = +1/2 R^-1 g' dV/dx
    return -1.0 if direction == FORWARD else 1.0


def policy_from_weights(input_map, cost: CostSpec, basis: BasisSet, w: CriticWeights):
    """State feedback ``u(x) = sign * 1/2 R^-1 g(x)' grad_phi(x)' w``."""
    _check(basis, w)
    gain = 0.5 * policy_sign(w.direction) * cost.R_inv
    coeffs = w.w.copy()

    def policy(x):
        return gain @ (input_map(x).T @ (eval_basis_gradient(basis, x).T @ coeffs))

    return policy


def weights_record(basis: BasisSet, w: CriticWeights, benchmark: str = "",
                   config_hash: str = "") -> dict:
    _check(basis, w)
    return {
        "direction": w.direction,
        "basis_terms": [list(t) for t in basis.terms],
        "w": [float(v) for v in w.w],
        "benchmark": benchmark,
        "trained_at_config_hash": config_hash,
    }


def weights_from_record(rec: dict):
    try:
        basis = BasisSet(tuple(tuple(t) for t in rec["basis_terms"]))
        w = CriticWeights(np.array(rec["w"], dtype=float), rec["direction"])
        _check(basis, w)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptWeightsError(f"bad weight record: {exc}") from exc
    return basis, w, rec.get("benchmark", ""), rec.get("trained_at_config_hash", "")


def save_weights(path, basis: BasisSet, w: CriticWeights, benchmark="", config_hash=""):
    with open(path, "w") as fh:
        json.dump(weights_record(basis, w, benchmark, config_hash), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weights(path):
    try:
        with open(path) as fh:
            rec = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptWeightsError(f"{path}: {exc}") from exc
    if not isinstance(rec, dict):
        raise CorruptWeightsError(f"{path}: expected a JSON object")
    return weights_from_record(rec)


def basis_from_terms(terms: Sequence[Sequence[int]]) -> BasisSet:
    return BasisSet(tuple(tuple(t) for t in terms))
