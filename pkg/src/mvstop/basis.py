"""Regression bases with the bound / Lipschitz metadata used in the error analysis."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import RewardSpec

# sup-norm bound of the normalised Hermite functions (Cramer's inequality)
HERMITE_SUP = 0.8160


@dataclass(frozen=True)
class BasisSet:
    """K functions evaluated jointly: ``eval(x)`` maps ``(n, d)`` to ``(n, K)``.

    ``sup_bound`` bounds the root mean square ``sqrt((1/K) sum_k psi_k(x)^2)``;
    ``lipschitz`` holds per-function constants and ``ell`` their Euclidean norm.
    """

    size: int
    eval: Callable[[np.ndarray], np.ndarray]
    sup_bound: float
    lipschitz: np.ndarray
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        lip = np.asarray(self.lipschitz, dtype=float)
        if self.size < 1:
            raise ValueError("a basis needs at least one function")
        if lip.shape != (self.size,):
            raise ValueError("need one Lipschitz constant per basis function")
        if not (self.sup_bound >= 0 and np.all(lip >= 0)):
            raise ValueError("bound metadata must be nonnegative")
        object.__setattr__(self, "lipschitz", lip)

    @property
    def ell(self) -> float:
        return float(math.sqrt(np.sum(self.lipschitz ** 2)))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return self.eval(x)


def hermite_functions(n: int, x) -> np.ndarray:
    """Orthonormal Hermite functions of orders ``0..n-1`` at ``x``; shape ``(len(x), n)``.

    Uses the recurrence on the normalised functions,
    ``psi_{k+1} = sqrt(2/(k+1)) x psi_k - sqrt(k/(k+1)) psi_{k-1}``,
    so no raw Hermite polynomial is ever formed.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    out = np.empty((x.size, n))
    if n == 0:
        return out
    out[:, 0] = math.pi ** -0.25 * np.exp(-0.5 * x * x)
    if n > 1:
        out[:, 1] = math.sqrt(2.0) * x * out[:, 0]
    for k in range(1, n - 1):
        out[:, k + 1] = (math.sqrt(2.0 / (k + 1)) * x * out[:, k]
                         - math.sqrt(k / (k + 1)) * out[:, k - 1])
    return out


def hermite_basis(K: int) -> BasisSet:
    """First K Hermite functions (d = 1)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    k = np.arange(K, dtype=float)
    lip = 2.0 * HERMITE_SUP * np.sqrt(k)
    # the 2 M0 sqrt(k) rule degenerates at k = 0; psi_0' = -psi_1 / sqrt(2)
    lip[0] = HERMITE_SUP / math.sqrt(2.0)

    def ev(x):
        if x.shape[1] != 1:
            raise ValueError("the Hermite basis is one-dimensional")
        return hermite_functions(K, x[:, 0])

    return BasisSet(K, ev, HERMITE_SUP, lip, {"kind": "hermite", "K": K})


def _tensor_exponents(degree: int, d: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(degree + 1), repeat=d))


def poly_reward_basis(degree: int, reward: Optional[RewardSpec] = None, j: int = 1,
                      d: int = 1, box: Optional[tuple[float, float]] = None) -> BasisSet:
    """Tensor monomials up to ``degree`` per coordinate, plus ``g_j`` when a reward is given.

    Bound metadata is computed on the box ``[lo, hi]^d`` (``reward.box`` by
    default, else ``[-1, 1]``); these functions are not globally bounded.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    exps = np.array(_tensor_exponents(degree, d), dtype=int)
    with_reward = reward is not None
    K = len(exps) + int(with_reward)
    if box is None:
        box = reward.box if with_reward and reward.box is not None else (-1.0, 1.0)
    lo, hi = map(float, box)

    def ev(x):
        if x.shape[1] != d:
            raise ValueError(f"basis built for d={d}, got states of dimension {x.shape[1]}")
        cols = np.prod(x[:, None, :] ** exps[None, :, :], axis=2)
        if with_reward:
            cols = np.column_stack([cols, reward(j, x)])
        return cols

    # bounds on the box: |x_i| <= R, every monomial is a product of such powers
    R = max(abs(lo), abs(hi))
    mono_sup = np.array([R ** e.sum() for e in exps], dtype=float)
    # d/dx_i x^e = e_i x^(e_i - 1) prod_{l != i} x_l^e_l; combine coordinates in l2
    mono_lip = np.array([
        math.sqrt(sum((ei * R ** (e.sum() - 1)) ** 2 for ei in e if ei > 0)) for e in exps
    ])
    sq = np.sum(mono_sup ** 2)
    lip = list(mono_lip)
    if with_reward:
        sq += reward.payoff_bound ** 2
        lip.append(reward.payoff_lipschitz)
    sup = math.sqrt(sq / K)
    desc = {"kind": "poly_reward", "degree": degree, "reward": with_reward, "d": d, "box": [lo, hi]}
    return BasisSet(K, ev, sup, np.array(lip), desc)


def gram_matrix(basis: BasisSet, sample) -> np.ndarray:
    """Empirical Gram matrix ``(1/N) sum_i psi(x_i) psi(x_i)^T``."""
    phi = basis(sample)
    if phi.shape[0] == 0:
        raise ValueError("empty sample")
    g = phi.T @ phi / phi.shape[0]
    return 0.5 * (g + g.T)


def make_basis(spec: dict, reward: Optional[RewardSpec] = None, d: int = 1):
    """Date-indexed basis factory ``j -> BasisSet`` from a config block."""
    kind = spec.get("kind", "poly_reward")
    if kind == "hermite":
        b = hermite_basis(int(spec.get("K", 4)))
        return lambda j: b
    if kind == "poly_reward":
        degree = int(spec.get("degree", 2))
        use_reward = spec.get("reward", True)
        box = spec.get("box")
        cache: dict[int, BasisSet] = {}

        def at(j):
            if j not in cache:
                cache[j] = poly_reward_basis(degree, reward if use_reward else None, j, d,
                                             tuple(box) if box else None)
            return cache[j]
        return at
    raise ValueError(f"unknown basis kind {kind!r}")
