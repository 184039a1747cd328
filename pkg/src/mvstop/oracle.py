"""Reference solution of the 1-D Shimizu-Yamada stopping problem on a value grid.

In this benchmark the mean stays at ``x0``, so the limit process is an
ordinary Ornstein-Uhlenbeck diffusion with exact Gaussian transitions.
Backward induction uses Gauss-Hermite quadrature against that transition
and monotone cubic interpolation of the next-date value function.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.interpolate import PchipInterpolator
from scipy.stats import norm

from .model import RewardSpec, ShimizuYamadaParams, sy_conditional_moments


class GridTooNarrowError(ValueError):
    pass


@dataclass(frozen=True)
class OracleSolution:
    grid: np.ndarray
    values: np.ndarray          # (J + 1, G); row 0 is E[V_1(Z_1) | Z_0 = x]
    continuations: np.ndarray   # (J + 1, G); row J is identically zero
    v0: float
    quad_order: int
    grid_bounds: tuple[float, float]
    convergence_gap: Optional[float] = None

    @property
    def num_dates(self) -> int:
        return self.values.shape[0] - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "x", "value", "continuation"])
            for j in range(self.values.shape[0]):
                for x, v, c in zip(self.grid, self.values[j], self.continuations[j]):
                    w.writerow([j, repr(float(x)), repr(float(v)), repr(float(c))])


class _Extended:
    """PCHIP inside the grid, linear continuation with the end slopes outside."""

    def __init__(self, grid, values):
        self.lo, self.hi = grid[0], grid[-1]
        self.f = PchipInterpolator(grid, values, extrapolate=False)
        df = self.f.derivative()
        self.vlo, self.vhi = values[0], values[-1]
        self.slo, self.shi = float(df(self.lo)), float(df(self.hi))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.clip(x, self.lo, self.hi)
        y = self.f(inside)
        y = np.where(x < self.lo, self.vlo + self.slo * (x - self.lo), y)
        return np.where(x > self.hi, self.vhi + self.shi * (x - self.hi), y)


def gaussian_call_expectation(mean: float, std: float, strike: float) -> float:
    """``E[(X - K)^+]`` for ``X ~ N(mean, std^2)``."""
    if std == 0.0:
        return max(mean - strike, 0.0)
    z = (mean - strike) / std
    return (mean - strike) * norm.cdf(z) + std * norm.pdf(z)


def gaussian_put_expectation(mean: float, std: float, strike: float) -> float:
    return gaussian_call_expectation(mean, std, strike) - (mean - strike)


def _marginal_mass_outside(params: ShimizuYamadaParams, num_dates: int, lo: float,
                           hi: float) -> float:
    worst = 0.0
    for j in range(1, num_dates + 1):
        m, v = sy_conditional_moments(params, 0.0, j * params.horizon / num_dates, params.x0)
        if v == 0.0:
            out = float(not lo <= m <= hi)
        else:
            s = math.sqrt(v)
            out = norm.cdf((lo - m) / s) + norm.sf((hi - m) / s)
        worst = max(worst, out)
    return worst


def _solve(params, rewards, J, grid_size, quad_order, bounds):
    lo, hi = bounds
    grid = np.linspace(lo, hi, grid_size)
    nodes, weights = hermegauss(quad_order)
    weights = weights / math.sqrt(2.0 * math.pi)
    dt = params.horizon / J
    mean, var = sy_conditional_moments(params, 0.0, dt, grid)
    std = math.sqrt(var)
    points = mean[:, None] + std * nodes[None, :]

    values = np.empty((J + 1, grid_size))
    conts = np.zeros((J + 1, grid_size))
    values[J] = rewards(J, grid[:, None])
    for j in range(J - 1, 0, -1):
        nxt = _Extended(grid, values[j + 1])
        conts[j] = nxt(points) @ weights
        values[j] = np.maximum(rewards(j, grid[:, None]), conts[j])
    first = _Extended(grid, values[1])
    conts[0] = first(points) @ weights
    values[0] = conts[0]
    m0, _ = sy_conditional_moments(params, 0.0, dt, params.x0)
    v0 = float(first(m0 + std * nodes) @ weights)
    return grid, values, conts, v0


def solve_grid(params: ShimizuYamadaParams, rewards: RewardSpec, num_dates: Optional[int] = None,
               grid_size: int = 2001, quad_order: int = 64,
               grid_bounds: Optional[tuple[float, float]] = None,
               check_convergence: bool = False) -> OracleSolution:
    """Backward induction ``C_j(x) = E[max(g_{j+1}, C_{j+1})(Z_{j+1}) | Z_j = x]``.

    With ``check_convergence`` the solve is repeated with doubled grid and
    quadrature order and the change in ``v0`` is stored in ``convergence_gap``.
    """
    J = rewards.num_dates if num_dates is None else int(num_dates)
    if J != rewards.num_dates:
        raise ValueError("num_dates disagrees with the reward specification")
    if quad_order < 20:
        raise ValueError("quad_order must be >= 20")
    if grid_size < 4:
        raise ValueError("grid_size must be >= 4")
    bounds = tuple(grid_bounds) if grid_bounds is not None else params.default_box(6.0)
    lo, hi = bounds
    mass = _marginal_mass_outside(params, J, lo, hi)
    if mass > 1e-8:
        raise GridTooNarrowError(f"probability mass beyond grid {bounds}: {mass:.3e}")
    grid, values, conts, v0 = _solve(params, rewards, J, grid_size, quad_order, bounds)
    gap = None
    if check_convergence:
        _, _, _, v0_fine = _solve(params, rewards, J, 2 * grid_size - 1, 2 * quad_order, bounds)
        gap = abs(v0_fine - v0)
    return OracleSolution(grid, values, conts, v0, quad_order, (float(lo), float(hi)), gap)


def continuation_at(solution: OracleSolution, j: int, x) -> np.ndarray:
    """Interpolated ``C*_j(x)``; points outside the grid are rejected."""
    x = np.asarray(x, dtype=float)
    lo, hi = solution.grid_bounds
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"points outside the oracle grid [{lo}, {hi}]")
    if j == solution.num_dates:
        return np.zeros_like(x)
    return PchipInterpolator(solution.grid, solution.continuations[j])(x)


def value_at(solution: OracleSolution, j: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lo, hi = solution.grid_bounds
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"points outside the oracle grid [{lo}, {hi}]")
    return PchipInterpolator(solution.grid, solution.values[j])(x)
