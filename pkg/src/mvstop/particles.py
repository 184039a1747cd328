"""Interacting particle simulation with per-particle random streams and rate studies."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .model import ModelSpec, ShimizuYamadaParams, sy_model

# stream purposes keep training, test and inner-sampling draws disjoint
TRAIN, TEST, INNER, BATCH = 0, 1, 2, 3

COUPLING_TAGS = ("particle_system", "exact_limit", "euler_limit")


class SimulationError(RuntimeError):
    pass


def particle_stream(seed: int, index: int, purpose: int = TRAIN) -> np.random.Generator:
    """Generator for particle ``index``; depends only on (seed, purpose, index)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def standard_normals(seed: int, n_particles: int, n_steps: int, width: int = 1,
                     purpose: int = TRAIN, workers: int = 1) -> np.ndarray:
    """Array ``(n_particles, n_steps, width)`` of N(0,1) draws, row i from stream i."""
    out = np.empty((n_particles, n_steps, width))

    def fill(lo, hi):
        for i in range(lo, hi):
            out[i] = particle_stream(seed, i, purpose).standard_normal((n_steps, width))

    if workers <= 1 or n_particles < 2 * workers:
        fill(0, n_particles)
    else:
        edges = np.linspace(0, n_particles, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, edges[:-1], edges[1:]))
    return out


@dataclass(frozen=True)
class ParticlePaths:
    """States ``(N, n_steps + 1, d)`` on an equidistant grid plus exercise-date lookup."""

    states: np.ndarray
    times: np.ndarray
    exercise_index: np.ndarray
    seed: int
    coupling_tag: str = "particle_system"

    def __post_init__(self):
        if self.coupling_tag not in COUPLING_TAGS:
            raise ValueError(f"unknown coupling tag {self.coupling_tag!r}")
        if self.states.ndim != 3 or self.states.shape[1] != self.times.shape[0]:
            raise ValueError("states must have shape (N, len(times), d)")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.exercise_index[0] != 0 or self.exercise_index[-1] != len(self.times) - 1:
            raise ValueError("exercise dates must start at 0 and end at the horizon")

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def n_dates(self) -> int:
        return len(self.exercise_index) - 1

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def at_dates(self) -> np.ndarray:
        """States at exercise dates 0..J, shape ``(N, J + 1, d)``."""
        return self.states[:, self.exercise_index, :]

    def to_csv(self, path) -> None:
        """Debug dump: one row per (particle, time, dim)."""
        n, t, d = self.states.shape
        idx = np.indices((n, t, d)).reshape(3, -1).T
        rows = np.column_stack([idx, self.states.reshape(-1)])
        np.savetxt(path, rows, delimiter=",", header="particle,time_index,dim,value",
                   comments="", fmt=["%d", "%d", "%d", "%.17g"])


def _grid(horizon: float, n_steps: int, n_dates: int):
    if n_dates < 1 or n_steps < n_dates:
        raise ValueError(f"need n_steps >= n_dates >= 1, got {n_steps}, {n_dates}")
    if n_steps % n_dates:
        raise ValueError(f"n_steps={n_steps} is not divisible by n_dates={n_dates}")
    times = np.linspace(0.0, horizon, n_steps + 1)
    exercise = np.arange(n_dates + 1) * (n_steps // n_dates)
    return times, exercise


def simulate_particles(model: ModelSpec, n_particles: int, n_steps: int, n_dates: int,
                       seed: int, *, purpose: int = TRAIN, workers: int = 1,
                       normals: Optional[np.ndarray] = None) -> ParticlePaths:
    """Euler-Maruyama simulation of the N-particle system.

    At every step each particle's coefficients are averaged over the whole
    cloud at that step. ``normals`` (shape ``(N, n_steps, m)``) overrides the
    seeded streams, which is how coupled runs share increments.
    """
    times, exercise = _grid(model.horizon, n_steps, n_dates)
    m = model.brownian_dim
    if normals is None:
        normals = standard_normals(seed, n_particles, n_steps, m, purpose, workers)
    elif normals.shape != (n_particles, n_steps, m):
        raise ValueError(f"normals must have shape {(n_particles, n_steps, m)}")
    dt = model.horizon / n_steps
    sqdt = math.sqrt(dt)

    states = np.empty((n_particles, n_steps + 1, model.dim))
    x = np.broadcast_to(model.initial_state, (n_particles, model.dim)).copy()
    states[:, 0] = x
    for k in range(n_steps):
        drift = model.averaged_drift(x)
        diff = model.averaged_diffusion(x)
        x = x + drift * dt + np.einsum("ndm,nm->nd", diff, normals[:, k, :]) * sqdt
        if not np.all(np.isfinite(x)):
            bad = int(np.argwhere(~np.isfinite(x))[0, 0])
            raise SimulationError(f"non-finite state at step {k + 1}, particle {bad}")
        states[:, k + 1] = x
    return ParticlePaths(states, times, exercise, int(seed), "particle_system")


def simulate_coupled_exact(params: ShimizuYamadaParams, n_particles: int, n_steps: int,
                           seed: int, *, n_dates: int = 1, purpose: int = TRAIN,
                           workers: int = 1,
                           normals: Optional[np.ndarray] = None) -> ParticlePaths:
    """Independent limit paths via the exact Gaussian transition, driven by the
    same per-particle normals that :func:`simulate_particles` uses for ``seed``."""
    if not isinstance(params, ShimizuYamadaParams):
        raise TypeError("exact coupling is only available for the Shimizu-Yamada model")
    times, exercise = _grid(params.horizon, n_steps, n_dates)
    if normals is None:
        normals = standard_normals(seed, n_particles, n_steps, 1, purpose, workers)
    dt = params.horizon / n_steps
    decay = math.exp(-params.a * dt)
    std = params.sigma * math.sqrt(-math.expm1(-2.0 * params.a * dt) / (2.0 * params.a))

    z = normals[:, :, 0]
    states = np.empty((n_particles, n_steps + 1, 1))
    x = np.full(n_particles, params.x0)
    states[:, 0, 0] = x
    for k in range(n_steps):
        x = params.x0 + decay * (x - params.x0) + std * z[:, k]
        states[:, k + 1, 0] = x
    return ParticlePaths(states, times, exercise, int(seed), "exact_limit")


def simulate_limit_euler(params: ShimizuYamadaParams, n_paths: int, n_steps: int,
                         n_dates: int, seed: int, *, purpose: int = TRAIN, workers: int = 1,
                         normals: Optional[np.ndarray] = None) -> ParticlePaths:
    """Independent Euler paths of the ordinary SDE ``dX = a (x0 - X) dt + sigma dW``.

    This is the classical (non-interacting) Monte Carlo sample used by RMC.
    """
    times, exercise = _grid(params.horizon, n_steps, n_dates)
    if normals is None:
        normals = standard_normals(seed, n_paths, n_steps, 1, purpose, workers)
    dt = params.horizon / n_steps
    sqdt = math.sqrt(dt)
    z = normals[:, :, 0]
    states = np.empty((n_paths, n_steps + 1, 1))
    x = np.full(n_paths, params.x0)
    states[:, 0, 0] = x
    for k in range(n_steps):
        x = x + params.a * (params.x0 - x) * dt + params.sigma * sqdt * z[:, k]
        states[:, k + 1, 0] = x
    return ParticlePaths(states, times, exercise, int(seed), "euler_limit")


@dataclass(frozen=True)
class RateReport:
    sizes: list
    errors: list
    slope: float
    r_squared: float
    p: float
    degenerate: bool = False

    def to_rows(self) -> list[dict]:
        return [{"size": s, "error": e} for s, e in zip(self.sizes, self.errors)]


def fit_rate(sizes: Sequence[float], errors: Sequence[float], p: float,
             zero_tol: float = 1e-14) -> RateReport:
    """Least-squares slope of log(error) against log(size)."""
    sizes = [float(s) for s in sizes]
    errors = [float(e) for e in errors]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    if max(errors) <= zero_tol:
        return RateReport(sizes, errors, math.nan, math.nan, p, degenerate=True)
    if min(errors) <= 0:
        raise ValueError("some but not all errors vanish; cannot fit a rate")
    lx, ly = np.log(sizes), np.log(errors)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RateReport(sizes, errors, float(slope), r2, p)


def _lp_sup_error(diff: np.ndarray, p: float) -> float:
    # diff: (N, grid, d); discrete sup over the grid, Euclidean norm in space
    sup = np.max(np.linalg.norm(diff, axis=2), axis=1)
    return float(np.mean(sup ** p))


def chaos_rate(params: ShimizuYamadaParams, n_list: Sequence[int], p: float = 2.0,
               n_steps: int = 1000, seeds: Sequence[int] = tuple(range(20)),
               workers: int = 1) -> RateReport:
    """L^p sup-distance between particles and their exactly simulated limit copies."""
    n_list = sorted(int(n) for n in n_list)
    if len(set(n_list)) < 4 or n_list[-1] < 10 * n_list[0]:
        raise ValueError("n_list needs >= 4 distinct sizes spanning at least a decade")
    model = sy_model(params)
    errors = []
    for n in n_list:
        acc = 0.0
        for seed in seeds:
            z = standard_normals(seed, n, n_steps, 1, TRAIN, workers)
            part = simulate_particles(model, n, n_steps, 1, seed, normals=z)
            exact = simulate_coupled_exact(params, n, n_steps, seed, normals=z)
            acc += _lp_sup_error(part.states - exact.states, p)
        errors.append((acc / len(seeds)) ** (1.0 / p))
    return fit_rate(n_list, errors, p)


def euler_rate(model: Union[ModelSpec, ShimizuYamadaParams], delta_list: Sequence[float],
               n_particles: int = 256, seeds: Sequence[int] = tuple(range(20)),
               p: float = 2.0, workers: int = 1) -> RateReport:
    """Strong sup-error of Euler against a reference run on a grid 2x finer than
    the smallest step, sharing the Brownian path.

    The coarse Euler solution is held constant between its own grid points and
    compared with the reference at every reference grid point.
    """
    if isinstance(model, ShimizuYamadaParams):
        model = sy_model(model)
    deltas = sorted((float(d) for d in delta_list), reverse=True)
    if len(set(deltas)) < 4:
        raise ValueError("delta_list needs at least 4 distinct values")
    T = model.horizon
    d_ref = deltas[-1] / 2.0
    n_ref = int(round(T / d_ref))
    if not math.isclose(n_ref * d_ref, T):
        raise ValueError("reference step must divide the horizon")
    ratios = []
    for d in deltas:
        r = int(round(d / d_ref))
        if not math.isclose(r * d_ref, d) or n_ref % r:
            raise ValueError(f"step {d} is not a multiple of the reference step {d_ref}")
        ratios.append(r)

    m = model.brownian_dim
    acc = np.zeros(len(deltas))
    for seed in seeds:
        z = standard_normals(seed, n_particles, n_ref, m, TRAIN, workers)
        ref = simulate_particles(model, n_particles, n_ref, 1, seed, normals=z).states
        for k, r in enumerate(ratios):
            zc = z.reshape(n_particles, n_ref // r, r, m).sum(axis=2) / math.sqrt(r)
            coarse = simulate_particles(model, n_particles, n_ref // r, 1, seed, normals=zc)
            held = np.repeat(coarse.states[:, :-1], r, axis=1)
            held = np.concatenate([held, coarse.states[:, -1:]], axis=1)
            acc[k] += _lp_sup_error(held - ref, p)
    errors = list((acc / len(seeds)) ** (1.0 / p))
    # report in increasing step size
    return fit_rate(deltas[::-1], errors[::-1], p)
