"""Backward regression over exercise dates, policy evaluation and dual upper bounds."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .basis import BasisSet
from .model import ModelSpec, RewardSpec, sy_conditional_moments
from .particles import (BATCH, INNER, TEST, ParticlePaths, particle_stream,
                        simulate_particles)
from .regression import FitReport, SingularFitError, fit_ls

MODES = ("prmc_ls", "tvr", "prmc_independent_batches")

BasisLike = Union[BasisSet, Callable[[int], BasisSet]]


class RegressionFailure(ValueError):
    def __init__(self, date: int, reason: str):
        super().__init__(f"regression at date {date} failed: {reason}")
        self.date = date


def _basis_at(basis: BasisLike) -> Callable[[int], BasisSet]:
    if isinstance(basis, BasisSet):
        return lambda j: basis
    return basis


@dataclass(frozen=True)
class Policy:
    """Continuation estimates ``C_j = T_M(psi_j . beta_j)`` for ``j < J``; ``C_J = 0``."""

    coefficients: dict
    basis: Callable[[int], BasisSet]
    truncation_level: Union[float, str]
    truncation: dict
    mode: str
    fit_reports: dict
    num_dates: int
    n_steps: int

    def continuation(self, j: int, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if j >= self.num_dates:
            return np.zeros(x.shape[0])
        raw = self.basis(j)(x) @ self.coefficients[j]
        M = self.truncation[j]
        return raw if math.isinf(M) else np.clip(raw, -M, M)

    def stopping(self, states: np.ndarray, rewards: RewardSpec):
        """First date with ``g_j >= C_j`` on each path of ``states`` ``(n, J + 1, d)``.

        Returns ``(tau, payoff)``; ``tau`` is always in ``1..J``.
        """
        J = self.num_dates
        n = states.shape[0]
        tau = np.full(n, J)
        pay = rewards(J, states[:, J])
        for j in range(J - 1, 0, -1):
            g = rewards(j, states[:, j])
            ex = g >= self.continuation(j, states[:, j])
            tau = np.where(ex, j, tau)
            pay = np.where(ex, g, pay)
        return tau, pay

    def to_dict(self) -> dict:
        tl = self.truncation_level
        return {
            "mode": self.mode,
            "truncation_level": tl if isinstance(tl, str) else float(tl),
            "num_dates": self.num_dates,
            "n_steps": self.n_steps,
            "basis": self.basis(1).descriptor if self.num_dates > 1 else {},
            "dates": [
                {
                    "date": j,
                    "coefficients": [float(b) for b in self.coefficients[j]],
                    "truncation": None if math.isinf(self.truncation[j]) else self.truncation[j],
                    "lambda_min": self.fit_reports[j].lambda_min,
                    "lambda_max": self.fit_reports[j].lambda_max,
                    "ridge": self.fit_reports[j].ridge,
                }
                for j in sorted(self.coefficients)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _resolve_truncation(level, targets: np.ndarray) -> float:
    if level == "auto":
        return float(np.max(np.abs(targets))) if targets.size else 0.0
    level = float(level)
    if level < 0:
        raise ValueError("truncation level must be >= 0 or 'auto'")
    return math.inf if level == 0 else level


def _fit_date(j, basis_at, z, y, level, itm_mask=None):
    basis = basis_at(j)
    design = basis(z)
    rows = slice(None) if itm_mask is None else itm_mask
    d, t = design[rows], y[rows]
    if d.shape[0] < basis.size:
        raise RegressionFailure(j, f"{d.shape[0]} samples for {basis.size} basis functions")
    M = _resolve_truncation(level, t)
    try:
        rep = fit_ls(d, t, allow_ridge=True, truncation_level=M)
    except SingularFitError as exc:
        raise RegressionFailure(j, str(exc)) from exc
    fitted = design @ rep.beta
    return rep, M, fitted if math.isinf(M) else np.clip(fitted, -M, M)


def _payoffs(states: np.ndarray, rewards: RewardSpec) -> np.ndarray:
    J = rewards.num_dates
    g = np.zeros(states.shape[:2])
    for j in range(1, J + 1):
        g[:, j] = rewards(j, states[:, j])
    return g


def _check_paths(paths: ParticlePaths, rewards: RewardSpec):
    if paths.n_dates != rewards.num_dates:
        raise ValueError(f"paths carry {paths.n_dates} dates, rewards {rewards.num_dates}")


def _backward(paths: ParticlePaths, rewards: RewardSpec, basis: BasisLike,
              truncation_level, target: str, itm_only: bool) -> Policy:
    _check_paths(paths, rewards)
    basis_at = _basis_at(basis)
    Z = paths.at_dates()
    J = rewards.num_dates
    G = _payoffs(Z, rewards)
    cash = G[:, J].copy()
    next_value = G[:, J].copy()     # max(g_{j+1}, C_{j+1}) at Z_{j+1}
    coefs, trunc, reports = {}, {}, {}
    for j in range(J - 1, 0, -1):
        y = cash if target == "ls" else next_value
        mask = G[:, j] > 0 if itm_only else None
        rep, M, C = _fit_date(j, basis_at, Z[:, j], y, truncation_level, mask)
        coefs[j], trunc[j], reports[j] = rep.beta, M, rep
        ex = G[:, j] >= C
        cash = np.where(ex, G[:, j], cash)
        next_value = np.maximum(G[:, j], C)
    mode = "prmc_ls" if target == "ls" else "tvr"
    return Policy(coefs, basis_at, truncation_level, trunc, mode, reports, J, paths.n_steps)


def prmc_backward(paths: ParticlePaths, rewards: RewardSpec, basis: BasisLike,
                  truncation_level: Union[float, str] = "auto", *,
                  itm_only: bool = False) -> Policy:
    """Longstaff-Schwartz regression of realised cash flows on all particles.

    ``truncation_level``: ``"auto"`` clips each date's fit at the largest
    observed absolute cash flow, ``0`` disables clipping, a positive number is
    used as is.
    """
    return _backward(paths, rewards, basis, truncation_level, "ls", itm_only)


def tvr_backward(paths: ParticlePaths, rewards: RewardSpec, basis: BasisLike,
                 truncation_level: Union[float, str] = "auto", *,
                 itm_only: bool = False) -> Policy:
    """Regress ``max(g_{j+1}, C_{j+1})`` at the next date instead of realised cash flows."""
    return _backward(paths, rewards, basis, truncation_level, "tvr", itm_only)


def prmc_independent_batches(model: ModelSpec, rewards: RewardSpec, basis: BasisLike,
                             n_per_batch: int, seed: int, *, n_steps: Optional[int] = None,
                             truncation_level: Union[float, str] = "auto",
                             simulate: Optional[Callable[..., ParticlePaths]] = None,
                             workers: int = 1) -> Policy:
    """Backward regression where date j is fitted on its own particle system.

    Cash flows on batch j follow the rules already fitted for dates
    ``j+1..J-1``, so date-j coefficients depend on batches ``j..J-1`` only.
    """
    J = rewards.num_dates
    n_steps = n_steps or 10 * J
    basis_at = _basis_at(basis)
    if simulate is None:
        def simulate(n, seed_, purpose):
            return simulate_particles(model, n, n_steps, J, seed_, purpose=purpose,
                                      workers=workers)
    coefs, trunc, reports = {}, {}, {}
    partial = Policy(coefs, basis_at, truncation_level, trunc, "prmc_independent_batches",
                     reports, J, n_steps)
    for j in range(J - 1, 0, -1):
        Z = simulate(n_per_batch, seed, BATCH + j).at_dates()
        cash = rewards(J, Z[:, J])
        for l in range(J - 1, j, -1):
            g = rewards(l, Z[:, l])
            cash = np.where(g >= partial.continuation(l, Z[:, l]), g, cash)
        rep, M, _ = _fit_date(j, basis_at, Z[:, j], cash, truncation_level)
        coefs[j], trunc[j], reports[j] = rep.beta, M, rep
    return partial


@dataclass(frozen=True)
class BoundsEstimate:
    lower: float
    lower_se: float
    upper: float
    upper_se: float
    n_test: int
    n_inner: int
    extra: dict = field(default_factory=dict)

    def cell(self, digits: int = 4) -> str:
        f = f"{{:.{digits}f}}"
        return (f"[{f.format(self.lower)}({f.format(self.lower_se)}), "
                f"{f.format(self.upper)}({f.format(self.upper_se)})]")


def format_estimate(value: float, se: float, digits: int = 4) -> str:
    return f"{value:.{digits}f}({se:.{digits}f})"


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    n = samples.size
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def fresh_test_paths(policy: Policy, model: ModelSpec, n_test: int, seed: int,
                     n_steps: Optional[int] = None, workers: int = 1) -> ParticlePaths:
    """A new particle system of size ``n_test`` on its own random streams."""
    return simulate_particles(model, n_test, n_steps or policy.n_steps, policy.num_dates,
                              seed, purpose=TEST, workers=workers)


def evaluate_lower(policy: Policy, model: ModelSpec, rewards: RewardSpec, n_test: int,
                   seed: int, *, test_paths: Optional[ParticlePaths] = None,
                   n_steps: Optional[int] = None, workers: int = 1) -> tuple[float, float]:
    """Mean reward under the policy's stopping rule on fresh paths, with its standard error."""
    if test_paths is None:
        test_paths = fresh_test_paths(policy, model, n_test, seed, n_steps, workers)
    _check_paths(test_paths, rewards)
    _, pay = policy.stopping(test_paths.at_dates(), rewards)
    return _mean_se(pay)


def _inner_samples(model: ModelSpec, test_paths: ParticlePaths, j: int, n_inner: int,
                   normals: np.ndarray, measure_size: int) -> np.ndarray:
    """One-date-ahead conditional samples from every ``Z_{j-1}``; shape ``(n, n_inner, d)``."""
    Z = test_paths.at_dates()
    J = test_paths.n_dates
    prev = Z[:, j - 1]
    if model.sy_params is not None:
        p = model.sy_params
        dt = model.horizon / J
        mean, var = sy_conditional_moments(p, 0.0, dt, prev[:, 0])
        return (mean[:, None] + math.sqrt(var) * normals[:, :, 0, 0])[:, :, None]
    # generic dynamics: Euler sub-steps against the frozen empirical measure of
    # the test system itself, restricted to its first ``measure_size`` particles
    spd = test_paths.n_steps // J
    dt = model.horizon / test_paths.n_steps
    n, d = prev.shape
    x = np.repeat(prev, n_inner, axis=0)
    start = test_paths.exercise_index[j - 1]
    for s in range(spd):
        cloud = test_paths.states[:measure_size, start + s, :]
        drift = model.drift_kernel(x[:, None, :], cloud[None, :, :]).mean(axis=1)
        diff = model.diff_kernel(x[:, None, :], cloud[None, :, :]).mean(axis=1)
        dw = normals[:, :, s, :].reshape(n * n_inner, -1) * math.sqrt(dt)
        x = x + drift * dt + np.einsum("ndm,nm->nd", diff, dw)
    return x.reshape(n, n_inner, d)


def dual_martingale(policy: Policy, model: ModelSpec, rewards: RewardSpec,
                    test_paths: ParticlePaths, n_inner: int, seed: int,
                    measure_size: int = 64):
    """Per-path dual quantities.

    Returns ``(samples, martingale, rewards_matrix)`` where ``samples[r] =
    max_j (g_j - M_j)`` and the martingale increments are
    ``V_j(Z_j) - mean_inner V_j(Z'_j)`` with ``V_j = max(g_j, C_j)``.
    """
    if n_inner < 2:
        raise ValueError("n_inner must be >= 2")
    _check_paths(test_paths, rewards)
    Z = test_paths.at_dates()
    J = rewards.num_dates
    n = Z.shape[0]
    spd = 1 if model.sy_params is not None else test_paths.n_steps // J
    m = model.brownian_dim
    normals = np.empty((n, J, n_inner, spd, m))
    for r in range(n):
        normals[r] = particle_stream(seed, r, INNER).standard_normal((J, n_inner, spd, m))

    def vhat(j, x):
        return np.maximum(rewards(j, x), policy.continuation(j, x))

    G = _payoffs(Z, rewards)
    mart = np.zeros((n, J + 1))
    for j in range(1, J + 1):
        inner = _inner_samples(model, test_paths, j, n_inner, normals[:, j - 1], measure_size)
        d = inner.shape[2]
        vin = vhat(j, inner.reshape(n * n_inner, d)).reshape(n, n_inner)
        mart[:, j] = mart[:, j - 1] + vhat(j, Z[:, j]) - vin.mean(axis=1)
    samples = np.max(G[:, 1:] - mart[:, 1:], axis=1)
    return samples, mart, G


def evaluate_dual_upper(policy: Policy, model: ModelSpec, rewards: RewardSpec, n_test: int,
                        n_inner: int, seed: int, *,
                        test_paths: Optional[ParticlePaths] = None,
                        n_steps: Optional[int] = None, workers: int = 1) -> tuple[float, float]:
    """High-biased estimate ``mean_r max_j (g_j - M_j)`` with nested inner sampling."""
    if n_inner < 2:
        raise ValueError("n_inner must be >= 2")
    if test_paths is None:
        test_paths = fresh_test_paths(policy, model, n_test, seed, n_steps, workers)
    samples, _, _ = dual_martingale(policy, model, rewards, test_paths, n_inner, seed)
    return _mean_se(samples)


def estimate_bounds(policy: Policy, model: ModelSpec, rewards: RewardSpec, n_test: int,
                    n_inner: int, seed: int, *, test_paths: Optional[ParticlePaths] = None,
                    workers: int = 1) -> BoundsEstimate:
    """Lower and dual upper bound on one shared set of test paths."""
    if test_paths is None:
        test_paths = fresh_test_paths(policy, model, n_test, seed, workers=workers)
    lo, lo_se = evaluate_lower(policy, model, rewards, n_test, seed, test_paths=test_paths)
    up, up_se = evaluate_dual_upper(policy, model, rewards, n_test, n_inner, seed,
                                    test_paths=test_paths)
    return BoundsEstimate(lo, lo_se, up, up_se, test_paths.n_particles, n_inner)
