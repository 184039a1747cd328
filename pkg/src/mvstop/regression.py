"""Least squares with spectral diagnostics, and the perturbation laboratory."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg


class SingularFitError(np.linalg.LinAlgError):
    def __init__(self, lambda_min: float, lambda_max: float):
        super().__init__(f"design is rank deficient: lambda_min={lambda_min:.3e}, "
                         f"lambda_max={lambda_max:.3e}")
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max


@dataclass(frozen=True)
class FitReport:
    beta: np.ndarray
    lambda_min: float
    lambda_max: float
    cond_window_ok: bool
    n_samples: int
    truncation_level: float = math.inf
    ridge: bool = False

    def to_dict(self) -> dict:
        return {
            "beta": [float(b) for b in self.beta],
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "cond_window_ok": self.cond_window_ok,
            "n_samples": self.n_samples,
            "truncation_level": _json_float(self.truncation_level),
            "ridge": self.ridge,
        }


def _json_float(v: float):
    return None if math.isinf(v) else float(v)


def gram_eigen_range(design: np.ndarray) -> tuple[float, float]:
    """Extreme eigenvalues of ``Z^T Z`` with ``Z = design / sqrt(N)``."""
    n = design.shape[0]
    g = design.T @ design / n
    ev = np.linalg.eigvalsh(0.5 * (g + g.T))
    return float(ev[0]), float(ev[-1])


def fit_ls(design, targets, *, allow_ridge: bool = False, rank_tol: float = 1e-10,
           kappa_lo: float = 0.0, kappa_hi: float = math.inf,
           truncation_level: float = math.inf) -> FitReport:
    """QR least squares ``argmin_b ||targets - design b||``.

    A design whose scaled Gram matrix has ``lambda_min <= rank_tol * lambda_max``
    raises :class:`SingularFitError`, unless ``allow_ridge`` is set; then a
    ridge penalty of ``1e-8 * trace(Gram) / K`` is applied and flagged.
    """
    Z = np.asarray(design, dtype=float)
    y = np.asarray(targets, dtype=float)
    n, K = Z.shape
    if y.shape != (n,):
        raise ValueError("targets must be a vector matching the design rows")
    lmin, lmax = gram_eigen_range(Z)
    window = bool(kappa_lo <= lmin and lmax <= kappa_hi)
    if n >= K and lmin > rank_tol * lmax:
        q, r = np.linalg.qr(Z, mode="reduced")
        beta = scipy.linalg.solve_triangular(r, q.T @ y)
        return FitReport(beta, lmin, lmax, window, n, truncation_level, False)
    if not allow_ridge:
        raise SingularFitError(lmin, lmax)
    g = Z.T @ Z / n
    lam = 1e-8 * np.trace(g) / K
    if lam == 0.0:
        # all-zero design: the zero function is the only fit
        return FitReport(np.zeros(K), lmin, lmax, window, n, truncation_level, True)
    beta = scipy.linalg.solve(g + lam * np.eye(K), Z.T @ y / n, assume_a="pos")
    return FitReport(beta, lmin, lmax, window, n, truncation_level, True)


def truncate(value, M: float):
    """Clip to ``[-M, M]``."""
    if M < 0:
        raise ValueError("truncation level must be nonnegative")
    return np.clip(value, -M, M)


def operator_norm(A: np.ndarray) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    if min(A.shape) <= 200:
        return float(np.linalg.norm(A, 2))
    return _power_norm(A)


def _power_norm(A: np.ndarray, iters: int = 500, tol: float = 1e-12) -> float:
    v = np.ones(A.shape[1]) / math.sqrt(A.shape[1])
    s = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        s_new = math.sqrt(nw)
        if abs(s_new - s) <= tol * s_new:
            return s_new
        s = s_new
    return s


@dataclass(frozen=True)
class PerturbationCheck:
    condition_holds: bool
    bound: float
    actual: float

    @property
    def violated(self) -> bool:
        return self.condition_holds and self.actual > self.bound


def pinv_perturbation_check(Z, E, rho: float) -> PerturbationCheck:
    """Compare ``||(Z+E)^+ - Z^+||`` with the first-order bound
    ``(||E||/rho) (1 + (2||Z|| + 1)||Z|| / rho)``.

    The bound is only claimed when ``lambda_min(Z^T Z) - (2||Z|| + 1)||E|| > rho``
    and ``||E|| < 1``.
    """
    Z = np.asarray(Z, dtype=float)
    E = np.asarray(E, dtype=float)
    if Z.shape != E.shape:
        raise ValueError("Z and E must have the same shape")
    nz, ne = operator_norm(Z), operator_norm(E)
    lmin = float(np.linalg.eigvalsh(Z.T @ Z)[0])
    holds = bool(lmin - (2 * nz + 1) * ne > rho and ne < 1)
    bound = ne / rho * (1 + (2 * nz + 1) * nz / rho)
    actual = operator_norm(np.linalg.pinv(Z + E) - np.linalg.pinv(Z))
    return PerturbationCheck(holds, float(bound), actual)


def random_perturbation_instance(rng: np.random.Generator, n: int = 40, k: int = 5,
                                 lambda_floor: float = 2.0, rho: float = 0.5):
    """Gaussian ``Z`` rescaled so ``lambda_min(Z^T Z) >= lambda_floor``, and an
    ``E`` of random direction whose norm is a random fraction of the largest
    norm that still satisfies the perturbation condition for ``rho``."""
    Z = rng.standard_normal((n, k))
    lmin = np.linalg.eigvalsh(Z.T @ Z)[0]
    Z *= math.sqrt(lambda_floor / lmin) * (1.0 + rng.uniform())
    nz = np.linalg.norm(Z, 2)
    lmin = np.linalg.eigvalsh(Z.T @ Z)[0]
    e_max = min((lmin - rho) / (2 * nz + 1), 1.0)
    E = rng.standard_normal((n, k))
    E *= rng.uniform(0.01, 0.999) * e_max / np.linalg.norm(E, 2)
    return Z, E


def perturbation_suite(n_trials: int, seed: int, rho: float = 0.5, n: int = 40,
                       k: int = 5) -> list[PerturbationCheck]:
    children = np.random.SeedSequence(seed).spawn(n_trials)
    out = []
    for ss in children:
        Z, E = random_perturbation_instance(np.random.default_rng(ss), n, k, rho=rho)
        out.append(pinv_perturbation_check(Z, E, rho))
    return out


def perturbation_constants(lambda_min_sigma: float, lambda_max_sigma: float,
                           epsilon: Optional[float] = None,
                           rho: Optional[float] = None) -> tuple[float, float]:
    """Constants ``(c1, c2)`` of the coefficient perturbation bound
    ``||beta~ - beta|| <= c1 ||E|| ||V|| + c2 ||F||``.

    Leaving ``epsilon`` and ``rho`` unset selects ``lambda_min / 4`` for both.
    """
    if epsilon is None and rho is None:
        epsilon = rho = lambda_min_sigma / 4.0
    if epsilon is None or rho is None:
        raise ValueError("give both epsilon and rho, or neither")
    if not 0 < rho < lambda_min_sigma:
        raise ValueError(f"rho must lie in (0, lambda_min); got rho={rho}")
    if not 0 < epsilon < lambda_min_sigma - rho:
        raise ValueError(f"epsilon must lie in (0, lambda_min - rho); got epsilon={epsilon}")
    top = lambda_max_sigma + epsilon
    c1 = 1.0 / rho + (2.0 * top + math.sqrt(top)) / rho ** 2
    c2 = c1 + math.sqrt(top) / (lambda_min_sigma - epsilon)
    return c1, c2


def concentration_radius(M: float, d: int, delta: float, N: int, abs_const: float,
                         lambda_min: float, lambda_max: float) -> float:
    """Deviation ``eps_{delta,N}`` allowed for the extreme eigenvalues of the sample Gram."""
    return (M * math.sqrt(math.log(2 * d / delta) / (N * abs_const))
            * lambda_max ** 1.5 / lambda_min)


@dataclass(frozen=True)
class ConcentrationReport:
    exceedance_rate: float
    epsilon: float
    abs_const: float
    n_trials: int
    lambda_sigma: float
    max_deviation: float


def sphere_sample(rng: np.random.Generator, shape: tuple[int, ...], d: int,
                  radius: float) -> np.ndarray:
    x = rng.standard_normal(shape + (d,))
    return radius * x / np.linalg.norm(x, axis=-1, keepdims=True)


def concentration_experiment(d: int, N: int, M: float = 1.0, delta: float = 0.05,
                             abs_const: float = 1.0, n_trials: int = 500,
                             seed: int = 0) -> ConcentrationReport:
    """Frequency with which the sample Gram of N uniform points on the radius-M
    sphere has an extreme eigenvalue outside ``M^2/d -+ eps_{delta,N}``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lam = M * M / d
    lead = M * math.sqrt(math.log(2 * d / delta) / (N * abs_const))
    if lead > math.sqrt(lam):
        raise ValueError(f"sample size too small for the deviation bound: {lead:.4g} > "
                         f"sqrt(lambda_max)={math.sqrt(lam):.4g}")
    eps = concentration_radius(M, d, delta, N, abs_const, lam, lam)
    children = np.random.SeedSequence(seed).spawn(n_trials)
    hits = 0
    worst = 0.0
    for ss in children:
        X = sphere_sample(np.random.default_rng(ss), (N,), d, M)
        ev = np.linalg.eigvalsh(X.T @ X / N)
        worst = max(worst, ev[-1] - lam, lam - ev[0])
        hits += bool(ev[-1] > lam + eps or ev[0] < lam - eps)
    rate = hits / n_trials if n_trials else 0.0
    return ConcentrationReport(rate, eps, abs_const, n_trials, lam, float(worst))
