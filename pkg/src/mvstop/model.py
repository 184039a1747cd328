"""McKean-Vlasov dynamics, reward specifications and the Shimizu-Yamada benchmark.

Kernels are vectorised numpy callables: ``drift_kernel(x, y)`` takes arrays of
shape ``(..., d)`` that broadcast against each other and returns ``(..., d)``;
``diff_kernel(x, y)`` returns ``(..., d, m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]
MeanField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelSpec:
    """Mean-field SDE ``dX = <a(X, .), mu> dt + <b(X, .), mu> dW`` started at a point mass.

    ``mean_field_drift`` / ``mean_field_diffusion`` are optional O(N) shortcuts
    mapping the full particle cloud ``(N, d)`` to the averaged coefficients
    ``(N, d)`` / ``(N, d, m)``. When absent the simulator falls back to the
    O(N^2) empirical average of the kernels.
    """

    dim: int
    drift_kernel: Kernel
    diff_kernel: Kernel
    brownian_dim: int
    initial_state: np.ndarray
    horizon: float
    mean_field_drift: Optional[MeanField] = None
    mean_field_diffusion: Optional[MeanField] = None
    sy_params: Optional["ShimizuYamadaParams"] = None

    def __post_init__(self):
        if self.dim < 1 or self.brownian_dim < 1:
            raise ValueError("dim and brownian_dim must be >= 1")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        x0 = np.asarray(self.initial_state, dtype=float).reshape(-1)
        if x0.shape != (self.dim,):
            raise ValueError(f"initial_state must have shape ({self.dim},)")
        object.__setattr__(self, "initial_state", x0)

    def averaged_drift(self, x: np.ndarray) -> np.ndarray:
        """(1/N) sum_j a(x_i, x_j) for every particle i."""
        if self.mean_field_drift is not None:
            return self.mean_field_drift(x)
        return _pairwise_mean(self.drift_kernel, x)

    def averaged_diffusion(self, x: np.ndarray) -> np.ndarray:
        if self.mean_field_diffusion is not None:
            return self.mean_field_diffusion(x)
        return _pairwise_mean(self.diff_kernel, x)


def _pairwise_mean(kernel: Kernel, x: np.ndarray, block: int = 256) -> np.ndarray:
    # rows are processed in blocks; each row's average runs over the same
    # canonical particle order, so the blocking never changes the result
    n = x.shape[0]
    out = None
    for start in range(0, n, block):
        xi = x[start:start + block, None, :]
        vals = kernel(xi, x[None, :, :])
        mean = vals.mean(axis=1)
        if out is None:
            out = np.empty((n,) + mean.shape[1:])
        out[start:start + block] = mean
    return out


@dataclass(frozen=True)
class RewardSpec:
    """Rewards ``g_j`` at exercise dates ``t_j = j T / num_dates``, ``j = 1..num_dates``.

    ``payoff(j, x)`` maps states ``(n, d)`` to ``(n,)``. Discounting, if any,
    lives inside the payoff. ``box`` is the compact region on which bound and
    Lipschitz metadata of unbounded payoffs are computed.
    """

    num_dates: int
    payoff: Callable[[int, np.ndarray], np.ndarray]
    horizon: float = 1.0
    payoff_bound: float = math.inf
    payoff_lipschitz: float = math.inf
    box: Optional[tuple[float, float]] = None
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_dates < 1:
            raise ValueError("num_dates must be >= 1")
        if self.payoff_bound < 0 or self.payoff_lipschitz < 0:
            raise ValueError("payoff bound and Lipschitz constant must be nonnegative")

    def time(self, j: int) -> float:
        return j * self.horizon / self.num_dates

    def __call__(self, j: int, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.payoff(j, np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class ShimizuYamadaParams:
    """``dX = (a E[X] - a X) dt + sigma dW``, ``X_0 = x0``; ``rate`` and ``strike`` feed the payoff."""

    a: float = 1.0
    sigma: float = 0.2
    x0: float = 1.0
    rate: float = 0.05
    strike: float = 0.1
    horizon: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"mean-reversion rate a must be positive, got {self.a}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if not self.strike > 0:
            raise ValueError(f"strike must be positive, got {self.strike}")
        if self.rate < 0:
            raise ValueError(f"rate must be nonnegative, got {self.rate}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def stationary_std(self) -> float:
        return self.sigma / math.sqrt(2.0 * self.a)

    def default_box(self, width: float = 6.0) -> tuple[float, float]:
        half = width * self.stationary_std
        if half == 0.0:
            half = 1.0
        return (self.x0 - half, self.x0 + half)


def sy_model(params: ShimizuYamadaParams) -> ModelSpec:
    """Particle form of the Shimizu-Yamada model with drift kernel ``a y - a x``."""
    a, sigma = params.a, params.sigma

    def drift_kernel(x, y):
        return a * y - a * x

    def diff_kernel(x, y):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y))
        return np.full(shape + (1,), sigma)

    def mean_field_drift(x):
        # separable kernel: the empirical average only needs the cloud mean
        return a * x.mean(axis=0, keepdims=True) - a * x

    def mean_field_diffusion(x):
        return np.full(x.shape + (1,), sigma)

    return ModelSpec(
        dim=1,
        drift_kernel=drift_kernel,
        diff_kernel=diff_kernel,
        brownian_dim=1,
        initial_state=np.array([params.x0]),
        horizon=params.horizon,
        mean_field_drift=mean_field_drift,
        mean_field_diffusion=mean_field_diffusion,
        sy_params=params,
    )


def sy_conditional_moments(params: ShimizuYamadaParams, s: float, t: float, xs):
    """Mean and variance of ``X_t`` given ``X_s = xs`` for the limit process."""
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    h = t - s
    decay = math.exp(-params.a * h)
    mean = decay * np.asarray(xs, dtype=float) + params.x0 * (1.0 - decay)
    # expm1 keeps the small-h variance accurate
    var = params.sigma ** 2 * (-math.expm1(-2.0 * params.a * h)) / (2.0 * params.a)
    if np.ndim(mean) == 0:
        mean = float(mean)
    return mean, var


def sy_exact_increment(params: ShimizuYamadaParams, s: float, t: float, xs, gauss):
    """Exact transition sample: conditional mean plus conditional std times ``gauss``."""
    mean, var = sy_conditional_moments(params, s, t, xs)
    return mean + math.sqrt(var) * np.asarray(gauss, dtype=float)


def sy_reward(params: ShimizuYamadaParams, num_dates: int, kind: str = "call",
              box: Optional[tuple[float, float]] = None) -> RewardSpec:
    """Discounted vanilla reward ``g_j(x) = exp(-r t_j) (x - K)^+`` (or the put analogue)."""
    if kind not in ("call", "put"):
        raise ValueError(f"payoff kind must be 'call' or 'put', got {kind!r}")
    r, strike, horizon = params.rate, params.strike, params.horizon
    if box is None:
        box = params.default_box()
    sign = 1.0 if kind == "call" else -1.0

    def payoff(j, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        t = j * horizon / num_dates
        return math.exp(-r * t) * np.maximum(sign * (x - strike), 0.0)

    lo, hi = box
    bound = max(sign * (lo - strike), sign * (hi - strike), 0.0)
    return RewardSpec(
        num_dates=num_dates,
        payoff=payoff,
        horizon=horizon,
        payoff_bound=bound,
        payoff_lipschitz=1.0,
        box=(float(lo), float(hi)),
        descriptor={"kind": kind, "strike": strike, "rate": r},
    )
