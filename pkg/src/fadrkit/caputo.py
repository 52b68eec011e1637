"""L1 discretisation of the Caputo derivative.

Weights are stored in *lag order*: ``weights[j]`` multiplies the increment
``u(t_{n-j}) - u(t_{n-j-1})`` counted back from the newest time ``t_n``. The
discrete derivative at ``t_n`` is then

    scale / Gamma(2 - alpha) * sum_j weights[j] * (u_{n-j} - u_{n-j-1})

On a uniform grid ``weights[j] = (j+1)**(1-alpha) - j**(1-alpha)`` and
``scale = dt**(-alpha)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AdaptiveConfig",
    "DegenerateNormWarning",
    "L1History",
    "L1Weights",
    "adapt_step",
    "caputo_apply",
    "caputo_split",
    "l1_weights_nonuniform",
    "l1_weights_uniform",
    "relative_change",
]

logger = logging.getLogger(__name__)


class DegenerateNormWarning(RuntimeWarning):
    """The reference field of the step-size controller has zero norm."""


def _check_alpha(alpha: float) -> None:
    # alpha = 1 is admitted: the sum collapses to a backward difference
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"fractional order must lie in (0, 1]: {alpha!r}")


def _power_increment(base: np.ndarray, step: np.ndarray, p: float) -> np.ndarray:
    """``(base + step)**p - base**p`` without cancellation for ``base > 0``."""
    out = np.empty_like(base, dtype=float)
    pos = base > 0
    b = base[pos]
    out[pos] = b**p * np.expm1(p * np.log1p(step[pos] / b))
    out[~pos] = step[~pos] ** p
    return out


@dataclass(frozen=True)
class L1Weights:
    alpha: float
    weights: np.ndarray
    grid: np.ndarray
    scale: float = 1.0

    @property
    def n(self) -> int:
        return len(self.weights)


def l1_weights_uniform(alpha: float, n: int, dt: float = 1.0) -> L1Weights:
    """Uniform-grid L1 weights ``r_j = (j+1)^(1-alpha) - j^(1-alpha)``, ``j < n``."""
    _check_alpha(alpha)
    if n < 1:
        raise ValueError(f"need at least one interval: n={n}")
    if not dt > 0:
        raise ValueError(f"dt must be positive: {dt!r}")
    j = np.arange(n, dtype=float)
    w = _power_increment(j, np.ones(n), 1.0 - alpha)
    return L1Weights(alpha, w, dt * np.arange(n + 1, dtype=float), dt ** (-alpha))


def l1_weights_nonuniform(alpha: float, grid) -> L1Weights:
    """L1 weights on an arbitrary increasing time grid.

    Each subinterval ``[t_k, t_{k+1}]`` contributes the exact integral of the
    kernel ``(t_n - s)^(-alpha)`` against the piecewise-linear interpolant of
    ``u``. The weights are normalised by the newest step ``tau`` so that on
    a uniform grid they coincide with :func:`l1_weights_uniform` and
    ``scale = tau**(-alpha)``.
    """
    _check_alpha(alpha)
    t = np.asarray(grid, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise ValueError("grid needs at least two time stamps")
    tau = np.diff(t)
    if np.any(tau <= 0):
        raise ValueError("grid must be strictly increasing")
    p = 1.0 - alpha
    # lag order: interval k = n-1-j
    tau_lag = tau[::-1]
    dist = t[-1] - t[1:][::-1]  # t_n - t_{k+1}
    dist[0] = 0.0
    integral = _power_increment(dist, tau_lag, p)
    ref = tau_lag[0]
    w = integral / tau_lag * ref**alpha
    return L1Weights(alpha, w, t.copy(), ref ** (-alpha))


class L1History:
    """Dense, append-only record of past snapshots of one field.

    Storage grows geometrically, so appending is amortised O(size of field).
    """

    def __init__(self, t0: float, u0, capacity: int = 64):
        u0 = np.asarray(u0, dtype=float)
        self.shape = u0.shape
        self._times = np.empty(max(capacity, 2))
        self._data = np.empty((max(capacity, 2),) + self.shape)
        self._n = 0
        self.append(t0, u0)

    def __len__(self) -> int:
        return self._n

    def append(self, t: float, u) -> None:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise ValueError(f"snapshot shape {u.shape} != history shape {self.shape}")
        if self._n and not t > self._times[self._n - 1]:
            raise ValueError(
                f"time stamps must increase: {t!r} after {self._times[self._n - 1]!r}"
            )
        if self._n == len(self._times):
            cap = 2 * len(self._times)
            self._times = np.resize(self._times, cap)
            data = np.empty((cap,) + self.shape)
            data[: self._n] = self._data[: self._n]
            self._data = data
        self._times[self._n] = t
        self._data[self._n] = u
        self._n += 1

    @property
    def times(self) -> np.ndarray:
        return self._times[: self._n]

    @property
    def values(self) -> np.ndarray:
        return self._data[: self._n]

    @property
    def latest(self) -> np.ndarray:
        return self._data[self._n - 1]

    @property
    def t(self) -> float:
        return float(self._times[self._n - 1])

    def weights_for(self, t_new: float, alpha: float) -> L1Weights:
        """Weights for advancing the history to ``t_new``."""
        return l1_weights_nonuniform(alpha, np.append(self.times, t_new))


def _check_consistent(history: L1History, weights: L1Weights) -> None:
    if weights.n != len(history):
        raise ValueError(
            f"weights cover {weights.n} intervals but history holds {len(history)} snapshots"
        )
    t = history.times
    g = weights.grid[:-1]
    if not np.allclose(t, g, rtol=1e-10, atol=1e-12 * max(1.0, abs(g[-1]))):
        raise ValueError("weights were built for a different time grid")


def caputo_split(history: L1History, weights: L1Weights) -> tuple[float, np.ndarray]:
    """Split the discrete derivative at the new time into ``diag * u_new + known``.

    ``diag`` is the coefficient of the (still unknown) newest value and
    ``known`` collects every term that involves stored snapshots only.
    """
    _check_consistent(history, weights)
    w = weights.weights
    n = weights.n
    c = weights.scale / math.gamma(2.0 - weights.alpha)
    # snapshot k (k < n) enters with +w[n-k] (as the later end) and -w[n-k-1]
    coef = np.empty(n)
    coef[0] = 0.0
    coef[1:] = w[n - 1 : 0 : -1]
    coef -= w[::-1]
    known = np.tensordot(coef, history.values, axes=(0, 0))
    return c * w[0], c * known


def caputo_apply(history: L1History, weights: L1Weights, current) -> np.ndarray:
    """Discrete Caputo derivative at the newest time ``weights.grid[-1]``."""
    current = np.asarray(current, dtype=float)
    if current.shape != history.shape:
        raise ValueError(f"current shape {current.shape} != history shape {history.shape}")
    diag, known = caputo_split(history, weights)
    return diag * current + known


@dataclass(frozen=True)
class AdaptiveConfig:
    delta: float = 1.0e-3
    dt_min: float = 1.0e-3
    dt_max: float = 1.6e-2
    growth_factor: float = 2.0

    def __post_init__(self) -> None:
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError(f"need 0 < dt_min <= dt_max, got {self.dt_min}, {self.dt_max}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive: {self.delta!r}")
        if self.growth_factor != 2.0:
            raise ValueError("step growth is fixed at a factor of 2")


def relative_change(u_new, u_old) -> float:
    """``||u_new - u_old||_2 / ||u_old||_2`` (``inf`` when ``u_old`` vanishes)."""
    u_new = np.asarray(u_new, dtype=float)
    u_old = np.asarray(u_old, dtype=float)
    den = np.linalg.norm(u_old)
    if den == 0.0:
        return math.inf
    return float(np.linalg.norm(u_new - u_old) / den)


def adapt_step(u_new, u_old, cfg: AdaptiveConfig, dt: float) -> float:
    """Double ``dt`` when the solution has relaxed below ``cfg.delta``.

    The result never leaves ``[cfg.dt_min, cfg.dt_max]``.
    """
    dt = min(max(dt, cfg.dt_min), cfg.dt_max)
    if np.linalg.norm(np.asarray(u_old, dtype=float)) == 0.0:
        warnings.warn(
            "reference field has zero l2 norm; step size left unchanged",
            DegenerateNormWarning,
            stacklevel=2,
        )
        return dt
    change = relative_change(u_new, u_old)
    grown = cfg.growth_factor * dt
    if change < cfg.delta and grown <= cfg.dt_max * (1.0 + 1e-12):
        logger.debug("relative change %.3e < %.3e: dt %.4g -> %.4g", change, cfg.delta, dt, grown)
        return min(grown, cfg.dt_max)
    return dt
