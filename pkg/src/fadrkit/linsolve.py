"""Matrix-free Gauss-Seidel for five-point block-tridiagonal systems.

The operator acting on the unknown nodes of a :class:`~fadrkit.grid_stencil.Grid2D`
is

    (A x)_ij = R_ij x_ij + r1_ij (x_{i-1,j} + x_{i+1,j}) + r2_ij (x_{i,j-1} + x_{i,j+1})

Ordered with ``x`` fastest inside each ``y`` row it is the block matrix with
``Tridiag(r1, R, r1)`` diagonal blocks and ``Diag(r2)`` couplings. Edge nodes
are handled without assembling anything:

* Dirichlet nodes are fixed data taken from the initial guess;
* periodic directions wrap, the last node mirrors the first;
* zero-flux Neumann nodes are eliminated through ``x_0 = (4 x_1 - x_2) / 3``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numba as nb
import numpy as np

from .grid_stencil import EDGES, Grid2D

__all__ = [
    "BlockDiagSpec",
    "ConvergenceError",
    "GSConfig",
    "GSResult",
    "apply_operator",
    "gauss_seidel",
    "residual",
]

logger = logging.getLogger(__name__)

_CODES = {"dirichlet": 0, "neumann": 1, "periodic": 2}


class ConvergenceError(RuntimeError):
    """Gauss-Seidel ran out of sweeps; carries the last iterate and residual."""

    def __init__(self, message: str, x: np.ndarray, residual: float, iterations: int):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class GSConfig:
    rel_tol: float = 1.0e-8
    max_iters: int | None = None
    # sweeps between residual evaluations
    check_every: int = 4

    def __post_init__(self) -> None:
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be positive: {self.rel_tol!r}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1: {self.max_iters!r}")
        if self.check_every < 1:
            raise ValueError(f"check_every must be >= 1: {self.check_every!r}")


class GSResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True, eq=False)
class BlockDiagSpec:
    """Coefficients of the five-point operator plus the edge treatment.

    ``r1``, ``r2`` and ``R`` may be scalars or ``(nx, ny)`` arrays.
    """

    r1: float | np.ndarray
    r2: float | np.ndarray
    R: float | np.ndarray
    nx: int
    ny: int
    bc: tuple[str, str, str, str] = ("dirichlet",) * 4

    def __post_init__(self) -> None:
        bc = tuple(self.bc)
        if len(bc) != 4 or any(k not in _CODES for k in bc):
            raise ValueError(f"bc must be four kinds from {tuple(_CODES)}: {bc}")
        object.__setattr__(self, "bc", bc)
        shape = (self.nx, self.ny)
        for name in ("r1", "r2", "R"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim and a.shape != shape:
                raise ValueError(f"{name} has shape {a.shape}, expected scalar or {shape}")
        dom = np.abs(self.R) - np.abs(2.0 * np.asarray(self.r1) + 2.0 * np.asarray(self.r2))
        if np.any(dom < -1e-12 * np.maximum(1.0, np.abs(self.R))):
            raise ValueError("operator is not row diagonally dominant")

    @classmethod
    def from_grid(cls, grid: Grid2D, r1, r2, R) -> BlockDiagSpec:
        return cls(r1, r2, R, grid.nx, grid.ny, tuple(grid.bc[e] for e in EDGES))

    @classmethod
    def poisson(cls, grid: Grid2D) -> BlockDiagSpec:
        """Five-point Laplacian: ``r1 = dx^-2``, ``r2 = dy^-2``, ``R = -2 (r1 + r2)``."""
        r1 = grid.dx ** -2
        r2 = grid.dy ** -2
        return cls.from_grid(grid, r1, r2, -2.0 * (r1 + r2))

    @classmethod
    def implicit_diffusion(cls, grid: Grid2D, coef, mass) -> BlockDiagSpec:
        """``mass * x - coef * lap(x)``, the implicit half of a theta step.

        With ``coef = nu * theta`` and ``mass = Re dt^-alpha / Gamma(2 - alpha)``
        this is the vorticity-equation operator.
        """
        r1 = -np.asarray(coef, dtype=float) * grid.dx ** -2
        r2 = -np.asarray(coef, dtype=float) * grid.dy ** -2
        R = -2.0 * (r1 + r2) + np.asarray(mass, dtype=float)
        return cls.from_grid(grid, r1, r2, R)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        shape = self.shape
        full = lambda a: np.ascontiguousarray(np.broadcast_to(np.asarray(a, float), shape))
        codes = np.array([_CODES[k] for k in self.bc], dtype=np.int64)
        return full(self.r1), full(self.r2), full(self.R), codes

    def unknown_mask(self) -> np.ndarray:
        m = np.ones(self.shape, dtype=bool)
        west, east, south, north = self.bc
        if west == "periodic":
            m[-1, :] = False
        else:
            m[0, :] = m[-1, :] = False
        if south == "periodic":
            m[:, -1] = False
        else:
            m[:, 0] = m[:, -1] = False
        return m


# {{{ kernels

_jit = nb.njit(cache=True, nogil=True)


@_jit
def _refresh_edges(x, codes):
    nx, ny = x.shape
    # codes: west, east, south, north
    if codes[0] == 2:
        for j in range(ny):
            x[nx - 1, j] = x[0, j]
    else:
        if codes[0] == 1:
            for j in range(ny):
                x[0, j] = (4.0 * x[1, j] - x[2, j]) / 3.0
        if codes[1] == 1:
            for j in range(ny):
                x[nx - 1, j] = (4.0 * x[nx - 2, j] - x[nx - 3, j]) / 3.0
    if codes[2] == 2:
        for i in range(nx):
            x[i, ny - 1] = x[i, 0]
    else:
        if codes[2] == 1:
            for i in range(nx):
                x[i, 0] = (4.0 * x[i, 1] - x[i, 2]) / 3.0
        if codes[3] == 1:
            for i in range(nx):
                x[i, ny - 1] = (4.0 * x[i, ny - 2] - x[i, ny - 3]) / 3.0


@_jit
def _stencil(r1, r2, R, codes):
    """Effective per-node coefficients after folding in the edge treatment.

    Returns the diagonal, the west/east/south/north neighbour weights and the
    neighbour index tables. A zero-flux Neumann neighbour
    ``x_0 = (4 x_1 - x_2) / 3`` moves ``4/3`` of its weight onto the diagonal
    and ``-1/3`` onto the node across.
    """
    nx, ny = R.shape
    d = R.copy()
    cw = r1.copy()
    ce = r1.copy()
    cs = r2.copy()
    cn = r2.copy()
    iw = np.empty(nx, np.int64)
    ie = np.empty(nx, np.int64)
    js = np.empty(ny, np.int64)
    jn = np.empty(ny, np.int64)
    for i in range(nx):
        iw[i] = i - 1
        ie[i] = i + 1
    for j in range(ny):
        js[j] = j - 1
        jn[j] = j + 1
    if codes[0] == 2:
        iw[0] = nx - 2
        ie[nx - 2] = 0
    else:
        for j in range(ny):
            if codes[0] == 1:
                d[1, j] += 4.0 * r1[1, j] / 3.0
                ce[1, j] -= r1[1, j] / 3.0
                cw[1, j] = 0.0
            if codes[1] == 1:
                d[nx - 2, j] += 4.0 * r1[nx - 2, j] / 3.0
                cw[nx - 2, j] -= r1[nx - 2, j] / 3.0
                ce[nx - 2, j] = 0.0
    if codes[2] == 2:
        js[0] = ny - 2
        jn[ny - 2] = 0
    else:
        for i in range(nx):
            if codes[2] == 1:
                d[i, 1] += 4.0 * r2[i, 1] / 3.0
                cn[i, 1] -= r2[i, 1] / 3.0
                cs[i, 1] = 0.0
            if codes[3] == 1:
                d[i, ny - 2] += 4.0 * r2[i, ny - 2] / 3.0
                cs[i, ny - 2] -= r2[i, ny - 2] / 3.0
                cn[i, ny - 2] = 0.0
    return d, cw, ce, cs, cn, iw, ie, js, jn


@_jit
def _ranges(shape, codes):
    nx, ny = shape
    i0 = 0 if codes[0] == 2 else 1
    j0 = 0 if codes[2] == 2 else 1
    return i0, nx - 1, j0, ny - 1


@_jit
def _residual_norm(x, rhs, st, codes):
    d, cw, ce, cs, cn, iw, ie, js, jn = st
    i0, i1, j0, j1 = _ranges(x.shape, codes)
    s = 0.0
    for j in range(j0, j1):
        for i in range(i0, i1):
            r = (
                rhs[i, j]
                - d[i, j] * x[i, j]
                - cw[i, j] * x[iw[i], j]
                - ce[i, j] * x[ie[i], j]
                - cs[i, j] * x[i, js[j]]
                - cn[i, j] * x[i, jn[j]]
            )
            s += r * r
    return math.sqrt(s)


@_jit
def _apply(x, st, codes, out):
    d, cw, ce, cs, cn, iw, ie, js, jn = st
    i0, i1, j0, j1 = _ranges(x.shape, codes)
    for j in range(j0, j1):
        for i in range(i0, i1):
            out[i, j] = (
                d[i, j] * x[i, j]
                + cw[i, j] * x[iw[i], j]
                + ce[i, j] * x[ie[i], j]
                + cs[i, j] * x[i, js[j]]
                + cn[i, j] * x[i, jn[j]]
            )


@_jit
def _sweep(x, rhs, st, codes):
    d, cw, ce, cs, cn, iw, ie, js, jn = st
    i0, i1, j0, j1 = _ranges(x.shape, codes)
    for j in range(j0, j1):
        for i in range(i0, i1):
            x[i, j] = (
                rhs[i, j]
                - cw[i, j] * x[iw[i], j]
                - ce[i, j] * x[ie[i], j]
                - cs[i, j] * x[i, js[j]]
                - cn[i, j] * x[i, jn[j]]
            ) / d[i, j]
    _refresh_edges(x, codes)


@_jit
def _gs_solve(x, rhs, st, codes, tol_abs, max_iters, check_every, history):
    res = _residual_norm(x, rhs, st, codes)
    history[0] = res
    it = 0
    while res > tol_abs and it < max_iters:
        for _ in range(check_every):
            _sweep(x, rhs, st, codes)
            it += 1
            if it >= max_iters:
                break
        res = _residual_norm(x, rhs, st, codes)
        if it < history.shape[0]:
            history[it] = res
    return it, res


# }}}


def _prepare(spec: BlockDiagSpec, x, rhs):
    x = np.array(x, dtype=float, copy=True)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if x.shape != spec.shape or rhs.shape != spec.shape:
        raise ValueError(
            f"field shapes {x.shape}, {rhs.shape} do not match operator {spec.shape}"
        )
    return x, rhs


def _compile(spec: BlockDiagSpec):
    r1, r2, R, codes = spec.arrays()
    return _stencil(r1, r2, R, codes), codes


def _boundary_only(spec: BlockDiagSpec, x: np.ndarray, codes: np.ndarray) -> np.ndarray:
    xb = np.where(spec.unknown_mask(), 0.0, x)
    _refresh_edges(xb, codes)
    return xb


def apply_operator(spec: BlockDiagSpec, x) -> np.ndarray:
    """``A x`` on the unknown nodes (zeros elsewhere), edge data taken from ``x``."""
    st, codes = _compile(spec)
    x = np.array(x, dtype=float, copy=True)
    _refresh_edges(x, codes)
    out = np.zeros(spec.shape)
    _apply(x, st, codes, out)
    return out


def _rhs_norm(spec, x, rhs, st, codes) -> float:
    return _residual_norm(_boundary_only(spec, x, codes), rhs, st, codes)


def residual(spec: BlockDiagSpec, x, rhs) -> float:
    """Relative l2 residual ``||b - A x|| / ||b - A x_0||`` over the unknowns.

    ``x_0`` keeps the edge data of ``x`` and zeroes the unknowns, so the
    denominator is the norm of the effective right-hand side.
    """
    x, rhs = _prepare(spec, x, rhs)
    st, codes = _compile(spec)
    _refresh_edges(x, codes)
    den = _rhs_norm(spec, x, rhs, st, codes)
    num = _residual_norm(x, rhs, st, codes)
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def gauss_seidel(
    spec: BlockDiagSpec,
    rhs,
    initial_guess,
    cfg: GSConfig | None = None,
    residual_log: list | None = None,
) -> GSResult:
    """Solve ``A x = rhs`` by lexicographic Gauss-Seidel sweeps.

    Parameters
    ----------
    spec : BlockDiagSpec
        Operator coefficients and edge kinds.
    rhs : ndarray
        Right-hand side on the full grid; only unknown nodes are read.
    initial_guess : ndarray
        Starting iterate. Its Dirichlet edge values are the boundary data.
    cfg : GSConfig, optional
        Tolerance on the relative residual (see :func:`residual`) and sweep cap
        (default ``10 * nx * ny``).
    residual_log : list, optional
        If given, receives the relative residual before the first sweep and
        after every sweep.

    Raises
    ------
    ConvergenceError
        If the tolerance is not met within ``max_iters`` sweeps.
    """
    cfg = cfg or GSConfig()
    max_iters = cfg.max_iters or 10 * spec.nx * spec.ny
    x, rhs = _prepare(spec, initial_guess, rhs)
    st, codes = _compile(spec)
    _refresh_edges(x, codes)
    den = _rhs_norm(spec, x, rhs, st, codes)
    if den == 0.0:
        if residual_log is not None:
            residual_log.append(0.0)
        return GSResult(_boundary_only(spec, x, codes), 0, 0.0)

    if residual_log is not None:
        history = np.full(max_iters + 1, np.nan)
        check_every = 1
    else:
        history = np.full(1, np.nan)
        check_every = cfg.check_every
    it, res = _gs_solve(x, rhs, st, codes, cfg.rel_tol * den, max_iters, check_every, history)
    if residual_log is not None:
        residual_log.extend((history[: it + 1] / den).tolist())
    rel = res / den
    if not np.isfinite(rel) or rel > cfg.rel_tol:
        raise ConvergenceError(
            f"Gauss-Seidel stopped after {it} sweeps with relative residual {rel:.3e} "
            f"(tolerance {cfg.rel_tol:.1e})",
            x,
            rel,
            it,
        )
    logger.debug("Gauss-Seidel converged in %d sweeps (residual %.2e)", it, rel)
    return GSResult(x, it, rel)
