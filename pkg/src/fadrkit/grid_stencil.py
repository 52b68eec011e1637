"""Structured 2D grids and the finite-difference operators used by the solvers.

Fields are plain ``numpy`` arrays of shape ``(nx, ny)``: axis 0 runs along
``x``, axis 1 along ``y``. Grids are node based and include the boundary
nodes. A periodic direction repeats its first node as the last one, so for
``nx`` points only ``nx - 1`` are distinct.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

__all__ = [
    "EDGES",
    "Grid2D",
    "advect_uds",
    "apply_bc",
    "ddx",
    "ddy",
    "laplacian_cds",
    "upwind_q",
]

EDGES = ("west", "east", "south", "north")
_KINDS = ("periodic", "dirichlet", "neumann")
_AXIS_EDGES = {0: ("west", "east"), 1: ("south", "north")}
MIN_POINTS = 5


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    bc: Mapping[str, str] = field(
        default_factory=lambda: {e: "dirichlet" for e in EDGES}
    )

    def __post_init__(self) -> None:
        if self.nx < MIN_POINTS or self.ny < MIN_POINTS:
            raise ValueError(
                f"grid needs at least {MIN_POINTS} points per axis: {self.nx}x{self.ny}"
            )
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("grid extents must be increasing")
        bc = dict(self.bc)
        if set(bc) != set(EDGES):
            raise ValueError(f"bc must name exactly the edges {EDGES}: {sorted(bc)}")
        for e, k in bc.items():
            if k not in _KINDS:
                raise ValueError(f"unknown boundary kind {k!r} on edge {e!r}")
        for lo, hi in _AXIS_EDGES.values():
            if (bc[lo] == "periodic") != (bc[hi] == "periodic"):
                raise ValueError(f"periodic edges must come in pairs: {lo}={bc[lo]}, {hi}={bc[hi]}")
        object.__setattr__(self, "bc", bc)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def dx(self) -> float:
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y1 - self.y0) / (self.ny - 1)

    def spacing(self, axis: int) -> float:
        return self.dx if axis == 0 else self.dy

    def periodic(self, axis: int) -> bool:
        return self.bc[_AXIS_EDGES[axis][0]] == "periodic"

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y0, self.y1, self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def boundary_mask(self, kinds=("dirichlet", "neumann")) -> np.ndarray:
        """Nodes lying on an edge whose kind is in ``kinds``."""
        m = np.zeros(self.shape, dtype=bool)
        if self.bc["west"] in kinds:
            m[0, :] = True
        if self.bc["east"] in kinds:
            m[-1, :] = True
        if self.bc["south"] in kinds:
            m[:, 0] = True
        if self.bc["north"] in kinds:
            m[:, -1] = True
        return m


def _as_field(a, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(a, dtype=float), shape)


def _check_axis(grid: Grid2D, u: np.ndarray, axis: int) -> None:
    if axis not in (0, 1):
        raise ValueError(f"axis must be 0 (x) or 1 (y): {axis!r}")
    if u.shape != grid.shape:
        raise ValueError(f"field shape {u.shape} does not match grid {grid.shape}")
    if u.shape[axis] < MIN_POINTS:
        raise ValueError("UD3 stencil needs at least 5 points along the axis")


def upwind_q(n: int, periodic: bool, q: float = 0.5) -> np.ndarray:
    """Per-node blend parameter: ``q`` inside, ``0`` within two nodes of a wall."""
    if q not in (0.0, 0.5):
        raise ValueError(f"q must be 0 or 0.5: {q!r}")
    qs = np.full(n, q)
    if not periodic:
        qs[[0, 1, 2, n - 3, n - 2, n - 1]] = 0.0
    return qs


def _shifts(v: np.ndarray, periodic: bool):
    """Neighbours u[i-2], u[i-1], u[i+1], u[i+2] along axis 0.

    For a periodic axis ``v`` holds only the distinct nodes. For a bounded
    axis the shifted copies are edge-padded; callers only read rows whose
    true stencil stays inside the grid.
    """
    if periodic:
        return (np.roll(v, 2, 0), np.roll(v, 1, 0), np.roll(v, -1, 0), np.roll(v, -2, 0))
    p = np.concatenate([v[:1], v[:1], v, v[-1:], v[-1:]], axis=0)
    return p[:-4], p[1:-3], p[3:-1], p[4:]


def advect_uds(
    u: np.ndarray, speed, grid: Grid2D, axis: int, q: float = 0.5
) -> np.ndarray:
    r"""Upwind-biased advection term :math:`K\,\partial u/\partial x_{axis}`.

    Central difference plus ``q * (K+ u^- + K- u^+)`` with the one-sided
    third-difference corrections. ``q = 0.5`` gives the third-order UD3
    formula; within two nodes of a non-periodic edge ``q`` drops to zero
    (second-order central) so no ghost values are needed. Nodes on a
    non-periodic edge return zero: their values come from boundary
    conditions, not from transport.
    """
    u = np.asarray(u, dtype=float)
    _check_axis(grid, u, axis)
    k = _as_field(speed, u.shape)
    periodic = grid.periodic(axis)
    h = grid.spacing(axis)

    v = np.moveaxis(u, axis, 0)
    kk = np.moveaxis(k, axis, 0)
    n = v.shape[0]
    if periodic:
        v = v[:-1]
        kk = kk[:-1]
    um2, um1, up1, up2 = _shifts(v, periodic)
    central = kk * (up1 - um1) / (2.0 * h)
    d_minus = (um2 - 3.0 * um1 + 3.0 * v - up1) / (3.0 * h)
    d_plus = (um1 - 3.0 * v + 3.0 * up1 - up2) / (3.0 * h)
    qs = upwind_q(n, periodic, q)
    if periodic:
        qs = qs[:-1]
    qs = qs.reshape((-1,) + (1,) * (v.ndim - 1))
    out = central + qs * (np.maximum(kk, 0.0) * d_minus + np.minimum(kk, 0.0) * d_plus)
    if periodic:
        out = np.concatenate([out, out[:1]], axis=0)
    else:
        out[0] = 0.0
        out[-1] = 0.0
    return np.moveaxis(out, 0, axis)


def _second_difference(u: np.ndarray, grid: Grid2D, axis: int) -> np.ndarray:
    v = np.moveaxis(u, axis, 0)
    h2 = grid.spacing(axis) ** 2
    out = np.empty_like(v)
    if grid.periodic(axis):
        w = v[:-1]
        d = (np.roll(w, -1, 0) - 2.0 * w + np.roll(w, 1, 0)) / h2
        out[:-1] = d
        out[-1] = d[0]
    else:
        out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
        # mirror ghost u[-1] = u[1]; Dirichlet edges are overwritten by the caller
        out[0] = 2.0 * (v[1] - v[0]) / h2
        out[-1] = 2.0 * (v[-2] - v[-1]) / h2
    return np.moveaxis(out, 0, axis)


def laplacian_cds(u: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Five-point second-order Laplacian.

    Periodic axes wrap, Dirichlet edge nodes return zero (their values are
    prescribed), and zero-flux Neumann edge nodes use the mirror-ghost
    closure ``u[-1] = u[1]``.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape:
        raise ValueError(f"field shape {u.shape} does not match grid {grid.shape}")
    out = _second_difference(u, grid, 0) + _second_difference(u, grid, 1)
    out[grid.boundary_mask(("dirichlet",))] = 0.0
    return out


def ddx(u: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Central first derivative along x (one-sided second order on bounded edges)."""
    return _first_difference(u, grid, 0)


def ddy(u: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Central first derivative along y (one-sided second order on bounded edges)."""
    return _first_difference(u, grid, 1)


def _first_difference(u: np.ndarray, grid: Grid2D, axis: int) -> np.ndarray:
    v = np.moveaxis(np.asarray(u, dtype=float), axis, 0)
    h = grid.spacing(axis)
    out = np.empty_like(v)
    if grid.periodic(axis):
        w = v[:-1]
        d = (np.roll(w, -1, 0) - np.roll(w, 1, 0)) / (2.0 * h)
        out[:-1] = d
        out[-1] = d[0]
    else:
        out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
        out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def _edge_slice(edge: str):
    return {
        "west": (0, slice(None)),
        "east": (-1, slice(None)),
        "south": (slice(None), 0),
        "north": (slice(None), -1),
    }[edge]


def _edge_value(values: Mapping, edge: str, n: int) -> np.ndarray:
    val = values.get(edge, 0.0) if values is not None else 0.0
    return np.broadcast_to(np.asarray(val, dtype=float), (n,))


def apply_bc(u: np.ndarray, grid: Grid2D, values: Mapping | None = None) -> np.ndarray:
    """Return a copy of ``u`` whose edge nodes satisfy the grid's conditions.

    ``values`` maps edge names to a Dirichlet value or to an outward normal
    derivative for Neumann edges (scalar or per-node array, default 0).
    Neumann edges use the second-order one-sided relation
    ``(3 u_0 - 4 u_1 + u_2) / (2h) = -du/dn`` solved for the edge node.
    Edges along ``x`` are applied first, then those along ``y``; the
    latter therefore own the corners.
    """
    out = np.array(u, dtype=float, copy=True)
    if out.shape != grid.shape:
        raise ValueError(f"field shape {out.shape} does not match grid {grid.shape}")
    values = dict(values or {})
    unknown = set(values) - set(EDGES)
    if unknown:
        raise ValueError(f"unknown edges in boundary values: {sorted(unknown)}")
    _check_corners(grid, values)

    for axis, (lo, hi) in _AXIS_EDGES.items():
        n_along = grid.shape[1 - axis]
        h = grid.spacing(axis)
        v = np.moveaxis(out, axis, 0)  # view
        if grid.periodic(axis):
            v[-1] = v[0]
            continue
        for edge, (b, i1, i2) in ((lo, (0, 1, 2)), (hi, (-1, -2, -3))):
            kind = grid.bc[edge]
            val = _edge_value(values, edge, n_along)
            if kind == "dirichlet":
                v[b] = val
            else:
                v[b] = (4.0 * v[i1] - v[i2] + 2.0 * h * val) / 3.0
    return out


def _check_corners(grid: Grid2D, values: Mapping) -> None:
    for ex in ("west", "east"):
        for ey in ("south", "north"):
            if grid.bc[ex] != "dirichlet" or grid.bc[ey] != "dirichlet":
                continue
            vx, vy = values.get(ex, 0.0), values.get(ey, 0.0)
            if np.ndim(vx) == 0 and np.ndim(vy) == 0 and not np.isclose(vx, vy):
                raise ValueError(
                    f"inconsistent Dirichlet data at the {ex}/{ey} corner: {vx} vs {vy}"
                )
