"""Theta-family IMEX stepping for scalar fractional advection-reaction-diffusion.

One step from ``t_{n-1}`` to ``t_n`` solves

    D^alpha u + K1 . grad u^{n-1} = theta K2 lap u^n + (1 - theta) K2 lap u^{n-1} + f(t_{n-1}, u^{n-1})

with the L1 memory sum for ``D^alpha``, explicit upwind (UD3) advection,
explicit reaction and the implicit diffusion part handed to Gauss-Seidel.
``theta = 0`` is the explicit L1 scheme and ``theta = 1`` the fully implicit
one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Optional, Union

import numpy as np

from .caputo import AdaptiveConfig, L1History, adapt_step, caputo_split
from .grid_stencil import Grid2D, advect_uds, apply_bc, laplacian_cds
from .linsolve import BlockDiagSpec, ConvergenceError, GSConfig, gauss_seidel
from .ml_special import mittag_leffler

__all__ = [
    "DimGroups",
    "FADRProblem",
    "SolutionBlowup",
    "StepRecord",
    "ThetaScheme",
    "brunner_exact",
    "brunner_problem",
    "dim_groups",
    "integrate",
    "run_brunner_case",
    "step",
    "strip_grid",
]

logger = logging.getLogger(__name__)

Reaction = Union[float, Callable[[float, np.ndarray], np.ndarray], None]


class SolutionBlowup(FloatingPointError):
    """A step produced non-finite values."""

    def __init__(self, message: str, step_index: Optional[int] = None):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class ThetaScheme:
    theta: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1]: {self.theta!r}")


@dataclass
class FADRProblem:
    """Scalar FADR problem on a :class:`Grid2D`.

    ``velocity`` holds the advection coefficient ``K1`` per axis, ``diffusivity``
    is ``K2``; both may be scalars or fields. ``reaction`` is either a
    constant ``lam`` (meaning ``f = lam * u``) or a callable ``f(t, u)``.
    Boundary data are constant in time; Neumann edges must be zero-flux.
    """

    grid: Grid2D
    alpha: float
    u0: np.ndarray
    diffusivity: float | np.ndarray = 1.0
    velocity: tuple = (0.0, 0.0)
    reaction: Reaction = None
    bc_values: Mapping[str, float] = field(default_factory=dict)
    q: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1]: {self.alpha!r}")
        self.u0 = np.asarray(self.u0, dtype=float)
        if self.u0.shape != self.grid.shape:
            raise ValueError(f"u0 shape {self.u0.shape} does not match grid {self.grid.shape}")
        if np.any(np.asarray(self.diffusivity) < 0):
            raise ValueError("diffusivity must be non-negative")
        if len(self.velocity) != 2:
            raise ValueError("velocity needs one component per axis")
        for e, v in self.bc_values.items():
            if self.grid.bc[e] == "neumann" and np.any(np.asarray(v) != 0):
                raise ValueError(f"only zero-flux Neumann data are supported ({e}={v})")

    def source(self, t: float, u: np.ndarray) -> np.ndarray:
        if self.reaction is None:
            return np.zeros_like(u)
        if callable(self.reaction):
            return np.asarray(self.reaction(t, u), dtype=float)
        return float(self.reaction) * u

    def advection(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        for axis, k in enumerate(self.velocity):
            if np.any(np.asarray(k) != 0):
                out += advect_uds(u, k, self.grid, axis, self.q)
        return out

    def initial_state(self) -> np.ndarray:
        return apply_bc(self.u0, self.grid, self.bc_values)


@dataclass(frozen=True)
class DimGroups:
    Nc: float
    Pe: float
    Da: Optional[float]

    @property
    def da_defined(self) -> bool:
        return self.Da is not None


def dim_groups(problem: FADRProblem, dt: float, dx: Optional[float] = None) -> DimGroups:
    """Fractional CFL, Peclet and Damkohler numbers.

    ``Nc = c dt^a / dx``, ``Pe = gamma dt^a / dx^2``, ``Da = lam dx / c`` with
    ``c`` the largest advection speed, ``gamma`` the largest diffusivity and
    ``lam`` the linear reaction rate. ``Da`` is ``None`` when ``c = 0`` or the
    reaction is not linear.
    """
    dx = problem.grid.dx if dx is None else dx
    a = problem.alpha
    c = max(float(np.max(np.abs(k))) for k in problem.velocity)
    gamma = float(np.max(problem.diffusivity))
    ta = dt**a
    da: Optional[float] = None
    if c != 0.0 and not callable(problem.reaction):
        lam = 0.0 if problem.reaction is None else float(problem.reaction)
        da = lam * dx / c
    return DimGroups(c * ta / dx, gamma * ta / dx**2, da)


def step(
    problem: FADRProblem,
    scheme: ThetaScheme,
    history: L1History,
    dt: float,
    gs: Optional[GSConfig] = None,
) -> np.ndarray:
    """Advance the newest snapshot in ``history`` by ``dt`` (history is not modified)."""
    grid = problem.grid
    t_old = history.t
    u_old = history.latest
    weights = history.weights_for(t_old + dt, problem.alpha)
    mass, known = caputo_split(history, weights)

    th = scheme.theta
    k2 = np.asarray(problem.diffusivity, dtype=float)
    rhs = -known - problem.advection(u_old) + problem.source(t_old, u_old)
    if th < 1.0:
        rhs = rhs + (1.0 - th) * k2 * laplacian_cds(u_old, grid)

    if not np.all(np.isfinite(rhs)):
        raise SolutionBlowup(f"non-finite explicit terms at t = {t_old:.6g}")
    spec = BlockDiagSpec.implicit_diffusion(grid, th * k2, mass)
    guess = apply_bc(u_old, grid, problem.bc_values)
    try:
        u_new = gauss_seidel(spec, rhs, guess, gs).x
    except ConvergenceError as exc:
        # overflowing explicit terms show up as a non-finite residual
        if math.isfinite(exc.residual):
            raise
        raise SolutionBlowup(f"solution overflowed at t = {t_old + dt:.6g}") from exc
    u_new = apply_bc(u_new, grid, problem.bc_values)
    if not np.all(np.isfinite(u_new)):
        raise SolutionBlowup(f"non-finite values at t = {t_old + dt:.6g}")
    return u_new


@dataclass(frozen=True)
class StepRecord:
    index: int
    time: float
    dt: float
    norm: float
    Nc: float
    Pe: float


@dataclass(frozen=True)
class SafeBox:
    """Region of (Nc, Pe) outside which a stability warning is logged."""

    nc_max: float = 1.0
    pe_max: float = math.inf


def integrate(
    problem: FADRProblem,
    scheme: ThetaScheme,
    t_final: float,
    dt: float,
    adaptive: Optional[AdaptiveConfig] = None,
    gs: Optional[GSConfig] = None,
    safe_box: Optional[SafeBox] = None,
) -> Iterator[tuple[StepRecord, L1History]]:
    """Generate ``(record, history)`` after every accepted step up to ``t_final``.

    With ``adaptive`` set the step doubles whenever the relative l2 change of
    the solution drops below ``adaptive.delta``; otherwise ``dt`` stays fixed
    (the last step is shortened to land on ``t_final``).
    """
    if safe_box is None:
        safe_box = SafeBox(pe_max=math.inf if scheme.theta == 1.0 else 0.25 / (1.0 - scheme.theta))
    u = problem.initial_state()
    history = L1History(0.0, u)
    warned = False
    n = 0
    eps = 1e-12 * max(1.0, t_final)
    while history.t < t_final - eps:
        h = min(dt, t_final - history.t)
        groups = dim_groups(problem, h)
        if not warned and (groups.Nc > safe_box.nc_max or groups.Pe > safe_box.pe_max):
            logger.warning(
                "step %d: (Nc, Pe) = (%.3g, %.3g) outside the safe box (%.3g, %.3g); "
                "the theta-method is only conditionally stable",
                n + 1, groups.Nc, groups.Pe, safe_box.nc_max, safe_box.pe_max,
            )
            warned = True
        try:
            u_new = step(problem, scheme, history, h, gs)
        except SolutionBlowup as exc:
            raise SolutionBlowup(f"step {n + 1}: {exc}", n + 1) from exc
        u_old = history.latest.copy()
        history.append(history.t + h, u_new)
        n += 1
        if adaptive is not None:
            dt = adapt_step(u_new, u_old, adaptive, dt)
        rec = StepRecord(n, history.t, h, float(np.linalg.norm(u_new)), groups.Nc, groups.Pe)
        yield rec, history


def strip_grid(n: int, x0: float, x1: float, bc: str = "periodic") -> Grid2D:
    """Grid for a 1D problem: ``n`` points in x, five y-periodic copies.

    A field that is constant along y stays so under every operator here.
    """
    return Grid2D(n, 5, x0, x1, 0.0, 1.0, {"west": bc, "east": bc, "south": "periodic", "north": "periodic"})


# {{{ fractional diffusion benchmark on [-1, 1]^2

BRUNNER_KINDS = ("dirichlet", "neumann")


def brunner_problem(kind: str, alpha: float, n_points: int = 51) -> FADRProblem:
    """Fractional heat equation with ``K1 = f = 0`` and ``K2 = 1`` on ``[-1, 1]^2``."""
    if kind not in BRUNNER_KINDS:
        raise ValueError(f"kind must be one of {BRUNNER_KINDS}: {kind!r}")
    grid = Grid2D(n_points, n_points, -1.0, 1.0, -1.0, 1.0, {e: kind for e in ("west", "east", "south", "north")})
    X, Y = grid.mesh()
    if kind == "dirichlet":
        u0 = np.cos(0.5 * np.pi * X) * np.cos(0.5 * np.pi * Y)
    else:
        u0 = np.sin(0.5 * np.pi * X) * np.sin(0.5 * np.pi * Y)
    return FADRProblem(grid, alpha, u0, diffusivity=1.0)


def brunner_exact(problem: FADRProblem, t: float) -> np.ndarray:
    # both initial fields are eigenfunctions of the Laplacian with eigenvalue -pi^2/2
    rate = 0.5 * np.pi**2 * float(problem.diffusivity)
    return mittag_leffler(-rate * t**problem.alpha, problem.alpha) * problem.u0


def run_brunner_case(
    kind: str,
    alpha: float,
    theta: float,
    dt: float,
    n_points: int = 51,
    T: float = 0.35,
    gs: Optional[GSConfig] = None,
) -> tuple[float, np.ndarray]:
    """Integrate the benchmark to ``T`` with uniform ``dt``.

    Returns the relative l2 error against the Mittag-Leffler solution and
    the final field.
    """
    problem = brunner_problem(kind, alpha, n_points)
    scheme = ThetaScheme(theta)
    u = problem.u0.copy()
    if T > 0:
        n_steps = max(1, int(round(T / dt)))
        h = T / n_steps
        for _rec, history in integrate(problem, scheme, T, h, gs=gs, safe_box=SafeBox(math.inf, math.inf)):
            pass
        u = history.latest.copy()
    exact = brunner_exact(problem, T)
    err = float(np.linalg.norm(u - exact) / np.linalg.norm(exact))
    return err, u


# }}}
