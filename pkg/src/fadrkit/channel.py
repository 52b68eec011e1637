"""Fractional viscoelastic channel flow in streamfunction-vorticity form.

    Re [D^a Omega + v . grad Omega] = nu lap Omega + (1 - nu) curl div (A + F)
    lap Psi = -Omega
    D^a A + v . grad A - (grad v)^T A - A grad v = (D - A) / We

on ``[0, Lx] x [0, 1]``, periodic in x, with no-slip walls. ``A`` is stored
as the three arrays ``A11, A12, A22``; ``F`` is the finger tensor built from
``E = exp(t (grad v)^(1/a))``. The unperturbed Poiseuille state
``u = y - y^2`` with ``A11 = 0, A12 = 1 - 2y, A22 = 2 We (1 - 2y)^2`` is
steady for the discrete equations as well as the continuous ones.

Velocity gradient convention: ``L = [[u_x, u_y], [v_x, v_y]]`` and
``D = L + L^T``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .caputo import AdaptiveConfig, L1History, adapt_step, caputo_split
from .grid_stencil import Grid2D, advect_uds, ddx, ddy
from .linsolve import BlockDiagSpec, ConvergenceError, GSConfig, gauss_seidel
from .theta_fadr import SolutionBlowup, ThetaScheme

__all__ = [
    "ChannelBCs",
    "ChannelDiagnostics",
    "ChannelFailure",
    "ChannelParams",
    "ChannelRun",
    "FieldState",
    "Schedule",
    "WallCoupling",
    "base_state",
    "channel_grid",
    "curl_div",
    "finger_force",
    "finger_tensor",
    "init_state",
    "iterate_channel",
    "matrix_function_2x2",
    "run_channel",
    "solve_streamfunction",
    "step_conformation",
    "step_vorticity",
    "velocity_gradient",
    "wall_vorticity",
    "write_snapshot",
]

logger = logging.getLogger(__name__)

ROUSE = 0.5
WALL_FORMULAS = ("wood", "jensen", "thom")
CHANNEL_GS = GSConfig(rel_tol=1.0e-10)
ZIMM = 2.0 / 3.0


class ChannelFailure(RuntimeError):
    """A sub-step failed; ``state`` is the last good state."""

    def __init__(self, message: str, state: "FieldState"):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class ChannelParams:
    Re: float = 70.0
    We: float = 10.0
    nu: float = 0.3
    mu: float = 1.0e-2
    alpha: float = ROUSE

    def __post_init__(self) -> None:
        if not self.Re > 0:
            raise ValueError(f"Re must be positive: {self.Re!r}")
        if not self.We > 0:
            raise ValueError(f"We must be positive: {self.We!r}")
        if not 0.0 < self.nu < 1.0:
            raise ValueError(f"nu must lie in (0, 1): {self.nu!r}")
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative: {self.mu!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1]: {self.alpha!r}")


@dataclass(frozen=True)
class ChannelBCs:
    psi_lower: float = 0.0
    psi_upper: float = 1.0 / 6.0
    wall_formula: str = "wood"

    def __post_init__(self) -> None:
        if self.wall_formula not in WALL_FORMULAS:
            raise ValueError(f"wall_formula must be one of {WALL_FORMULAS}: {self.wall_formula!r}")

    @property
    def flux(self) -> float:
        return self.psi_upper - self.psi_lower


@dataclass
class FieldState:
    t: float
    omega: np.ndarray
    psi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    A11: np.ndarray
    A12: np.ndarray
    A22: np.ndarray
    F: np.ndarray  # (3, nx, ny): F11, F12, F22

    def copy(self) -> FieldState:
        return FieldState(self.t, *(np.array(a) for a in (
            self.omega, self.psi, self.u, self.v, self.A11, self.A12, self.A22, self.F)))

    @property
    def A(self) -> np.ndarray:
        return np.stack([self.A11, self.A12, self.A22])


def channel_grid(nx: int = 76, ny: int = 51, length: float = 5.0) -> Grid2D:
    return Grid2D(nx, ny, 0.0, length, 0.0, 1.0,
                  {"west": "periodic", "east": "periodic", "south": "dirichlet", "north": "dirichlet"})


def base_state(grid: Grid2D, params: ChannelParams) -> dict[str, np.ndarray]:
    """Poiseuille flow and its steady elastic stress."""
    _, Y = grid.mesh()
    s = 1.0 - 2.0 * Y
    return {
        "psi": Y**2 / 2.0 - Y**3 / 3.0,
        "omega": -s,
        "u": Y - Y**2,
        "v": np.zeros_like(Y),
        "A11": np.zeros_like(Y),
        "A12": s.copy(),
        "A22": 2.0 * params.We * s**2,
    }


# {{{ discrete operators

def _dxx(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    w = f[:-1]
    d = (np.roll(w, -1, 0) - 2.0 * w + np.roll(w, 1, 0)) / grid.dx**2
    return np.concatenate([d, d[:1]], axis=0)


def _dyy(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Interior second y-difference; wall rows are left at zero."""
    out = np.zeros_like(f)
    out[:, 1:-1] = (f[:, 2:] - 2.0 * f[:, 1:-1] + f[:, :-2]) / grid.dy**2
    return out


def _dxy(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    return ddx(ddy(f, grid), grid)


def curl_div(T11: np.ndarray, T12: np.ndarray, T22: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Scalar ``curl(div T)`` for a symmetric tensor field, zero on the walls.

    ``= d_xx T12 + d_xy (T22 - T11) - d_yy T12``.
    """
    out = _dxx(T12, grid) + _dxy(T22 - T11, grid) - _dyy(T12, grid)
    out[:, 0] = 0.0
    out[:, -1] = 0.0
    return out


def wall_vorticity(
    psi: np.ndarray, grid: Grid2D, omega: Optional[np.ndarray] = None, formula: str = "wood"
) -> tuple[np.ndarray, np.ndarray]:
    """``Omega = -Psi_yy`` on both walls, using ``Psi_y = 0`` there.

    * ``wood``:   ``Omega_w = 3 (Psi_w - Psi_1) / h^2 - Omega_1 / 2`` (needs ``omega``)
    * ``jensen``: ``Omega_w = (7 Psi_w - 8 Psi_1 + Psi_2) / (2 h^2)``
    * ``thom``:   ``Omega_w = 2 (Psi_w - Psi_1) / h^2``

    The first two are exact for the cubic base profile.
    """
    h2 = grid.dy**2
    if formula == "wood":
        if omega is None:
            raise ValueError("the wood formula needs the interior vorticity")
        lower = 3.0 * (psi[:, 0] - psi[:, 1]) / h2 - 0.5 * omega[:, 1]
        upper = 3.0 * (psi[:, -1] - psi[:, -2]) / h2 - 0.5 * omega[:, -2]
    elif formula == "jensen":
        lower = (7.0 * psi[:, 0] - 8.0 * psi[:, 1] + psi[:, 2]) / (2.0 * h2)
        upper = (7.0 * psi[:, -1] - 8.0 * psi[:, -2] + psi[:, -3]) / (2.0 * h2)
    elif formula == "thom":
        lower = 2.0 * (psi[:, 0] - psi[:, 1]) / h2
        upper = 2.0 * (psi[:, -1] - psi[:, -2]) / h2
    else:
        raise ValueError(f"formula must be one of {WALL_FORMULAS}: {formula!r}")
    return lower, upper


def velocity_gradient(psi: np.ndarray, omega: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, ...]:
    """``(u_x, u_y, v_x, v_y)`` from second differences of ``Psi``.

    On the walls ``u_y = -Omega_wall`` and the tangential derivatives vanish.
    """
    u_y = _dyy(psi, grid)
    u_y[:, 0] = -omega[:, 0]
    u_y[:, -1] = -omega[:, -1]
    u_x = _dxy(psi, grid)
    v_x = -_dxx(psi, grid)
    for a in (u_x, v_x):
        a[:, 0] = 0.0
        a[:, -1] = 0.0
    return u_x, u_y, v_x, -u_x


# }}}


def _perturbation(grid: Grid2D, amplitude: float, seed: Optional[int], modes: int = 4) -> np.ndarray:
    """Smooth random streamfunction bump with ``Psi = Psi_y = 0`` on both walls."""
    if amplitude == 0.0:
        return np.zeros(grid.shape)
    rng = np.random.default_rng(seed)
    X, Y = grid.mesh()
    length = grid.x1 - grid.x0
    env = (Y * (1.0 - Y)) ** 2
    out = np.zeros(grid.shape)
    for m in range(1, modes + 1):
        a, ph = rng.normal(), rng.uniform(0.0, 2.0 * np.pi)
        out += a * np.cos(2.0 * np.pi * m * X / length + ph)
    return amplitude * 16.0 * env * out / modes


def init_state(
    grid: Grid2D,
    params: ChannelParams,
    bcs: ChannelBCs = ChannelBCs(),
    perturbation: float = 0.0,
    seed: Optional[int] = None,
) -> FieldState:
    """Base Poiseuille state, optionally with a seeded streamfunction perturbation."""
    b = base_state(grid, params)
    if not math.isclose(bcs.flux, 1.0 / 6.0, rel_tol=1e-12):
        raise ValueError(f"wall streamfunction values must differ by 1/6, got {bcs.flux!r}")
    psi = b["psi"] + bcs.psi_lower
    omega = b["omega"].copy()
    u, v = b["u"], b["v"]
    if perturbation:
        dpsi = _perturbation(grid, perturbation, seed)
        psi = psi + dpsi
        omega[:, 1:-1] -= (_dxx(dpsi, grid) + _dyy(dpsi, grid))[:, 1:-1]
        omega[:, 0], omega[:, -1] = wall_vorticity(psi, grid, omega)
        u = ddy(psi, grid)
        v = -ddx(psi, grid)
        u[:, [0, -1]] = 0.0
        v[:, [0, -1]] = 0.0
    F = np.zeros((3,) + grid.shape)
    state = FieldState(0.0, omega, psi, u.copy(), v.copy(), b["A11"], b["A12"], b["A22"], F)
    return state


# {{{ finger tensor

def matrix_function_2x2(G: np.ndarray, f, fprime, rtol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """``f(G)`` for a stack of 2x2 matrices ``G[..., 2, 2]`` in complex arithmetic.

    Distinct eigenvalues use the Lagrange-Sylvester formula; (nearly) equal
    eigenvalues use ``f(l) I + f'(l) (G - l I)``, the exact result for a
    defective matrix. Returns ``(f(G), defective_mask)``.
    """
    G = np.asarray(G, dtype=complex)
    tr = G[..., 0, 0] + G[..., 1, 1]
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    disc = np.sqrt(tr * tr / 4.0 - det)
    l1 = tr / 2.0 + disc
    l2 = tr / 2.0 - disc
    eye = np.eye(2, dtype=complex)
    scale = np.maximum(np.max(np.abs(G), axis=(-2, -1)), 1e-300)
    close = np.abs(l1 - l2) <= rtol * scale
    lm = tr / 2.0
    out = np.empty_like(G)
    with np.errstate(divide="ignore", invalid="ignore"):
        f1, f2 = f(l1), f(l2)
        a = (f1 - f2) / (l1 - l2)  # divided difference
        b = (l1 * f2 - l2 * f1) / (l1 - l2)
    ac, bc = fprime(lm), f(lm) - fprime(lm) * lm
    a = np.where(close, ac, a)
    b = np.where(close, bc, b)
    out = a[..., None, None] * G + b[..., None, None] * eye
    return out, close & (np.abs(G[..., 0, 1]) + np.abs(G[..., 1, 0]) > 0)


def _principal_power(p: float):
    def f(z):
        z = np.asarray(z, dtype=complex)
        return np.where(z == 0, 0.0, np.power(np.where(z == 0, 1.0, z), p))

    def fp(z):
        z = np.asarray(z, dtype=complex)
        if p == 1.0:
            return np.ones_like(z)
        if p > 1.0:
            return np.where(z == 0, 0.0, p * np.power(np.where(z == 0, 1.0, z), p - 1.0))
        return p * np.power(z, p - 1.0)

    return f, fp


def finger_tensor(L: np.ndarray, t: float, params: ChannelParams) -> tuple[np.ndarray, np.ndarray, float]:
    """``F = mu / (1 - nu) * Re(E E^T)`` with ``E = exp(t L^(1/a))`` per point.

    ``L[..., 2, 2]`` is the velocity gradient. Returns ``(F, defective_mask,
    max_imag)`` where ``max_imag`` is the largest discarded imaginary part.
    """
    p = 1.0 / params.alpha
    pw, pwp = _principal_power(p)
    P, defective = matrix_function_2x2(L, pw, pwp)
    E, _ = matrix_function_2x2(t * P, np.exp, np.exp)
    EE = E @ np.swapaxes(E, -1, -2)
    F = params.mu / (1.0 - params.nu) * EE
    return F.real, defective, float(np.max(np.abs(F.imag), initial=0.0))


def finger_force(state: FieldState, params: ChannelParams, grid: Grid2D) -> tuple[np.ndarray, int]:
    """Update ``state.F`` and return ``(curl div F, number of defective points)``."""
    if params.mu == 0.0 or state.t == 0.0:
        # E = I: F is constant and exerts no force
        state.F[:] = 0.0
        state.F[0] = state.F[2] = params.mu / (1.0 - params.nu)
        return np.zeros(grid.shape), 0
    u_x, u_y, v_x, v_y = velocity_gradient(state.psi, state.omega, grid)
    L = np.stack([np.stack([u_x, u_y], -1), np.stack([v_x, v_y], -1)], -2)
    F, defective, imag = finger_tensor(L, state.t, params)
    if imag > 1e-10 * max(1.0, float(np.max(np.abs(F)))):
        logger.debug("finger tensor: discarded imaginary part up to %.3g", imag)
    state.F[0], state.F[1], state.F[2] = F[..., 0, 0], F[..., 0, 1], F[..., 1, 1]
    return curl_div(state.F[0], state.F[1], state.F[2], grid), int(np.count_nonzero(defective))


# }}}


def _advect(f: np.ndarray, u: np.ndarray, v: np.ndarray, grid: Grid2D) -> np.ndarray:
    return advect_uds(f, u, grid, 0) + advect_uds(f, v, grid, 1)


def _check_finite(name: str, a: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(a)):
        raise SolutionBlowup(f"non-finite {name} at t = {t:.6g}")


def step_vorticity(
    state: FieldState,
    history: L1History,
    params: ChannelParams,
    scheme: ThetaScheme,
    dt: float,
    grid: Grid2D,
    forcing: np.ndarray,
    gs: Optional[GSConfig] = None,
    wall_values: Optional[tuple[np.ndarray, np.ndarray]] = None,
    guess: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, int]:
    """Theta step of the vorticity equation with Dirichlet wall data.

    The wall rows of the result are ``wall_values`` (default: the current
    wall vorticity).

    ``forcing`` is ``curl div F``; the elastic term ``curl div A`` is added here.
    Returns ``(Omega_new, Gauss-Seidel sweeps)``.
    """
    Re, nu, th = params.Re, params.nu, scheme.theta
    w = history.weights_for(history.t + dt, params.alpha)
    mass, known = caputo_split(history, w)
    om = state.omega
    rhs = (
        -Re * known
        - Re * _advect(om, state.u, state.v, grid)
        + (1.0 - nu) * (curl_div(state.A11, state.A12, state.A22, grid) + forcing)
    )
    if th < 1.0:
        lap = _dxx(om, grid) + _dyy(om, grid)
        rhs += (1.0 - th) * nu * lap
    spec = BlockDiagSpec.implicit_diffusion(grid, nu * th, Re * mass)
    x0 = np.array(om if guess is None else guess, dtype=float)
    if wall_values is not None:
        x0[:, 0], x0[:, -1] = wall_values
    res = gauss_seidel(spec, rhs, x0, gs)
    _check_finite("vorticity", res.x, state.t + dt)
    return res.x, res.iterations


def solve_streamfunction(
    omega: np.ndarray,
    grid: Grid2D,
    bcs: ChannelBCs = ChannelBCs(),
    psi_guess: Optional[np.ndarray] = None,
    gs: Optional[GSConfig] = None,
    wall: str = "wood",
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """Solve ``lap Psi = -Omega`` with constant wall values.

    Returns ``(Psi, u, v, Omega, sweeps)`` where the returned ``Omega`` carries
    updated wall values and ``(u, v) = (Psi_y, -Psi_x)`` by central
    differences (zero on the walls).
    """
    guess = np.zeros(grid.shape) if psi_guess is None else np.array(psi_guess, dtype=float)
    guess[:, 0] = bcs.psi_lower
    guess[:, -1] = bcs.psi_upper
    res = gauss_seidel(BlockDiagSpec.poisson(grid), -omega, guess, gs)
    psi = res.x
    u = ddy(psi, grid)
    v = -ddx(psi, grid)
    u[:, [0, -1]] = 0.0
    v[:, [0, -1]] = 0.0
    om = np.array(omega)
    om[:, 0], om[:, -1] = wall_vorticity(psi, grid, om, wall)
    return psi, u, v, om, res.iterations


def step_conformation(
    state: FieldState,
    history: L1History,
    params: ChannelParams,
    scheme: ThetaScheme,
    dt: float,
    grid: Grid2D,
) -> np.ndarray:
    """Pointwise theta step of the three conformation components.

    Advection and stretching use the velocity of ``state`` explicitly, the
    relaxation ``-A / We`` is theta-blended. On the walls the same update
    reduces to the scalar fractional relaxation laws because the velocity
    and its tangential derivatives vanish there; ``A11`` is pinned to zero.
    Returns the stacked ``(3, nx, ny)`` array.
    """
    We, th = params.We, scheme.theta
    w = history.weights_for(history.t + dt, params.alpha)
    mass, known = caputo_split(history, w)
    A11, A12, A22 = state.A11, state.A12, state.A22
    u_x, u_y, v_x, v_y = velocity_gradient(state.psi, state.omega, grid)
    stretch = np.stack([
        2.0 * (u_x * A11 + v_x * A12),
        u_x * A12 + v_x * A22 + u_y * A11 + v_y * A12,
        2.0 * (u_y * A12 + v_y * A22),
    ])
    D = np.stack([2.0 * u_x, u_y + v_x, 2.0 * v_y])
    adv = np.stack([_advect(a, state.u, state.v, grid) for a in (A11, A12, A22)])
    A = np.stack([A11, A12, A22])
    rhs = -known - adv + stretch + D / We - (1.0 - th) * A / We
    A_new = rhs / (mass + th / We)
    A_new[0][:, [0, -1]] = 0.0
    _check_finite("conformation", A_new, state.t + dt)
    return A_new


@dataclass(frozen=True)
class WallCoupling:
    """Fixed-point iteration that makes the wall vorticity implicit.

    Lagging the wall values one step behind the implicit diffusion solve is
    only stable while ``nu/Re * Gamma(2-a) dt^a / dy^2`` stays below about
    one half. Each step therefore alternates vorticity solve, Poisson
    solve and wall update, with Aitken-relaxed wall values, until the wall
    vorticity settles. ``max_iters = 1`` recovers the lagged scheme.
    """

    rel_tol: float = 1.0e-6
    max_iters: int = 100
    relax0: float = 0.5

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1: {self.max_iters!r}")
        if not 0.0 < self.relax0 <= 1.0:
            raise ValueError(f"relax0 must lie in (0, 1]: {self.relax0!r}")


def _couple_walls(state, hist_om, params, scheme, h, grid, forcing, bcs, gs, coupling):
    walls = np.stack([state.omega[:, 0], state.omega[:, -1]])
    om_guess, psi = state.omega, state.psi
    it_v = it_p = 0
    relax = coupling.relax0
    r_prev = None
    for k in range(coupling.max_iters):
        om_new, iv = step_vorticity(state, hist_om, params, scheme, h, grid, forcing, gs,
                                    (walls[0], walls[1]), om_guess)
        psi, u, v, om_upd, ip = solve_streamfunction(om_new, grid, bcs, psi, gs, bcs.wall_formula)
        it_v += iv
        it_p += ip
        target = np.stack([om_upd[:, 0], om_upd[:, -1]])
        r = target - walls
        scale = max(1.0, float(np.max(np.abs(target))))
        logger.debug("wall iteration %d: residual %.3e relax %.3g", k, float(np.max(np.abs(r))), relax)
        if coupling.max_iters == 1 or np.max(np.abs(r)) <= coupling.rel_tol * scale:
            return om_upd, psi, u, v, it_v, it_p
        if r_prev is not None:
            dr = r - r_prev
            den = float(np.vdot(dr, dr))
            if den > 0.0:
                relax = -relax * float(np.vdot(r_prev, dr)) / den
        walls = walls + relax * r
        r_prev = r
        om_guess = om_new
    raise ConvergenceError(
        f"wall vorticity did not settle in {coupling.max_iters} iterations",
        om_upd, float(np.max(np.abs(r))), coupling.max_iters,
    )


@dataclass(frozen=True)
class Schedule:
    n_steps: Optional[int] = 200
    t_final: Optional[float] = None
    dt0: float = 1.0e-3
    adaptive: Optional[AdaptiveConfig] = field(default_factory=AdaptiveConfig)
    snapshot_every: int = 0

    def __post_init__(self) -> None:
        if self.n_steps is None and self.t_final is None:
            raise ValueError("schedule needs n_steps or t_final")
        if not self.dt0 > 0:
            raise ValueError(f"dt0 must be positive: {self.dt0!r}")


@dataclass(frozen=True)
class ChannelDiagnostics:
    step: int
    t: float
    dt: float
    intensity: float
    gs_vorticity: int
    gs_poisson: int
    defective: int


@dataclass
class ChannelRun:
    params: ChannelParams
    grid: Grid2D
    state: FieldState
    diagnostics: list[ChannelDiagnostics]
    snapshots: list[FieldState]

    @property
    def intensity(self) -> float:
        return self.diagnostics[-1].intensity if self.diagnostics else 0.0


def _intensity(omega: np.ndarray, base: np.ndarray) -> float:
    return float(np.max(np.abs(omega - base)))


def iterate_channel(
    params: ChannelParams,
    grid: Grid2D,
    state: FieldState,
    scheme: ThetaScheme = ThetaScheme(1.0),
    schedule: Schedule = Schedule(),
    bcs: ChannelBCs = ChannelBCs(),
    gs: Optional[GSConfig] = None,
    coupling: Optional[WallCoupling] = None,
) -> Iterator[tuple[ChannelDiagnostics, FieldState]]:
    """Yield ``(diagnostics, state)`` after every step.

    A warning is logged the first time ``A22`` drops below
    ``-1e-6 * max(1, max A22)``; positivity is not enforced.
    """
    warned = False
    coupling = WallCoupling() if coupling is None else coupling
    # wall values amplify Poisson residuals by 1/dy^2, so solve tightly
    gs = CHANNEL_GS if gs is None else gs
    omega_base = base_state(grid, params)["omega"]
    hist_om = L1History(state.t, state.omega)
    hist_A = L1History(state.t, state.A)
    dt = schedule.dt0
    n = 0
    t_end = schedule.t_final if schedule.t_final is not None else math.inf
    n_end = schedule.n_steps if schedule.n_steps is not None else math.inf
    while n < n_end and state.t < t_end - 1e-12:
        h = min(dt, t_end - state.t)
        good = state.copy()
        try:
            forcing, defective = finger_force(state, params, grid)
            om_new, psi, u, v, it_v, it_p = _couple_walls(state, hist_om, params, scheme, h, grid, forcing, bcs, gs, coupling)
            A_new = step_conformation(state, hist_A, params, scheme, h, grid)
        except (ConvergenceError, SolutionBlowup, FloatingPointError) as exc:
            raise ChannelFailure(f"step {n + 1} at t = {state.t:.6g}: {exc}", good) from exc
        t_new = state.t + h
        om_old = state.omega
        state = FieldState(t_new, om_new, psi, u, v, A_new[0], A_new[1], A_new[2], state.F)
        hist_om.append(t_new, om_new)
        hist_A.append(t_new, A_new)
        a22_min = float(A_new[2].min())
        if not warned and a22_min < -1e-6 * max(1.0, float(A_new[2].max())):
            logger.warning("A22 became negative (min %.3g) at t = %.6g", a22_min, t_new)
            warned = True
        n += 1
        if schedule.adaptive is not None:
            dt = adapt_step(om_new, om_old, schedule.adaptive, dt)
        diag = ChannelDiagnostics(n, t_new, h, _intensity(om_new, omega_base), it_v, it_p, defective)
        yield diag, state


def run_channel(
    params: ChannelParams,
    scheme: ThetaScheme = ThetaScheme(1.0),
    grid: Optional[Grid2D] = None,
    schedule: Schedule = Schedule(),
    perturbation: float = 0.0,
    seed: Optional[int] = None,
    bcs: ChannelBCs = ChannelBCs(),
    gs: Optional[GSConfig] = None,
    coupling: Optional[WallCoupling] = None,
) -> ChannelRun:
    """Run from the (optionally perturbed) base state; collects diagnostics and snapshots."""
    grid = channel_grid() if grid is None else grid
    state = init_state(grid, params, bcs, perturbation, seed)
    diags: list[ChannelDiagnostics] = []
    snaps: list[FieldState] = [state.copy()] if schedule.snapshot_every else []
    for diag, state in iterate_channel(params, grid, state, scheme, schedule, bcs, gs, coupling):
        diags.append(diag)
        if schedule.snapshot_every and diag.step % schedule.snapshot_every == 0:
            snaps.append(state.copy())
    return ChannelRun(params, grid, state, diags, snaps)


SNAPSHOT_COLUMNS = ("x", "y", "omega", "psi", "u", "v", "A11", "A12", "A22")


def write_snapshot(state: FieldState, grid: Grid2D, path) -> None:
    X, Y = grid.mesh()
    cols = [X, Y, state.omega, state.psi, state.u, state.v, state.A11, state.A12, state.A22]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SNAPSHOT_COLUMNS)
        for row in zip(*(c.ravel() for c in cols)):
            w.writerow([format(float(x), ".17g") for x in row])
