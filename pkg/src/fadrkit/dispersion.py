"""Von Neumann analysis of the theta-method for the linear 1D FADR equation.

For a Fourier mode ``exp(I k x)`` the scheme reduces to a polynomial in the
amplification factor ``G``

    C0 G^n + C1 G^(n-1) + sum_{j=2}^{n} r_j (G^(n-j+1) - G^(n-j)) = 0,

with ``r_j = j^(1-a) - (j-1)^(1-a)``. The physical root is followed from
``G = 1`` at ``kh = 0`` by nearest-root continuation; its phase gives the
numerical phase speed and group velocity, which are compared with the exact
fractional dispersion relation ``omega = I (lam - gamma k^2 - I c k)^(1/a)``.
Everything is expressed through the groups ``Nc``, ``Pe`` and ``Da``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .caputo import l1_weights_uniform

__all__ = [
    "DispersionPoint",
    "RootFindingError",
    "ScanResult",
    "SpectralParams",
    "amplification_roots",
    "coefficients",
    "contour_scan",
    "exact_frequency",
    "group_velocity_ratio",
    "phase_speed_ratio",
    "polynomial",
    "stability_multipliers",
    "track_roots",
    "write_csv",
    "xi_recursion",
]

logger = logging.getLogger(__name__)

#: Favourable region: positive group velocity ratio and small phase error.
DELTA_C_MAX = 0.1
KH_STEP = 1.0e-4
MAX_CONTINUATION_STEP = 0.02
CSV_COLUMNS = (
    "alpha", "theta", "Pe", "Da", "Nc", "kh", "ReG", "ImG",
    "beta", "delta_c", "Vg_ratio", "favorable",
)


class RootFindingError(ArithmeticError):
    def __init__(self, message: str, coefficients: np.ndarray):
        super().__init__(message)
        self.coefficients = coefficients


@dataclass(frozen=True)
class SpectralParams:
    alpha: float
    theta: float
    Pe: float
    Da: float = 0.0
    q: float = 0.5
    n_poly: int = 75
    kh_range: tuple[float, float, int] = (0.0, math.pi, 64)
    Nc_range: tuple[float, float, int] = (0.0, 1.0, 41)

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1]: {self.alpha!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1]: {self.theta!r}")
        if self.n_poly < 2:
            raise ValueError(f"n_poly must be >= 2: {self.n_poly!r}")
        if self.q not in (0.0, 0.5):
            raise ValueError(f"q must be 0 or 0.5: {self.q!r}")

    @property
    def gamma(self) -> float:
        return math.gamma(2.0 - self.alpha)

    def memory_weights(self) -> np.ndarray:
        """``r_1 .. r_n`` (index 0 holds ``r_1 = 1``)."""
        return l1_weights_uniform(self.alpha, self.n_poly).weights

    def kh_values(self) -> np.ndarray:
        a, b, n = self.kh_range
        return np.linspace(a, b, int(n))

    def nc_values(self) -> np.ndarray:
        a, b, n = self.Nc_range
        return np.linspace(a, b, int(n))


@dataclass
class DispersionPoint:
    kh: float
    Nc: float
    G_num: complex = complex("nan")
    beta: float = math.nan
    c_ratio: complex = complex("nan")
    delta_c: float = math.nan
    Vg_ratio: float = math.nan
    C0: complex = complex("nan")
    C1: complex = complex("nan")
    mu1: complex = complex("nan")
    mu2: complex = complex("nan")
    flags: list = field(default_factory=list)

    @property
    def favorable(self) -> bool:
        if self.flags:
            return False
        return bool(self.Vg_ratio > 0.0 and self.delta_c <= DELTA_C_MAX)


def coefficients(p: SpectralParams, kh: float, Nc: float) -> tuple[complex, complex]:
    """``(C0, C1)`` of the amplification polynomial."""
    g = p.gamma
    c, s = math.cos(kh), math.sin(kh)
    c2, s2 = math.cos(2 * kh), math.sin(2 * kh)
    q = p.q
    C0 = 1.0 + 2.0 * p.Pe * p.theta * g * (1.0 - c)
    re = (
        -1.0
        + q * Nc * g * (1.0 - 4.0 / 3.0 * c + c2 / 3.0)
        + 2.0 * p.Pe * (1.0 - p.theta) * g * (1.0 - c)
        - p.Da * Nc * g
    )
    im = Nc * g * (s + 2.0 / 3.0 * q * s - q / 3.0 * s2)
    return complex(C0, 0.0), complex(re, im)


def stability_multipliers(p: SpectralParams, kh: float, Nc: float) -> tuple[complex, complex]:
    """``(mu1, mu2)`` of the round-off amplitude recursion; ``mu1 = C0``, ``mu2 = -C1``."""
    C0, C1 = coefficients(p, kh, Nc)
    return C0, -C1


def polynomial(p: SpectralParams, kh: float, Nc: float) -> np.ndarray:
    """Coefficients of the degree-``n_poly`` polynomial, highest power first."""
    n = p.n_poly
    r = p.memory_weights()  # r[j-1] = r_j
    C0, C1 = coefficients(p, kh, Nc)
    coef = np.empty(n + 1, dtype=complex)
    coef[0] = C0
    coef[1] = C1 + r[1]
    # G^(n-m), 2 <= m <= n-1: +r_{m+1} - r_m
    coef[2:n] = r[2:n] - r[1 : n - 1]
    coef[n] = -r[n - 1]
    return coef


def _polish(coef: np.ndarray, z: np.ndarray, iters: int = 3) -> np.ndarray:
    d = np.polyder(coef)
    for _ in range(iters):
        dp = np.polyval(d, z)
        ok = np.isfinite(dp) & (dp != 0)
        step = np.zeros_like(z)
        step[ok] = np.polyval(coef, z[ok]) / dp[ok]
        z = z - step
    return z


def _all_roots(coef: np.ndarray) -> np.ndarray:
    try:
        z = np.roots(coef)
    except np.linalg.LinAlgError as exc:
        raise RootFindingError(f"companion eigensolve failed: {exc}", coef) from exc
    z = _polish(coef, z)
    scale = np.max(np.abs(coef))
    # Horner residual, relative to the coefficient size and |z|^n
    res = np.abs(np.polyval(coef, z)) / (scale * np.maximum(1.0, np.abs(z)) ** (len(coef) - 1))
    if len(z) != len(coef) - 1 or not np.all(np.isfinite(z)) or np.any(res > 1e-8):
        raise RootFindingError(
            f"root residual {np.max(res):.2e} exceeds 1e-8", coef
        )
    return z


def _newton(coef: np.ndarray, z0: complex, iters: int = 20) -> Optional[complex]:
    """Newton refinement of ``z0``; ``None`` when it fails to converge."""
    d = np.polyder(coef)
    z = complex(z0)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(iters):
            dp = np.polyval(d, z)
            if dp == 0 or not np.isfinite(dp):
                return None
            dz = np.polyval(coef, z) / dp
            z -= dz
            if not np.isfinite(z):
                return None
            if abs(dz) <= 1e-15 * max(1.0, abs(z)):
                return z
    return None


def _nearest_root(coef: np.ndarray, target: complex) -> complex:
    """Root nearest ``target``: Newton when it stays close, else a full eigensolve."""
    z = _newton(coef, target)
    # a move longer than a tenth of the typical root spacing may have jumped roots
    if z is not None and abs(z - target) <= 0.2 * np.pi / len(coef):
        return z
    roots = _all_roots(coef)
    return complex(roots[np.argmin(np.abs(roots - target))])


def track_roots(p: SpectralParams, Nc: float, kh_values: Sequence[float]) -> list[tuple[np.ndarray, complex]]:
    """All roots and the continued physical root at each ``kh`` (ascending from 0).

    The path starts at ``kh = 0`` on the root nearest ``G = 1`` and moves in
    steps no larger than :data:`MAX_CONTINUATION_STEP`, each time picking the
    root nearest a linear prediction from the two previous selections.
    """
    kh_values = np.asarray(kh_values, dtype=float)
    if np.any(kh_values < 0) or np.any(np.diff(kh_values) < 0):
        raise ValueError("kh values must be non-negative and ascending")
    out: list[tuple[np.ndarray, complex]] = []
    roots0 = _all_roots(polynomial(p, 0.0, Nc))
    prev_k, prev_g = 0.0, complex(roots0[np.argmin(np.abs(roots0 - 1.0))])
    prev2 = None
    for kh in kh_values:
        n_sub = max(1, int(math.ceil((kh - prev_k) / MAX_CONTINUATION_STEP)))
        path = np.linspace(prev_k, kh, n_sub + 1)[1:]
        # intermediate points: Newton from a linear prediction
        for k in path[:-1]:
            target = prev_g if prev2 is None else 2 * prev_g - prev2
            prev2, prev_g = prev_g, _nearest_root(polynomial(p, k, Nc), target)
        if kh == prev_k and out:
            out.append((out[-1][0], prev_g))
            continue
        roots = roots0 if kh == 0.0 else _all_roots(polynomial(p, kh, Nc))
        target = prev_g if prev2 is None or kh == 0.0 else 2 * prev_g - prev2
        sel = complex(roots[np.argmin(np.abs(roots - target))])
        if kh > 0.0:
            prev2, prev_g = prev_g, sel
        prev_k = kh
        out.append((roots, sel))
    return out


def amplification_roots(p: SpectralParams, kh: float, Nc: float) -> tuple[np.ndarray, complex]:
    """All ``n_poly`` roots at ``(kh, Nc)`` and the selected physical root ``G_num``."""
    if kh < 0:
        roots, g = amplification_roots(p, -kh, Nc)
        # real coefficients in kh -> -kh conjugate the imaginary parts of C1
        return np.conj(roots), complex(np.conj(g))
    return track_roots(p, Nc, [kh])[-1]


def exact_frequency(p: SpectralParams, kh: float, Nc: float) -> complex:
    """``X^(1/a)`` with ``X = Da Nc - kh^2 Pe - I kh Nc`` (principal branch).

    The exact frequency is ``omega dt = I * X^(1/a)``.
    """
    X = complex(p.Da * Nc - kh * kh * p.Pe, -kh * Nc)
    if X == 0:
        return 0j
    return complex(np.power(X, 1.0 / p.alpha))


def phase_speed_ratio(p: SpectralParams, kh: float, Nc: float, G: complex) -> tuple[complex, float]:
    """Numerical-to-exact phase speed ratio and ``delta_c = |1 - ratio|``.

    ``beta = atan2(Im G, Re G)``, ``c_num = -beta / (k dt)`` and
    ``c_exact = omega / k``, which in the dimensionless groups gives
    ``ratio = I beta / X^(1/a)``.
    """
    if kh == 0:
        raise ZeroDivisionError("phase speed ratio is singular at kh = 0")
    beta = math.atan2(G.imag, G.real)
    w = exact_frequency(p, kh, Nc)
    if w == 0:
        raise ZeroDivisionError("exact frequency vanishes")
    ratio = 1j * beta / w
    return ratio, abs(1.0 - ratio)


def _phase_derivative(p: SpectralParams, kh: float, Nc: float, G: complex, h: float = KH_STEP):
    gp = _nearest_root(polynomial(p, kh + h, Nc), G)
    gm = _nearest_root(polynomial(p, kh - h, Nc), G)
    b = np.unwrap([math.atan2(gm.imag, gm.real), math.atan2(G.imag, G.real), math.atan2(gp.imag, gp.real)])
    jump = max(abs(b[1] - b[0]), abs(b[2] - b[1]))
    return (b[2] - b[0]) / (2.0 * h), jump


def group_velocity_ratio(p: SpectralParams, kh: float, Nc: float, G: complex) -> float:
    """Real part of the numerical-to-exact group velocity ratio.

    ``Vg_num dt / h = -d beta / d(kh)`` by central differences of the
    continued root; ``Vg_exact dt / h = (1/a) rho^(1-a) (Nc cos((1-a) phi)
    + 2 kh Pe sin((1-a) phi))`` with ``X^(1/a) = rho exp(I phi)``.

    Raises
    ------
    ArithmeticError
        If the root jumps branches across the difference stencil.
    """
    dbeta, jump = _phase_derivative(p, kh, Nc, G)
    if jump > 0.5:
        raise ArithmeticError(f"phase jumps by {jump:.3f} rad across the kh stencil")
    a = p.alpha
    w = exact_frequency(p, kh, Nc)
    rho, phi = abs(w), math.atan2(w.imag, w.real)
    den = rho ** (1.0 - a) * (Nc * math.cos((1.0 - a) * phi) + 2.0 * kh * p.Pe * math.sin((1.0 - a) * phi))
    if den == 0:
        raise ZeroDivisionError("exact group velocity vanishes")
    return float(-a * dbeta / den)


def evaluate_point(p: SpectralParams, kh: float, Nc: float, G: complex) -> DispersionPoint:
    C0, C1 = coefficients(p, kh, Nc)
    pt = DispersionPoint(kh=kh, Nc=Nc, G_num=G, beta=math.atan2(G.imag, G.real),
                         C0=C0, C1=C1, mu1=C0, mu2=-C1)
    try:
        pt.c_ratio, pt.delta_c = phase_speed_ratio(p, kh, Nc, G)
    except ZeroDivisionError as exc:
        pt.flags.append(f"singular: {exc}")
    try:
        pt.Vg_ratio = group_velocity_ratio(p, kh, Nc, G)
    except (ArithmeticError, ZeroDivisionError) as exc:
        pt.flags.append(f"group velocity: {exc}")
    return pt


@dataclass
class ScanResult:
    params: SpectralParams
    Nc: np.ndarray
    kh: np.ndarray
    points: list[DispersionPoint]
    mask: np.ndarray  # (len(Nc), len(kh))

    def grid(self, name: str) -> np.ndarray:
        vals = np.array([getattr(pt, name) for pt in self.points], dtype=float)
        return vals.reshape(self.mask.shape)


def contour_scan(p: SpectralParams) -> ScanResult:
    """Dense ``(Nc, kh)`` table with the favourable-region mask."""
    ncs = p.nc_values()
    khs = p.kh_values()
    points: list[DispersionPoint] = []
    mask = np.zeros((len(ncs), len(khs)), dtype=bool)
    for a, nc in enumerate(ncs):
        try:
            tracked = track_roots(p, float(nc), khs)
        except RootFindingError as exc:
            logger.warning("Nc=%g: root finding failed (%s); row excluded", nc, exc)
            tracked = None
        for b, kh in enumerate(khs):
            if tracked is None:
                pt = DispersionPoint(kh=float(kh), Nc=float(nc), flags=["root finding failed"])
            else:
                pt = evaluate_point(p, float(kh), float(nc), tracked[b][1])
            mask[a, b] = pt.favorable
            points.append(pt)
    return ScanResult(p, ncs, khs, points, mask)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_csv(result: ScanResult, path) -> None:
    """One row per point: ``alpha, theta, Pe, Da, Nc, kh, ReG, ImG, beta, delta_c, Vg_ratio, favorable``."""
    p = result.params
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for pt in result.points:
            w.writerow([
                _fmt(p.alpha), _fmt(p.theta), _fmt(p.Pe), _fmt(p.Da), _fmt(pt.Nc), _fmt(pt.kh),
                _fmt(pt.G_num.real), _fmt(pt.G_num.imag), _fmt(pt.beta), _fmt(pt.delta_c),
                _fmt(pt.Vg_ratio), int(pt.favorable),
            ])


def xi_recursion(
    p: SpectralParams, kh: float, Nc: float, n_steps: int, memory_sign: int = 1
) -> np.ndarray:
    """Round-off amplitudes ``xi_0 .. xi_n`` from direct recursion, ``xi_0 = 1``.

    ``|mu1| xi_n = |mu2| xi_{n-1} + s * sum_{j=2}^{n} r_j (xi_{n-j+1} - xi_{n-j})``.
    ``memory_sign = +1`` is the amplitude recursion used in the asymptotic
    stability argument; ``-1`` carries the sign the memory sum has in the
    amplification polynomial.
    """
    if memory_sign not in (1, -1):
        raise ValueError("memory_sign must be +1 or -1")
    mu1, mu2 = stability_multipliers(p, kh, Nc)
    a1, a2 = abs(mu1), abs(mu2)
    r = l1_weights_uniform(p.alpha, max(n_steps, 1)).weights  # r[j-1] = r_j
    xi = np.empty(n_steps + 1)
    xi[0] = 1.0
    for n in range(1, n_steps + 1):
        mem = 0.0
        if n >= 2:
            # j = 2..n: r_j (xi[n-j+1] - xi[n-j])
            d = xi[n - 1 : 0 : -1] - xi[n - 2 :: -1] if n > 2 else xi[1:2] - xi[0:1]
            mem = float(np.dot(r[1:n], d))
        xi[n] = (a2 * xi[n - 1] + memory_sign * mem) / a1
    return xi
