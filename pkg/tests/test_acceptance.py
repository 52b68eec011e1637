"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary).
Criteria that the implementation does not meet are marked ``xfail(strict=True)``
with the reason; they still run in full and would error if they started passing.
"""

import math
import time
from importlib import resources

import numpy as np
import pytest
import yaml

from fadrkit.channel import ChannelParams, Schedule, channel_grid, run_channel
from fadrkit.cli import fit_convergence_slope, main
from fadrkit.dispersion import (
    SpectralParams,
    amplification_roots,
    group_velocity_ratio,
    polynomial,
    stability_multipliers,
    xi_recursion,
)
from fadrkit.grid_stencil import Grid2D
from fadrkit.linsolve import BlockDiagSpec, GSConfig, gauss_seidel
from fadrkit.ml_special import mittag_leffler
from fadrkit.theta_fadr import run_brunner_case
from oracles import dense_oracle, linear_check, vorticity_coefficients

pytestmark = pytest.mark.slow

T_BRUNNER = 0.35
LADDER = [T_BRUNNER / 2**k for k in range(4, 10)]
E_HALF_MINUS_ONE = 0.42758357615580700441  # e * erfc(1), 30-digit series sum


def brunner_slope(kind, alpha):
    rows = [(dt, run_brunner_case(kind, alpha, 1.0, dt, 51, T_BRUNNER)[0]) for dt in LADDER]
    return fit_convergence_slope(rows)


def test_criterion_01_brunner_dirichlet(criterion):
    start = time.perf_counter()
    slope = brunner_slope("dirichlet", 1.0)
    elapsed = time.perf_counter() - start
    ok = abs(slope - 1.0) <= 0.15 and elapsed < 60
    criterion(1, ok, f"Dirichlet alpha=1 slope {slope:.3f} (1 +- 0.15), ladder {elapsed:.1f} s (< 60 s)")
    assert ok


@pytest.mark.xfail(strict=True, reason="L1 time stepping stays first order at fixed t > 0 for alpha = 0.67, 0.9")
def test_criterion_02_brunner_neumann_and_fractional(criterion):
    neumann = brunner_slope("neumann", 1.0)
    frac = {(kind, a): brunner_slope(kind, a) for kind in ("dirichlet", "neumann") for a in (0.5, 0.67, 0.9)}
    ok = abs(neumann - 1.0) <= 0.15 and all(0.05 < s < 0.95 for s in frac.values())
    detail = ", ".join(f"{k[0][0].upper()} a={k[1]}: {s:.3f}" for k, s in frac.items())
    criterion(2, ok, f"Neumann alpha=1 slope {neumann:.3f}; fractional slopes (need (0.05, 0.95)) {detail}")
    assert ok


def test_criterion_03_mittag_leffler(criterion):
    z = np.linspace(-5, 5, 201)
    err1 = max(abs(mittag_leffler(float(x), 1.0) - math.exp(x)) for x in z)
    err2 = abs(mittag_leffler(-1.0, 0.5) - E_HALF_MINUS_ONE)
    ok = err1 <= 1e-10 and err2 <= 1e-10
    criterion(3, ok, f"max |E_1 - exp| on [-5, 5] = {err1:.1e}, |E_0.5(-1) - ref| = {err2:.1e} (<= 1e-10)")
    assert ok


def test_criterion_04_l1_linear_exactness(criterion):
    uniform = 0.01 * np.arange(200)
    doubling = np.concatenate([[0.0], np.cumsum(np.repeat([1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2], 20))])
    worst = max(linear_check(times, a) for a in (0.5, 0.67, 0.9) for times in (uniform, doubling))
    ok = worst <= 1e-10
    criterion(4, ok, f"worst step error on uniform and doubling grids {worst:.1e} (<= 1e-10)")
    assert ok


def test_criterion_05_gauss_seidel_oracle(criterion, rng):
    worst, monotone = 0.0, True
    for n in (8, 12):
        for bc in ({e: "dirichlet" for e in ("west", "east", "south", "north")},
                   {"west": "periodic", "east": "periodic", "south": "dirichlet", "north": "dirichlet"}):
            g = Grid2D(n, n, 0.0, 1.0, 0.0, 1.0, bc)
            for kind in ("poisson", "vorticity"):
                if kind == "poisson":
                    r1, r2 = g.dx**-2, g.dy**-2
                    R = -2 * (r1 + r2)
                else:
                    r1, r2, R = vorticity_coefficients(g)
                rhs = rng.normal(size=g.shape)
                guess = np.zeros(g.shape)
                guess[:, 0] = 1.0
                ref, _ = dense_oracle(g, r1, r2, R, rhs, guess)
                log = []
                x = gauss_seidel(BlockDiagSpec.from_grid(g, r1, r2, R), rhs, guess, GSConfig(rel_tol=1e-12),
                                 residual_log=log).x
                worst = max(worst, np.linalg.norm(x - ref) / np.linalg.norm(ref))
                monotone &= bool(np.all(np.diff(log) <= 1e-15))
    ok = worst <= 1e-6 and monotone
    criterion(5, ok, f"worst relative deviation from dense solve {worst:.1e} (<= 1e-6), residual monotone: {monotone}")
    assert ok


XI_WITNESS = dict(alpha=0.5, theta=0.5, Pe=0.0, Da=0.0, kh=math.pi / 2, Nc=1.0)


@pytest.mark.xfail(strict=True, reason="the recursion as written leaves xi >= 0, after which the induction step fails")
def test_criterion_06_xi_recursion(criterion, rng):
    sampled = broken = 0
    scheme_sign_broken = 0
    for alpha in (0.5, 0.9):
        for theta in (0.5, 1.0):
            for _ in range(10):
                p = SpectralParams(alpha=alpha, theta=theta, Pe=rng.uniform(0, 1), Da=-rng.uniform(0, 0.5))
                Nc = rng.uniform(0, 0.5)
                for kh in np.linspace(0.1, math.pi, 8):
                    mu1, mu2 = stability_multipliers(p, kh, Nc)
                    if abs(mu1) >= 1 and abs(mu2) <= 1:
                        sampled += 1
                        broken += bool(np.any(np.diff(xi_recursion(p, kh, Nc, 500)) > 1e-15))
                        scheme_sign_broken += bool(np.any(np.diff(xi_recursion(p, kh, Nc, 500, memory_sign=-1)) > 1e-15))
    w = dict(XI_WITNESS)
    kh, Nc = w.pop("kh"), w.pop("Nc")
    growth = float(xi_recursion(SpectralParams(**w), kh, Nc, 100).max())
    ok = sampled > 0 and broken == 0 and growth > 1.0
    criterion(6, ok, f"{broken}/{sampled} sampled points lose monotonicity over 500 steps "
                     f"({scheme_sign_broken} with the scheme's memory sign); witness max xi = {growth:.3g} (> 1)")
    assert ok


@pytest.mark.xfail(strict=True, reason="at alpha = 0.9 the selected root sits inside the ring of truncation roots")
def test_criterion_07_dispersion_identities(criterion, rng):
    g1 = 0.0
    for _ in range(20):
        p = SpectralParams(alpha=rng.uniform(0.1, 1.0), theta=rng.uniform(0, 1), Pe=rng.uniform(0, 2), Da=0.0)
        Nc = rng.uniform(0, 1)
        g1 = max(g1, abs(np.polyval(polynomial(p, 0.0, Nc), 1.0)), abs(amplification_roots(p, 0.0, Nc)[1] - 1))
    vieta = 0.0
    for _ in range(10):
        p = SpectralParams(alpha=rng.uniform(0.3, 1.0), theta=rng.uniform(0, 1), Pe=rng.uniform(0, 1))
        kh, Nc = rng.uniform(0.05, math.pi), rng.uniform(0.05, 1)
        roots, _ = amplification_roots(p, kh, Nc)
        c = polynomial(p, kh, Nc)
        ref = (-1) ** p.n_poly * c[-1] / c[0]
        vieta = max(vieta, abs(np.prod(roots) - ref) / abs(ref))
    vg = []
    for theta in (0.5, 1.0):
        for Pe in (0.001, 0.01):
            p = SpectralParams(alpha=1.0, theta=theta, Pe=Pe, Da=0.0)
            vg.append(group_velocity_ratio(p, 1e-3, 0.1, amplification_roots(p, 1e-3, 0.1)[1]))
    vg_err = max(abs(v - 1) for v in vg)
    # the plotted configuration: alpha = 0.9, theta = 0.5, the smallest Pe of the contour grid
    shift, worst_at = 0.0, None
    for kh in np.linspace(0.3, 3.0, 5):
        for Nc in (0.1, 0.5):
            g75 = amplification_roots(SpectralParams(alpha=0.9, theta=0.5, Pe=0.001, n_poly=75), kh, Nc)[1]
            g76 = amplification_roots(SpectralParams(alpha=0.9, theta=0.5, Pe=0.001, n_poly=76), kh, Nc)[1]
            if abs(g75 - g76) / abs(g75) > shift:
                shift, worst_at = abs(g75 - g76) / abs(g75), (kh, Nc)
    ok = g1 <= 1e-10 and vieta <= 1e-8 and vg_err <= 0.05 and shift < 1e-3
    criterion(7, ok, f"G=1 residual {g1:.1e}, Vieta {vieta:.1e}, |Vg - 1| at kh=1e-3 (alpha=1) {vg_err:.1e}, "
                     f"n_poly 75->76 shift {shift:.1e} at (kh, Nc) = ({worst_at[0]:.2f}, {worst_at[1]}) (< 1e-3)")
    assert ok


def test_criterion_08_channel_steady_state(criterion):
    params = ChannelParams(Re=70.0, We=10.0, nu=0.3, mu=0.0, alpha=0.5)
    run = run_channel(params, grid=channel_grid(76, 51), schedule=Schedule(n_steps=200))
    worst = max(d.intensity for d in run.diagnostics)
    ok = len(run.diagnostics) == 200 and worst < 1e-6
    criterion(8, ok, f"max |Omega - Omega_base| over 200 steps {worst:.1e} (< 1e-6)")
    assert ok


@pytest.mark.xfail(strict=True, reason="higher Re keeps more of the seeded structure; see the decisions ledger")
def test_criterion_09_channel_orderings(criterion):
    schedule = Schedule(n_steps=200)
    intensity = {}
    for alpha in (0.5, 2 / 3):
        for nu in (0.3, 0.6):
            for Re in (70.0, 1000.0):
                params = ChannelParams(Re=Re, We=10.0, nu=nu, mu=1e-2, alpha=alpha)
                run = run_channel(params, schedule=schedule, perturbation=1e-3, seed=1)
                intensity[alpha, nu, Re] = run.intensity
    a = all(intensity[al, nu, 70.0] > intensity[al, nu, 1000.0] for al in (0.5, 2 / 3) for nu in (0.3, 0.6))
    b = intensity[0.5, 0.3, 70.0] >= intensity[2 / 3, 0.3, 70.0]
    c = intensity[0.5, 0.3, 70.0] >= intensity[0.5, 0.6, 70.0]
    table = ", ".join(f"(a={al:.2f}, nu={nu}, Re={Re:g}) {v:.3e}" for (al, nu, Re), v in intensity.items())
    criterion(9, a and b and c, f"(a) {a}, (b) {b}, (c) {c}; intensities {table}")
    assert a and b and c


def test_criterion_10_determinism(criterion, tmp_path):
    configs = sorted(p for p in (resources.files("fadrkit") / "configs").iterdir() if p.name.endswith(".yaml"))
    compared, mismatched = 0, []
    for path in configs:
        mode = yaml.safe_load(path.read_text())["mode"]
        outs = [tmp_path / f"{path.name}.{k}" for k in (1, 2)]
        for out in outs:
            assert main([mode, "--config", str(path), "--out", str(out)]) == 0
        for f in sorted(outs[0].glob("*.csv")):
            compared += 1
            if f.read_bytes() != (outs[1] / f.name).read_bytes():
                mismatched.append(f"{path.name}:{f.name}")
    ok = compared > 0 and not mismatched
    criterion(10, ok, f"{compared} CSV files from {len(configs)} shipped configs, byte-identical: {not mismatched}")
    assert ok
