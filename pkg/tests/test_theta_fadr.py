import logging
import math

import numpy as np
import pytest

from fadrkit.caputo import AdaptiveConfig, L1History
from fadrkit.grid_stencil import Grid2D
from fadrkit.ml_special import mittag_leffler
from fadrkit.theta_fadr import (
    FADRProblem,
    SafeBox,
    SolutionBlowup,
    ThetaScheme,
    brunner_problem,
    dim_groups,
    integrate,
    run_brunner_case,
    step,
    strip_grid,
)


def run(problem, theta, t_final, dt, **kw):
    for _rec, hist in integrate(problem, ThetaScheme(theta), t_final, dt, **kw):
        pass
    return hist


def test_static_problem_unchanged(rng):
    g = strip_grid(20, 0.0, 1.0)
    u0 = np.tile(rng.normal(size=(20, 1)), (1, 5))
    u0[-1] = u0[0]
    p = FADRProblem(g, 0.6, u0, diffusivity=0.0)
    hist = run(p, 0.5, 0.1, 0.01)
    assert len(hist) == 11
    assert np.allclose(hist.latest, u0, atol=1e-13)


def test_near_integer_heat_equation():
    g = strip_grid(101, 0.0, 1.0, bc="dirichlet")
    X, _ = g.mesh()
    u0 = np.sin(np.pi * X)
    p = FADRProblem(g, 0.999, u0, diffusivity=1.0)
    u = run(p, 1.0, 0.05, 1e-4).latest
    exact = math.exp(-np.pi**2 * 0.05) * u0
    assert np.max(np.abs(u - exact)) <= 0.02 * np.max(np.abs(exact))


@pytest.mark.parametrize("alpha", [0.5, 0.8])
def test_linear_reaction_relaxation(alpha):
    g = strip_grid(8, 0.0, 1.0)
    lam = -1.5
    p = FADRProblem(g, alpha, np.ones(g.shape), diffusivity=0.0, reaction=lam)
    norms = []
    for rec, hist in integrate(p, ThetaScheme(1.0), 1.0, 1e-3):
        norms.append(rec.norm)
    assert np.all(np.diff(norms) < 0)
    exact = mittag_leffler(lam, alpha)
    assert hist.latest[3, 2] == pytest.approx(exact, rel=5e-3)


def dense_heat_step(u0, dx, dt, theta, k2, lam):
    """Classical theta step of u_t = k2 u_xx + lam u on a periodic line."""
    n = len(u0)
    L = (np.roll(np.eye(n), 1, 1) - 2 * np.eye(n) + np.roll(np.eye(n), -1, 1)) / dx**2
    A = np.eye(n) / dt - theta * k2 * L
    b = u0 / dt + (1 - theta) * k2 * L @ u0 + lam * u0
    return np.linalg.solve(A, b)


@pytest.mark.parametrize("theta", [0.0, 0.5, 1.0])
def test_alpha_one_reduces_to_classical_theta_step(theta, rng):
    n = 24
    g = strip_grid(n + 1, 0.0, 1.0)
    line = rng.normal(size=n)
    u0 = np.tile(np.append(line, line[0])[:, None], (1, 5))
    p = FADRProblem(g, 1.0, u0, diffusivity=0.3, reaction=-0.7)
    u1 = step(p, ThetaScheme(theta), L1History(0.0, u0), 1e-3)
    ref = dense_heat_step(line, g.dx, 1e-3, theta, 0.3, -0.7)
    assert np.allclose(u1[:-1, 2], ref, atol=1e-10)


def test_theta_continuity(rng):
    g = Grid2D(16, 16, bc={e: "dirichlet" for e in ("west", "east", "south", "north")})
    u0 = rng.normal(size=g.shape)
    p = FADRProblem(g, 0.7, u0, diffusivity=0.5, velocity=(1.0, -0.5), reaction=-0.2)
    h = L1History(0.0, p.initial_state())
    a = step(p, ThetaScheme(0.5), h, 1e-3)
    b = step(p, ThetaScheme(0.5 + 1e-6), h, 1e-3)
    d = np.linalg.norm(a - b)
    assert 0 < d < 1e-4 * np.linalg.norm(a)


@pytest.mark.parametrize("alpha,theta", [(0.5, 1.0), (0.9, 0.5), (0.9, 1.0)])
def test_asymptotic_stability_periodic(alpha, theta):
    n = 41
    g = strip_grid(n, 0.0, 2.0)
    X, _ = g.mesh()
    u0 = np.exp(-20 * (X - 1.0) ** 2)
    dt = 0.02
    # Nc = c dt^a / dx and Pe = gamma dt^a / dx^2 kept small
    c = 0.2 * g.dx / dt**alpha
    gamma = 0.1 * g.dx**2 / dt**alpha
    p = FADRProblem(g, alpha, u0, diffusivity=gamma, velocity=(c, 0.0), reaction=-0.01)
    hist = run(p, theta, 10.0, dt)
    assert np.max(np.abs(hist.latest)) <= 1.0001 * np.max(np.abs(u0))


def test_dim_groups_examples():
    g = strip_grid(11, 0.0, 10.0)  # dx = 1
    p = FADRProblem(g, 0.5, np.zeros(g.shape), diffusivity=1.0, velocity=(1.0, 0.0), reaction=0.0)
    d = dim_groups(p, 1.0)
    assert (d.Nc, d.Pe, d.Da) == (1.0, 1.0, 0.0)
    p = FADRProblem(g, 0.5, np.zeros(g.shape), velocity=(2.0, 0.0), reaction=3.0)
    d = dim_groups(p, 0.01, dx=0.1)
    assert d.Nc == pytest.approx(2.0)
    assert d.Da == pytest.approx(0.15)
    p = FADRProblem(g, 0.5, np.zeros(g.shape), reaction=3.0)
    assert not dim_groups(p, 0.01).da_defined


def test_adaptive_integration_grows_steps():
    g = strip_grid(10, 0.0, 1.0)
    p = FADRProblem(g, 0.5, np.ones(g.shape), diffusivity=0.0, reaction=-1e-3)
    dts = [rec.dt for rec, _ in integrate(p, ThetaScheme(1.0), 0.3, 1e-3, adaptive=AdaptiveConfig())]
    assert dts[0] == 1e-3 and max(dts) == pytest.approx(1.6e-2)
    assert np.all(np.diff(dts[:-1]) >= 0)


def test_blowup_reports_step():
    g = strip_grid(8, 0.0, 1.0)
    p = FADRProblem(g, 0.5, np.ones(g.shape), diffusivity=0.0,
                    reaction=lambda t, u: np.where(t > 0.015, np.inf, 0.0) * u)
    with pytest.raises(SolutionBlowup) as info:
        run(p, 1.0, 0.1, 0.01)
    assert info.value.step_index == 3


def test_safe_box_warning(caplog):
    g = strip_grid(21, 0.0, 1.0)
    p = FADRProblem(g, 0.9, np.ones(g.shape), velocity=(50.0, 0.0))
    with caplog.at_level(logging.WARNING, logger="fadrkit.theta_fadr"):
        run(p, 1.0, 0.03, 0.01, safe_box=SafeBox(nc_max=1.0))
    assert sum("safe box" in r.message for r in caplog.records) == 1


def test_problem_validation():
    g = strip_grid(8, 0.0, 1.0)
    with pytest.raises(ValueError):
        FADRProblem(g, 1.2, np.zeros(g.shape))
    with pytest.raises(ValueError):
        FADRProblem(g, 0.5, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        FADRProblem(g, 0.5, np.zeros(g.shape), diffusivity=-1.0)
    with pytest.raises(ValueError):
        ThetaScheme(1.5)
    gn = strip_grid(8, 0.0, 1.0, bc="neumann")
    with pytest.raises(ValueError):
        FADRProblem(gn, 0.5, np.zeros(gn.shape), bc_values={"west": 1.0})


@pytest.mark.parametrize("kind", ["dirichlet", "neumann"])
def test_brunner_initial_error_zero(kind):
    err, u = run_brunner_case(kind, 0.5, 1.0, 0.01, T=0.0)
    assert err == 0.0
    p = brunner_problem(kind, 0.5)
    assert np.array_equal(u, p.u0)


def test_brunner_error_decreases_on_short_ladder():
    errs = [run_brunner_case("dirichlet", 0.67, 1.0, 0.35 / 2**k, n_points=31)[0] for k in (3, 4, 5)]
    assert errs[0] > errs[1] > errs[2]
