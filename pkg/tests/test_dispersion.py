import csv
import math

import mpmath
import numpy as np
import pytest
import scipy.linalg

from fadrkit.dispersion import (
    DispersionPoint,
    RootFindingError,
    SpectralParams,
    amplification_roots,
    coefficients,
    contour_scan,
    group_velocity_ratio,
    phase_speed_ratio,
    polynomial,
    stability_multipliers,
    write_csv,
    xi_recursion,
)


def oracle_coefficients(alpha, theta, Pe, Da, q, kh, Nc, n):
    """Expand C0 G^n + C1 G^(n-1) + sum_j r_j (G^(n-j+1) - G^(n-j)) term by term."""
    g = math.gamma(2 - alpha)
    C0 = 1 + 2 * Pe * theta * g * (1 - math.cos(kh))
    C1 = (
        -1
        + q * Nc * g * (1 - 4 / 3 * math.cos(kh) + math.cos(2 * kh) / 3)
        + 2 * Pe * (1 - theta) * g * (1 - math.cos(kh))
        - Da * Nc * g
        + 1j * Nc * g * (math.sin(kh) + 2 / 3 * q * math.sin(kh) - q / 3 * math.sin(2 * kh))
    )
    poly = np.zeros(n + 1, dtype=complex)  # poly[k] multiplies G^(n-k)
    poly[0] += C0
    poly[1] += C1
    for j in range(2, n + 1):
        r = j ** (1 - alpha) - (j - 1) ** (1 - alpha)
        poly[j - 1] += r
        poly[j] -= r
    return poly


def mp_roots(coef):
    with mpmath.workdps(30):
        return np.array([complex(z) for z in mpmath.polyroots([mpmath.mpc(c) for c in coef], maxsteps=400, extraprec=300)])


def oracle_selected_root(p, kh, Nc, steps=60):
    """Nearest-root continuation from G = 1 using companion-matrix eigenvalues."""
    g = 1.0 + 0j
    for k in np.linspace(0.0, kh, steps + 1):
        coef = oracle_coefficients(p.alpha, p.theta, p.Pe, p.Da, p.q, k, Nc, p.n_poly)
        z = scipy.linalg.eigvals(scipy.linalg.companion(coef))
        g = z[np.argmin(np.abs(z - g))]
    return g


def test_polynomial_matches_term_expansion(rng):
    for _ in range(5):
        a, th, Pe, Da = rng.uniform(0.3, 1.0), rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(-0.1, 0.1)
        kh, Nc = rng.uniform(0, np.pi), rng.uniform(0, 1)
        p = SpectralParams(alpha=a, theta=th, Pe=Pe, Da=Da, n_poly=30)
        assert np.allclose(polynomial(p, kh, Nc), oracle_coefficients(a, th, Pe, Da, 0.5, kh, Nc, 30), atol=1e-14)


def test_g_one_is_root_at_zero_wavenumber(rng):
    for _ in range(20):
        p = SpectralParams(alpha=rng.uniform(0.2, 1.0), theta=rng.uniform(0, 1), Pe=rng.uniform(0, 2), Da=0.0)
        Nc = rng.uniform(0, 1)
        coef = polynomial(p, 0.0, Nc)
        assert abs(np.polyval(coef, 1.0)) <= 1e-10
        _, g = amplification_roots(p, 0.0, Nc)
        assert abs(g - 1.0) <= 1e-10


def test_coefficient_identities(rng):
    for _ in range(10):
        a = rng.uniform(0.2, 1.0)
        p = SpectralParams(alpha=a, theta=rng.uniform(0, 1), Pe=rng.uniform(0, 2), Da=rng.uniform(-0.1, 0.1))
        Nc = rng.uniform(0, 1)
        C0, C1 = coefficients(p, 0.0, Nc)
        assert C0 == 1.0
        assert C1 == pytest.approx(-1 - p.Da * Nc * math.gamma(2 - a), abs=1e-15)
        for kh in rng.uniform(0, 2 * np.pi, 5):
            assert abs(coefficients(p, kh, Nc)[0]) >= 1.0
    p = SpectralParams(alpha=0.7, theta=0.3, Pe=0.0)
    assert coefficients(p, 1.3, 0.4)[0] == 1.0
    mu1, mu2 = stability_multipliers(p, 1.3, 0.4)
    assert mu1 == coefficients(p, 1.3, 0.4)[0] and mu2 == -coefficients(p, 1.3, 0.4)[1]


def test_vieta_and_root_count(rng):
    for _ in range(10):
        p = SpectralParams(alpha=rng.uniform(0.3, 1.0), theta=rng.uniform(0, 1), Pe=rng.uniform(0, 1), Da=rng.uniform(-0.05, 0.05))
        kh, Nc = rng.uniform(0.01, np.pi), rng.uniform(0.01, 1)
        roots, _ = amplification_roots(p, kh, Nc)
        coef = polynomial(p, kh, Nc)
        assert len(roots) == p.n_poly
        prod = np.prod(roots)
        ref = (-1) ** p.n_poly * coef[-1] / coef[0]
        assert abs(prod - ref) <= 1e-8 * abs(ref)


def test_roots_match_high_precision_oracle():
    p = SpectralParams(alpha=0.9, theta=0.5, Pe=0.01, Da=0.0)
    roots, _ = amplification_roots(p, 0.7, 0.2)
    ref = mp_roots(oracle_coefficients(0.9, 0.5, 0.01, 0.0, 0.5, 0.7, 0.2, 75))
    for z in ref:
        assert np.min(np.abs(roots - z)) < 1e-9


def test_pinned_point_selected_root_inside_unit_circle():
    p = SpectralParams(alpha=0.9, theta=0.5, Pe=0.01, Da=0.0)
    _, g = amplification_roots(p, 0.5, 0.1)
    ref = oracle_selected_root(p, 0.5, 0.1)
    assert abs(g - ref) < 1e-8
    assert abs(g) < 1.0


def test_pinned_phase_error_against_oracle():
    p = SpectralParams(alpha=0.9, theta=0.5, Pe=0.001, Da=0.01)
    kh, Nc = 0.3, 0.05
    _, g = amplification_roots(p, kh, Nc)
    gref = oracle_selected_root(p, kh, Nc)
    with mpmath.workdps(30):
        X = mpmath.mpc(p.Da * Nc - kh**2 * p.Pe, -kh * Nc)
        beta = mpmath.atan2(gref.imag, gref.real)
        ratio = 1j * beta / X ** (1 / mpmath.mpf(p.alpha))
        ref = float(abs(1 - ratio))
    _, dc = phase_speed_ratio(p, kh, Nc, g)
    assert dc == pytest.approx(ref, rel=1e-6)
    assert dc == pytest.approx(0.14369, abs=1e-5)


def test_phase_ratio_alpha_one_is_classical():
    # with alpha = 1 the memory terms vanish and G = -C1 / C0
    p = SpectralParams(alpha=1.0, theta=0.5, Pe=0.0, Da=0.0)
    for kh in (0.2, 0.9, 2.0):
        Nc = 0.3
        s = math.sin(kh) + math.sin(kh) / 3 - math.sin(2 * kh) / 6
        G = 1 - 0.5 * Nc * (1 - 4 / 3 * math.cos(kh) + math.cos(2 * kh) / 3) - 1j * Nc * s
        _, g = amplification_roots(p, kh, Nc)
        assert g == pytest.approx(G, abs=1e-12)
        ratio, _ = phase_speed_ratio(p, kh, Nc, g)
        assert ratio == pytest.approx(-math.atan2(G.imag, G.real) / (kh * Nc), abs=1e-12)


def test_real_positive_root_has_zero_phase():
    p = SpectralParams(alpha=0.5, theta=1.0, Pe=0.1, Da=-0.1)
    ratio, dc = phase_speed_ratio(p, 0.4, 0.2, 0.8 + 0j)
    assert ratio == 0 and dc == 1.0
    with pytest.raises(ZeroDivisionError):
        phase_speed_ratio(p, 0.0, 0.2, 1.0 + 0j)


def test_long_wave_group_velocity_alpha_one():
    for theta in (0.5, 1.0):
        for Pe in (0.001, 0.01):
            p = SpectralParams(alpha=1.0, theta=theta, Pe=Pe, Da=0.0)
            _, g = amplification_roots(p, 1e-3, 0.1)
            assert group_velocity_ratio(p, 1e-3, 0.1, g) == pytest.approx(1.0, rel=0.05)


def test_exact_group_velocity_formula_matches_derivative():
    # Vg_num / Vg_exact times Vg_exact must give -d beta/d(kh); check the exact part
    p = SpectralParams(alpha=0.9, theta=0.5, Pe=0.01, Da=0.0)
    kh, Nc, h = 0.4, 0.2, 1e-6

    def omega_dt(k):
        return 1j * complex(np.power(complex(-k * k * p.Pe, -k * Nc), 1 / p.alpha))

    vg_exact = ((omega_dt(kh + h) - omega_dt(kh - h)) / (2 * h)).real
    _, g = amplification_roots(p, kh, Nc)
    ratio = group_velocity_ratio(p, kh, Nc, g)
    gp = amplification_roots(p, kh + 1e-4, Nc)[1]
    gm = amplification_roots(p, kh - 1e-4, Nc)[1]
    dbeta = (np.angle(gp) - np.angle(gm)) / 2e-4
    assert ratio == pytest.approx(-dbeta / vg_exact, rel=1e-5)


def test_favorable_point_has_positive_group_velocity():
    p = SpectralParams(alpha=0.9, theta=0.5, Pe=0.001, Da=0.0)
    _, g = amplification_roots(p, 0.3, 0.2)
    assert group_velocity_ratio(p, 0.3, 0.2, g) > 0


@pytest.mark.parametrize("alpha", [0.5, 0.8])
def test_root_stable_in_polynomial_order(alpha):
    for kh in np.linspace(0.05, np.pi, 6):
        for Nc in (0.05, 0.5, 1.0):
            p75 = SpectralParams(alpha=alpha, theta=0.5, Pe=0.01, n_poly=75)
            g75 = amplification_roots(p75, kh, Nc)[1]
            g76 = amplification_roots(SpectralParams(alpha=alpha, theta=0.5, Pe=0.01, n_poly=76), kh, Nc)[1]
            assert abs(g75 - g76) < 1e-3 * abs(g75)


def test_truncation_ring_moves_selected_root_near_alpha_one():
    # |G| sits among the spurious roots of the truncated memory sum, which reshuffle with n
    shifts = []
    for n in (75, 76):
        roots, g = amplification_roots(SpectralParams(alpha=0.9, theta=0.5, Pe=0.01, n_poly=n), 3.0, 0.5)
        ring = np.sort(np.abs(roots))[-3:]
        assert ring[0] < abs(g) * 1.25 and abs(g) < ring[-1]
        shifts.append(g)
    assert abs(shifts[0] - shifts[1]) > 1e-2 * abs(shifts[0])


def test_periodic_in_wavenumber():
    p = SpectralParams(alpha=0.8, theta=0.5, Pe=0.01, Da=-0.01)
    assert np.allclose(polynomial(p, 0.6, 0.3), polynomial(p, 0.6 + 2 * np.pi, 0.3), atol=1e-13)
    g1 = amplification_roots(p, 0.6, 0.3)[1]
    g2 = amplification_roots(p, 0.6 + 2 * np.pi, 0.3)[1]
    assert abs(g1 - g2) < 1e-9


def test_negative_wavenumber_is_conjugate():
    p = SpectralParams(alpha=0.8, theta=0.5, Pe=0.01)
    assert amplification_roots(p, -0.6, 0.3)[1] == pytest.approx(np.conj(amplification_roots(p, 0.6, 0.3)[1]))


def test_mask_threshold():
    pt = DispersionPoint(kh=0.5, Nc=0.1, Vg_ratio=0.8, delta_c=0.2)
    assert not pt.favorable
    pt.delta_c = 0.05
    assert pt.favorable
    pt.flags.append("x")
    assert not pt.favorable


def test_contour_scan_and_csv(tmp_path):
    p = SpectralParams(alpha=1.0, theta=1.0, Pe=0.001, Da=0.0, n_poly=10,
                       kh_range=(0.1, 1.0, 4), Nc_range=(0.05, 0.2, 3))
    res = contour_scan(p)
    assert res.mask.shape == (3, 4) and len(res.points) == 12
    assert res.mask[0, 0]
    assert all(pt.delta_c >= 0 and abs(pt.beta) <= np.pi for pt in res.points)
    path = tmp_path / "scan.csv"
    write_csv(res, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["alpha", "theta", "Pe", "Da", "Nc", "kh", "ReG", "ImG", "beta", "delta_c", "Vg_ratio", "favorable"]
    assert len(rows) == 13
    empty = contour_scan(SpectralParams(alpha=0.5, theta=1.0, Pe=0.1, kh_range=(0.1, 1.0, 0)))
    assert empty.points == [] and empty.mask.size == 0


def test_zero_wavenumber_flagged_in_scan():
    p = SpectralParams(alpha=0.9, theta=1.0, Pe=0.01, n_poly=10, kh_range=(0.0, 0.5, 3), Nc_range=(0.1, 0.1, 1))
    res = contour_scan(p)
    assert res.points[0].flags and not res.mask[0, 0]


def test_params_validated():
    for kw in ({"alpha": 0.0}, {"alpha": 0.5, "theta": 2.0}, {"alpha": 0.5, "n_poly": 1}, {"alpha": 0.5, "q": 0.2}):
        kw = {"theta": 0.5, "Pe": 0.1, **kw}
        with pytest.raises(ValueError):
            SpectralParams(**kw)


def test_root_failure_carries_coefficients(monkeypatch):
    import fadrkit.dispersion as d

    monkeypatch.setattr(d.np, "roots", lambda c: np.full(len(c) - 1, np.nan + 0j))
    with pytest.raises(RootFindingError) as info:
        amplification_roots(SpectralParams(alpha=0.5, theta=1.0, Pe=0.1, n_poly=5), 0.3, 0.1)
    assert len(info.value.coefficients) == 6


def test_xi_trivial_parameters():
    p = SpectralParams(alpha=0.6, theta=0.5, Pe=0.0, Da=0.0)
    xi = xi_recursion(p, 0.7, 0.0, 50)
    assert np.allclose(xi, 1.0, atol=1e-14)


def theorem_hypotheses(p, kh, Nc):
    mu1, mu2 = stability_multipliers(p, kh, Nc)
    return abs(mu1) >= 1.0 and abs(mu2) <= 1.0


def hypothesis_points(rng, alpha, theta, draws=12):
    for _ in range(draws):
        p = SpectralParams(alpha=alpha, theta=theta, Pe=rng.uniform(0, 1), Da=-rng.uniform(0, 0.5))
        Nc = rng.uniform(0, 0.5)
        for kh in np.linspace(0.1, np.pi, 6):
            if theorem_hypotheses(p, kh, Nc):
                yield p, kh, Nc


def test_xi_induction_step_while_nonnegative(rng):
    # the inequality chain xi_n <= xi_{n-1} needs xi_{n-1} >= 0; the literal
    # recursion keeps it exactly up to the first sign change
    checked = 0
    for alpha in (0.5, 0.9):
        for theta in (0.5, 1.0):
            for p, kh, Nc in hypothesis_points(rng, alpha, theta):
                xi = xi_recursion(p, kh, Nc, 200)
                stop = np.argmax(xi < 0) if np.any(xi < 0) else len(xi)
                assert np.all(np.diff(xi[: stop + 1]) <= 1e-15)
                checked += 1
    assert checked > 50


def test_xi_scheme_sign_bounded(rng):
    # with the sign the memory sum carries in the scheme, xi stays in [0, xi_0];
    # when |mu2| >= r_2 every coefficient of the expanded recursion is non-negative
    checked = 0
    for alpha in (0.5, 0.9):
        r2 = 2 ** (1 - alpha) - 1
        for theta in (0.5, 1.0):
            for p, kh, Nc in hypothesis_points(rng, alpha, theta):
                xi = xi_recursion(p, kh, Nc, 200, memory_sign=-1)
                assert xi.min() >= 0 and xi.max() <= 1 + 1e-14
                if abs(stability_multipliers(p, kh, Nc)[1]) >= r2:
                    assert np.all(np.diff(xi) <= 1e-15)
                    checked += 1
    assert checked > 50


def test_xi_growth_outside_hypotheses():
    p = SpectralParams(alpha=0.5, theta=0.5, Pe=0.0, Da=0.0)
    assert not theorem_hypotheses(p, np.pi / 2, 1.0)
    xi = xi_recursion(p, np.pi / 2, 1.0, 50)
    assert xi.max() > 1.0


def test_xi_memory_sign_option():
    p = SpectralParams(alpha=0.5, theta=1.0, Pe=0.5, Da=-0.1)
    a = xi_recursion(p, 1.0, 0.2, 20)
    b = xi_recursion(p, 1.0, 0.2, 20, memory_sign=-1)
    assert a[1] == b[1] and not np.allclose(a, b)
    with pytest.raises(ValueError):
        xi_recursion(p, 1.0, 0.2, 5, memory_sign=0)
