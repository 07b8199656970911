import numpy as np
import pytest

from brinkman_hdiv.mesh import build_rect_mesh
from brinkman_hdiv.problem import (DARCY, FOOT, MILLIDARCY, SPE10_SHAPE, BrinkmanProblem, IngestionError,
                                   analytic_case, channel_case, channel_profile, channel_profile_dy,
                                   darcy_to_m2, element_quadrature_mean, load_spe10, m2_to_darcy,
                                   sigma_bar_sq, sigma_contrast, spe10_case, streak_mask)


def test_sigma_bar_average():
    m = build_rect_mesh(1, 1)  # two triangles, one interior edge
    s2 = np.array([1.0, 4.0])
    e = m.interior_edges
    assert np.allclose(sigma_bar_sq(s2, m, e), 2.5)
    b = m.boundary_edges
    own = s2[m.edge_elements[b, 0]]
    assert np.allclose(sigma_bar_sq(s2, m, b), own)
    assert sigma_contrast(s2, m) == 4.0


def test_problem_validation():
    with pytest.raises(ValueError):
        BrinkmanProblem(t=-1.0)
    with pytest.raises(ValueError):
        BrinkmanProblem(t=1.0, sigma2=0.0)
    with pytest.raises(ValueError):
        BrinkmanProblem(t=1.0, normal_tags=("inflow",), pressure_bc={"inflow": lambda x: 0 * x[..., 0]})
    p = BrinkmanProblem(t=0.0, sigma2=lambda x: -x[..., 0])
    with pytest.raises(ValueError):
        p.sigma2_on(build_rect_mesh(2, 2))
    assert p.active_nitsche_tags == ()


@pytest.mark.parametrize("t", [1e-6, 1.0, 1e3])
def test_analytic_case_consistency(t):
    beta = 3.1
    pr = analytic_case(beta, t)
    m = build_rect_mesh(8, 8)
    assert abs(element_quadrature_mean(pr.exact.p, m, 12)) < 1e-10
    x = np.array([[0.3, 0.7], [0.9, 0.2]])
    h = 1e-6
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    # u = grad p, div u = 0 and lap u = 0 by finite differences
    gp = np.stack([(pr.exact.p(x + ex) - pr.exact.p(x - ex)), (pr.exact.p(x + ey) - pr.exact.p(x - ey))], -1) / (2 * h)
    assert np.allclose(gp, pr.exact.u(x), atol=1e-6)
    G = pr.exact.grad_u(x)
    Gfd = np.stack([(pr.exact.u(x + ex) - pr.exact.u(x - ex)), (pr.exact.u(x + ey) - pr.exact.u(x - ey))], -1) / (2 * h)
    assert np.allclose(G, Gfd, atol=1e-5)
    assert np.allclose(np.trace(G, axis1=-2, axis2=-1), 0, atol=1e-10)
    assert np.allclose(pr.f(x), 2.0 * pr.exact.u(x))


def test_analytic_case_rejects_small_beta():
    with pytest.raises(ValueError):
        analytic_case(1.0, 1.0)


@pytest.mark.parametrize("t", [0.5, 0.05, 0.005])
def test_channel_profile_solves_ode(t):
    y = np.linspace(0.05, 0.95, 37)
    h = 1e-4 * t
    upp = (channel_profile(t, y + h) - 2 * channel_profile(t, y) + channel_profile(t, y - h)) / h ** 2
    # -t^2 u'' + u - 1 = 0 with u(0) = u(1) = 0
    assert np.max(np.abs(-t ** 2 * upp + channel_profile(t, y) - 1)) < 1e-4
    assert np.allclose(channel_profile(t, [0.0, 1.0]), 0, atol=1e-14)
    d = (channel_profile(t, y + h) - channel_profile(t, y - h)) / (2 * h)
    assert np.allclose(channel_profile_dy(t, y), d, rtol=1e-6, atol=1e-8)


def test_channel_centre_value():
    for t in (0.5, 0.05):
        assert np.isclose(channel_profile(t, 0.5), 1 - 1 / np.cosh(1 / (2 * t)))
    assert np.all(np.isfinite(channel_profile(1e-4, np.linspace(0, 1, 11))))
    assert np.allclose(channel_profile(0.0, [0.0, 0.5, 1.0]), 1.0)


def test_channel_case_pressure_data():
    pr = channel_case(0.1)
    x = np.array([[0.0, 0.3], [1.0, 0.6]])
    assert np.allclose(pr.exact.p(x), [0.5, -0.5])
    assert np.allclose(pr.pressure_bc["inflow"](x[:1]), 0.5)
    assert np.allclose(pr.pressure_bc["outflow"](x[1:]), -0.5)


def test_unit_roundtrip():
    k = np.array([1e-3, 1.0, 250.0, 1e15])
    assert np.allclose(m2_to_darcy(darcy_to_m2(k)), k, rtol=1e-14)
    assert MILLIDARCY == pytest.approx(9.869233e-16)
    assert FOOT == 0.3048


def test_load_spe10(spe10_file):
    r = load_spe10(spe10_file, 68)
    assert (r.ny, r.nx) == (60, 220)
    assert np.allclose(r.cell_size, (10 * FOOT, 20 * FOOT))
    assert np.allclose(r.extent[1], (2200 * FOOT, 1200 * FOOT))
    # raw layout: value (raw_x=i, raw_y=j) lands at row i, column j
    tokens = open(spe10_file).read().split()
    nz, nyr, nxr = SPE10_SHAPE
    j, i = 17, 41
    raw = float(tokens[68 * nyr * nxr + j * nxr + i])
    assert np.isclose(r.perm[i, j], raw * MILLIDARCY)
    with pytest.raises(IngestionError):
        load_spe10(spe10_file, 85)


def test_spe10_modifications(spe10_file):
    base = load_spe10(spe10_file, 0)
    crack = load_spe10(spe10_file, 0, "piercing")
    changed = np.flatnonzero(np.any(crack.perm != base.perm, axis=1))
    assert changed.tolist() == [30]  # 600 to 620 ft
    assert np.allclose(crack.perm[30], 1e15 * DARCY)
    streak = streak_mask((220, 60, 10.0, 20.0), "streak")
    assert streak.sum() == 110 and np.all(np.flatnonzero(streak.any(axis=1)) == 30)
    tilted = streak_mask((220, 60, 10.0, 20.0), "tilted")
    assert tilted.any(axis=1).sum() > 1
    with pytest.raises(ValueError):
        streak_mask((220, 60, 10.0, 20.0), "zigzag")


def test_spe10_bad_files(tmp_path):
    short = tmp_path / "short.dat"
    short.write_text("1 2 3\n")
    with pytest.raises(IngestionError, match="short file"):
        load_spe10(str(short), 0)
    n = int(np.prod(SPE10_SHAPE))
    vals = np.ones(n).astype(str)
    vals[5] = "abc"  # five "1.0 " tokens precede it
    bad = tmp_path / "bad.dat"
    bad.write_text(" ".join(vals))
    with pytest.raises(IngestionError, match="byte offset 20"):
        load_spe10(str(bad), 0)
    vals[5] = "-2"
    bad.write_text(" ".join(vals))
    with pytest.raises(IngestionError, match="nonpositive"):
        load_spe10(str(bad), 0)


def test_spe10_case(spe10_file):
    r = load_spe10(spe10_file, 68)
    b = spe10_case(r, "brinkman", inlet_pressure=2.0)
    d = spe10_case(r, "darcy")
    assert b.t == 1.0 and d.t == 0.0
    x = np.array([[1.0, 1.0]])
    assert np.allclose(b.pressure_bc["inflow"](x), 2000.0)
    assert np.allclose(b.sigma2(x), 1 / r.perm[0, 0])
    with pytest.raises(ValueError):
        spe10_case(r, "stokes")
