import numpy as np
import pytest
from hypothesis import given, strategies as st

from magflow import systems
from magflow.exceptions import DomainError
from magflow.flow import (flow_map, geodesic_curvature, hyperbolicity_diagnostic,
                          integrate_jacobi, integrate_orbit, jacobi_vs_flow_differencing,
                          load_dense, lyapunov_exponent, riccati_advance, variational_flow)
from magflow.fourier import TWO_PI

TOL = 1e-11


def test_flat_geodesic_is_straight():
    s = systems.flat_torus(0.0)
    o = integrate_orbit(s, [0.2, 0.3, 0.0], (0.0, 2.5))
    t = np.linspace(0, 2.5, 11)
    assert np.allclose(o(t)[:, 0], 0.2 + t, atol=1e-13)
    assert np.allclose(o(t)[:, 1:], [0.3, 0.0], atol=1e-13)


def test_flat_constant_field_circle():
    lam0 = 0.5
    s = systems.flat_torus(lam0)
    z0 = np.array([0.1, 0.2, 0.7])
    o = integrate_orbit(s, z0, (0.0, 2 * np.pi / lam0))
    t = np.linspace(0, 2 * np.pi / lam0, 17)
    st_ = o(t)
    assert np.allclose(st_[:, 2], z0[2] + lam0 * t, atol=1e-10)
    centre = z0[:2] + np.array([-np.sin(z0[2]), np.cos(z0[2])]) / lam0
    assert np.allclose(np.linalg.norm(st_[:, :2] - centre, axis=1), 1 / lam0, atol=1e-10)
    assert np.allclose(o.states[-1], z0 + [0, 0, TWO_PI], atol=1e-10)


def test_hyperbolic_geodesic_curvature_equals_lambda(hyper05):
    o = integrate_orbit(hyper05, [0.1, -0.2, 0.4], (0.0, 3.0))
    k = geodesic_curvature(hyper05, o, np.linspace(0.2, 2.8, 9))
    assert np.max(np.abs(k - 0.5)) < 1e-6


def test_disk_orbit_leaving_chart_raises(hyper05):
    with pytest.raises(DomainError):
        integrate_orbit(hyper05, [0.0, 0.0, 0.0], (0.0, 60.0))


def test_jacobi_closed_forms(hyper05):
    t = np.linspace(0, 3, 13)
    flat = systems.flat_torus(0.0)
    o = integrate_orbit(flat, [0.1, 0.1, 0.3], (0, 3))
    j = integrate_jacobi(flat, o, (0.0, 0.7, -0.4))
    assert np.allclose(j(t)[:, 1], 0.7 - 0.4 * t, atol=1e-12)
    h0 = systems.hyperbolic(0.0)
    o = integrate_orbit(h0, [0.1, 0.1, 0.3], (0, 3))
    assert np.allclose(integrate_jacobi(h0, o, (0, 1, 0))(t)[:, 1], np.cosh(t), rtol=1e-9)
    o = integrate_orbit(hyper05, [0.1, 0.1, 0.3], (0, 3))
    y = integrate_jacobi(hyper05, o, (0, 1, 0))(t)[:, 1]
    assert np.allclose(y, np.cosh(np.sqrt(0.75) * t), rtol=1e-9)


def test_jacobi_equation_residuals(random_systems):
    s = random_systems[0]
    o = integrate_orbit(s, [0.3, 0.6, 1.0], (0, 10), 1e-13)
    res = integrate_jacobi(s, o, (0.2, 1.0, -0.3), tol=1e-13).equation_residuals()
    assert set(res) == {"x_equation", "y_equation"}
    assert max(res.values()) < 1e-7


def test_differencing_flat_vertical():
    s = systems.flat_torus(0.0)
    rep = jacobi_vs_flow_differencing(s, [0.1, 0.2, 0.3], [0.0, 0.0, 1.0], 2.0, [1e-4])
    # J(t) = t * i v for a vertical initial vector
    assert np.allclose(rep.jacobi, 2.0 * np.array([-np.sin(0.3), np.cos(0.3)]), atol=1e-12)
    assert rep.errors[0] < 1e-6


def test_differencing_linearity_and_order(random_systems):
    s = random_systems[1]
    z, xi = np.array([0.3, 0.6, 1.0]), np.array([0.2, -0.1, 0.5])
    a = jacobi_vs_flow_differencing(s, z, xi, 5.0, [1e-3])
    b = jacobi_vs_flow_differencing(s, z, 3.0 * xi, 5.0, [1e-3])
    assert np.allclose(b.jacobi, 3.0 * a.jacobi, rtol=1e-10)
    rep = jacobi_vs_flow_differencing(s, z, xi, 5.0, np.logspace(-1, -6, 11))
    assert rep.floor / np.linalg.norm(rep.jacobi) < 1e-5
    assert abs(rep.observed_order - 2.0) < 0.3


def test_variational_flow_matches_differences(random_systems):
    s = random_systems[2]
    z = np.array([0.4, 0.1, 2.0])
    yT, D = variational_flow(s, z, 1.5, 1e-13)
    h = 1e-5
    fd = np.stack([(flow_map(s, z + h * e, 1.5, 1e-13) - flow_map(s, z - h * e, 1.5, 1e-13))
                   / (2 * h) for e in np.eye(3)], axis=1)
    assert np.allclose(yT, flow_map(s, z, 1.5, 1e-13), atol=1e-12)
    assert np.max(np.abs(D - fd)) < 1e-6


def test_riccati_closed_forms(hyper05):
    h0 = systems.hyperbolic(0.0)
    o = integrate_orbit(h0, [0.0, 0.0, 0.0], (0, 4))
    assert np.allclose(riccati_advance(h0, o, 1.0).u, 1.0, atol=1e-12)
    o = integrate_orbit(hyper05, [0.0, 0.0, 0.0], (0, 4))
    r = riccati_advance(hyper05, o, np.sqrt(0.75))
    assert np.max(np.abs(r.u - np.sqrt(0.75))) < 1e-12
    flat = systems.flat_torus(0.0)
    o = integrate_orbit(flat, [0.0, 0.0, 0.0], (0, 4))
    r = riccati_advance(flat, o, 1.0)
    t = np.linspace(0, 4, 9)
    assert np.allclose(r(t), 1.0 / (1.0 + t), atol=1e-10)
    assert r.residual() < 1e-8


def test_riccati_attracts_to_fixed_point(hyper05):
    o = integrate_orbit(hyper05, [0.1, 0.2, 0.3], (0, 15))
    assert abs(riccati_advance(hyper05, o, 0.0).value - np.sqrt(0.75)) < 1e-8


def test_riccati_blowup_flagged():
    flat = systems.flat_torus(0.3)  # Keff = 0.09 > 0: conjugate points
    o = integrate_orbit(flat, [0.0, 0.0, 0.0], (0, 30))
    r = riccati_advance(flat, o, 0.0)
    assert r.blew_up and r.t_blowup == pytest.approx(np.pi / 0.6, rel=1e-3)  # u = -0.3 tan(0.3 t)


def test_lyapunov_constant_curvature():
    est = lyapunov_exponent(systems.hyperbolic(0.0), [0.1, 0.2, 0.3], 200.0)
    assert abs(est.exponent - 1.0) < 1e-3
    est = lyapunov_exponent(systems.hyperbolic(0.5), [0.1, 0.2, 0.3], 200.0)
    assert abs(est.exponent - np.sqrt(0.75)) < 1e-3
    assert abs(est.tail_slope - np.sqrt(0.75)) < 1e-8


def test_lyapunov_flat_is_zero():
    est = lyapunov_exponent(systems.flat_torus(0.0), [0.1, 0.2, 0.3], 1000.0, interval=10.0)
    assert abs(est.exponent) < 2e-2


def test_hyperbolicity_diagnostic(hyper05, random_systems, rng):
    rep = hyperbolicity_diagnostic(hyper05, systems.random_points(rng, 50, hyper05), n_orbits=1)
    assert rep.certified and rep.keff_max == pytest.approx(-0.75, abs=1e-12)
    assert rep.riccati_bounded
    flat = systems.flat_torus(0.3)
    rep = hyperbolicity_diagnostic(flat, systems.random_points(rng, 50), n_orbits=0)
    assert rep.status == "indeterminate" and rep.keff_min == pytest.approx(0.09, abs=1e-14)
    s = random_systems[0]
    pts = systems.random_points(rng, 400)
    rep = hyperbolicity_diagnostic(s, pts, n_orbits=0)
    assert rep.keff_min == pytest.approx(float(s.effective_curvature(pts).min()), abs=0)


def test_dense_output_round_trip(tmp_path, random_systems):
    s = random_systems[0]
    o = integrate_orbit(s, [0.3, 0.6, 1.0], (0, 3))
    o.save_dense(tmp_path / "orbit.npz")
    f = load_dense(tmp_path / "orbit.npz")
    t = np.linspace(0, 3, 31)
    assert np.max(np.abs(f(t) - o(t))) < 1e-8
    o.to_csv(tmp_path / "orbit.csv", n=11)
    rows = (tmp_path / "orbit.csv").read_text().splitlines()
    assert rows[0] == "t,x1,x2,theta" and len(rows) == 12


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, TWO_PI))
def test_time_reversal_unit_horizon(x1, x2, th):
    # reversibility is a unit-horizon property: the error grows like exp(chi T)
    s = systems.banded_torus(0.2, 0.1, lam_wave=0.1)
    z = np.array([x1, x2, th])
    fwd = integrate_orbit(s, z, (0.0, 1.0), TOL)
    back = integrate_orbit(s, fwd.states[-1], (1.0, 0.0), TOL)
    assert np.max(np.abs(back.states[-1] - z)) < 10 * TOL


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, TWO_PI))
def test_speed_is_unit(x1, x2, th):
    s = systems.banded_torus(0.2, 0.1, lam_wave=0.1)
    o = integrate_orbit(s, [x1, x2, th], (0.0, 2.0))
    v = s.velocity(o(np.linspace(0, 2, 7)))[:, :2]
    dens = s.surface.area_density(o(np.linspace(0, 2, 7))[:, :2])
    assert np.allclose(dens * np.sum(v * v, axis=1), 1.0, rtol=1e-13)
