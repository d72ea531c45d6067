import numpy as np
import pytest
from hypothesis import given, strategies as st

from magflow import systems
from magflow.exceptions import BandwidthError, ConfigurationError
from magflow.fourier import TWO_PI, TrigPolynomial
from magflow.smbundle import (FieldCalculus, LiouvilleQuadrature, PolyTrigJet, TrigJet,
                              UnitTangent, apply_field, corrupted_frame, duality_residual,
                              frame_at, geodesic_commutators_check, integrate_liouville,
                              magnetic_commutators_check, one_form_on_sm)
from magflow.spectrum import OneForm
from magflow.surface import AxisBand


def rel(check):
    return {k: float(np.max(v / check["scale"])) for k, v in check.items() if k != "scale"}


def test_flat_frame():
    s = systems.flat_torus(0.0)
    fr = frame_at(s, UnitTangent(0.3, 0.4, 0.0))
    assert np.array_equal(fr.coeffs["X"], [1.0, 0.0, 0.0])
    assert np.allclose(fr.coeffs["H"], [0.0, 1.0, 0.0], atol=0)
    assert np.array_equal(fr.coeffs["V"], [0.0, 0.0, 1.0])
    th = np.linspace(0, TWO_PI, 13)
    fr = frame_at(s, UnitTangent(np.zeros(13), np.zeros(13), th))
    assert np.array_equal(fr.coeffs["X"], np.stack([np.cos(th), np.sin(th), 0 * th], -1))


def test_vertical_field_and_duality(random_systems, rng):
    z = systems.random_points(rng, 200)
    for s in random_systems:
        fr = frame_at(s, UnitTangent.from_state(z))
        assert np.all(fr.coeffs["V"] == np.array([0.0, 0.0, 1.0]))
        assert duality_residual(s, z) < 1e-13


def test_geodesic_commutators_on_conformal_torus(random_systems, rng):
    s = random_systems[0]
    worst = 0.0
    for _ in range(20):
        f = TrigJet.random(rng)
        worst = max(worst, max(rel(geodesic_commutators_check(s, f,
                                                             systems.random_points(rng, 100))).values()))
    assert worst < 1e-9


def test_basic_functions(random_systems, rng):
    s = random_systems[1]
    h = TrigPolynomial.random(rng, 3, (TWO_PI, TWO_PI))
    f = TrigJet.basic(h)
    z = UnitTangent.from_state(systems.random_points(rng, 100))
    assert np.max(np.abs(apply_field(s, "V", f, z))) < 1e-13
    _, grad = h.jet(z.point, 1)
    dh_v = np.sum(grad * z.vector(s.surface), axis=-1)
    assert np.max(np.abs(apply_field(s, "X_lambda", f, z) - dh_v)) < 1e-10


def test_zero_lambda_reduces_to_geodesic_spray(rng):
    s = systems.random_torus(rng, lambda_mean=0.0, lambda_amplitude=0.0)
    f = TrigJet.random(rng)
    z = systems.random_points(rng, 50)
    assert np.array_equal(apply_field(s, "X_lambda", f, z), apply_field(s, "X", f, z))
    mag = rel(magnetic_commutators_check(s, f, z))
    geo = rel(geodesic_commutators_check(s, f, z))
    assert mag["[V,X_lambda]"] == pytest.approx(geo["[V,X]"], abs=1e-15)
    assert max(mag.values()) < 1e-9


def test_constant_field_flat_commutator(rng):
    s = systems.flat_torus(0.5)
    f = TrigJet.random(rng)
    z = systems.random_points(rng, 100)
    calc = FieldCalculus(s, f, z)
    lhs = calc.commutator("X_lambda", "H")
    rhs = -0.5 * calc.apply("X_lambda") + 0.25 * calc.apply("V")
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_magnetic_commutators_random_torus(random_systems, rng):
    worst = {}
    for s in random_systems:
        for _ in range(4):
            r = rel(magnetic_commutators_check(s, TrigJet.random(rng),
                                               systems.random_points(rng, 25)))
            for k, v in r.items():
                worst[k] = max(worst.get(k, 0.0), v)
    assert set(worst) == {"[V,X_lambda]", "[V,H]", "[X_lambda,H]"}
    assert max(worst.values()) < 1e-9


def test_commutators_on_disk_and_band(hyper05, rng):
    f = PolyTrigJet.random(rng)
    z = systems.random_points(rng, 50, hyper05)
    assert max(rel(magnetic_commutators_check(hyper05, f, z)).values()) < 1e-9
    band = hyper05.with_surface(AxisBand())
    zb = np.stack([rng.uniform(-1, 1, 50), rng.uniform(0.5, 2.5, 50),
                   rng.uniform(0, TWO_PI, 50)], -1)
    assert max(rel(magnetic_commutators_check(band, f, zb)).values()) < 1e-9


def test_corrupted_frame_is_detected(random_systems, rng):
    s = random_systems[0]
    f = TrigJet.random(rng)
    z = systems.random_points(rng, 30)
    bad = corrupted_frame(frame_at(s, UnitTangent.from_state(z)), "H", 2, 1e-3)
    r = rel(magnetic_commutators_check(s, f, z, frame=bad))
    assert r["[V,X_lambda]"] > 1e-6 and r["[X_lambda,H]"] > 1e-6


def test_liouville_total_mass(random_systems):
    q = LiouvilleQuadrature(systems.flat_torus(0.0), 9, 9, 9)
    assert integrate_liouville(q, lambda z: np.ones(np.shape(z.x1))) == pytest.approx(TWO_PI,
                                                                                     rel=1e-14)
    s = random_systems[0]
    q = LiouvilleQuadrature(s, 33, 33, 5)
    assert q.total_mass == pytest.approx(s.surface.area() * TWO_PI, rel=1e-13)


def test_liouville_invariance(random_systems, rng):
    for s in random_systems:
        f = TrigJet.random(rng)
        q = LiouvilleQuadrature.for_degree(s, (8, 8, 6), margin=8)
        calc = FieldCalculus(s, f, q.states)
        for name in ("X_lambda", "X", "H", "V"):
            assert abs(integrate_liouville(q, calc.apply(name))) < 1e-10
        om = OneForm.random(rng, 2, 0.5, const=(0.3, -0.2))
        b1 = lambda p: om(p)[..., 0]  # noqa: E731
        b2 = lambda p: om(p)[..., 1]  # noqa: E731
        wv = one_form_on_sm(s, b1, b2, q.states)
        wiv = one_form_on_sm(s, b1, b2, q.states, rotated=True)
        assert abs(integrate_liouville(q, wv)) < 1e-10
        assert abs(integrate_liouville(q, wv ** 2) - integrate_liouville(q, wiv ** 2)) < 1e-10


def test_quadrature_guards(hyper05, random_systems):
    with pytest.raises(ConfigurationError):
        LiouvilleQuadrature(hyper05, 5, 5, 5)
    q = LiouvilleQuadrature(random_systems[0], 5, 5, 5)
    with pytest.raises(BandwidthError):
        integrate_liouville(q, np.zeros(125), degree=(3, 1, 1))


@given(st.integers(0, 10 ** 6))
def test_commutators_hold_for_any_seed(seed):
    r = np.random.default_rng(seed)
    s = systems.random_torus(r, lambda_amplitude=0.3)
    check = magnetic_commutators_check(s, TrigJet.random(r), systems.random_points(r, 8))
    assert max(rel(check).values()) < 1e-9


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, TWO_PI))
def test_frame_is_orthonormal_in_sasaki_sense(x1, x2, th):
    s = systems.banded_torus(0.2, 0.1)
    fr = frame_at(s, UnitTangent(x1, x2, th))
    e = np.exp(0.1 * np.cos(TWO_PI * x2))
    # horizontal parts of X and H are g-orthonormal
    X, H = fr.coeffs["X"][:2], fr.coeffs["H"][:2]
    assert e ** 2 * X @ X == pytest.approx(1.0, rel=1e-13)
    assert e ** 2 * H @ H == pytest.approx(1.0, rel=1e-13)
    assert abs(X @ H) < 1e-14
