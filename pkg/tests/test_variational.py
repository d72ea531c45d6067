import numpy as np
import pytest
from hypothesis import given, strategies as st

from magflow import systems
from magflow.exceptions import BandwidthError, ContractError
from magflow.fourier import TWO_PI, TrigPolynomial
from magflow.orbits import TopologicalClass, circle_seed, find_hyperbolic_orbit, shoot_and_refine
from magflow.smbundle import FieldCalculus, LiouvilleQuadrature, TrigJet
from magflow.spectrum import ConnectionData, OneForm
from magflow.systems import random_points
from magflow.variational import (IndexFormContext, PeriodicFunction, Variation,
                                 circle_curve, cohomological_mechanism, default_quadrature,
                                 divergence_integrals, first_variation_check, free_time_action,
                                 index_form, integrated_identities, measure_symmetry,
                                 pestov_pointwise, pestov_terms)
from magflow.curves import LiftedCurve


@pytest.fixture(scope="module")
def hyper_a():
    return find_hyperbolic_orbit(systems.hyperbolic(0.5), "a")


@pytest.fixture(scope="module")
def flat_circle():
    s = systems.flat_torus(0.5)
    seed, T = circle_seed(s)
    return shoot_and_refine(s, TopologicalClass.torus(0, 0), seed, T)


# pointwise identity -------------------------------------------------------


def test_pestov_constant_function_exact(random_systems, rng):
    s = random_systems[0]
    terms = pestov_terms(s, TrigJet.constant(2.5), random_points(rng, 20))
    assert all(np.all(v == 0.0) for v in terms.values())


def test_pestov_pointwise_random(random_systems, rng):
    worst = 0.0
    for s in random_systems:
        for _ in range(50 // len(random_systems) + 1):
            phi = TrigJet.random(rng, 2, 2)
            worst = max(worst, pestov_pointwise(s, phi, random_points(rng, 10)).relative.max())
    assert worst < 1e-9


def test_pestov_on_disk(hyper05, rng):
    from magflow.smbundle import PolyTrigJet

    phi = PolyTrigJet.random(rng, 3, 2)
    z = random_points(rng, 30, hyper05)
    assert pestov_pointwise(hyper05, phi, z).relative.max() < 1e-9


def test_pestov_classical_reduction(rng):
    s = systems.random_torus(rng, lambda_mean=0.0, lambda_amplitude=0.0)
    z = random_points(rng, 25)
    calc = FieldCalculus(s, TrigJet.random(rng), z)
    assert np.array_equal(calc.frame.effective_curvature, calc.frame.curvature)
    assert np.allclose(calc.apply("X_lambda"), calc.apply("X"), atol=0)
    assert pestov_pointwise(s, TrigJet.random(rng), z).relative.max() < 1e-9


# integrated identities ----------------------------------------------------


def test_integrated_identities(random_systems, rng):
    s = random_systems[1]
    rep = integrated_identities(s, TrigJet.random(rng, 2, 2), tolerance=1e-9)
    assert rep.passed, rep.as_dict()
    zero = integrated_identities(s, TrigJet.constant(0.0))
    assert zero.max_residual == 0.0


def test_integrated_identities_basic_function(random_systems, rng):
    # phi = h o pi: V phi = 0, so the identity reduces to int (X_l phi)^2 = int (H phi)^2
    s = random_systems[2]
    h = TrigPolynomial.random(rng, 2, (TWO_PI, TWO_PI))
    rep = integrated_identities(s, TrigJet.basic(h))
    assert rep.passed
    assert rep.integrals["K V^2"] == pytest.approx(0.0, abs=1e-14)
    assert rep.integrals["X^2"] == pytest.approx(rep.integrals["H^2"], rel=1e-9)


def test_bandwidth_guard(random_systems, rng):
    s = random_systems[0]
    with pytest.raises(BandwidthError):
        integrated_identities(s, TrigJet.random(rng, 2, 2), LiouvilleQuadrature.for_degree(s, 2))


def test_divergence_and_symmetry(random_systems, rng):
    s = random_systems[0]
    phi = TrigJet.random(rng, 2, 2)
    q = default_quadrature(s, phi, 8)
    assert max(abs(v) for v in divergence_integrals(s, phi, q).values()) < 1e-10
    om = OneForm.random(rng, 2, 0.5, const=(0.3, -0.2))
    sym = measure_symmetry(s, om, q)
    assert abs(sym["mean"]) < 1e-10 and abs(sym["square_difference"]) < 1e-10
    assert sym["square"] > 0


def test_mechanism(random_systems, rng):
    s = random_systems[1]
    h = TrigPolynomial.random(rng, 2, (TWO_PI, TWO_PI), include_constant=False)
    q = default_quadrature(s, TrigJet.basic(h), 8)
    # phi = h o pi solves X_l phi = dh(v): G = 0, omega = dh
    rep = cohomological_mechanism(s, 0.0, OneForm.exact(h), q, phi=TrigJet.basic(h))
    assert rep.passed and rep.cohomological_residual < 1e-12
    assert rep.lhs == pytest.approx(0.0, abs=1e-9)
    const = cohomological_mechanism(s, 0.7, OneForm(), q)
    assert const.rhs == pytest.approx(-0.49 * q.total_mass, rel=1e-12)
    assert const.passed
    mixed = cohomological_mechanism(s, lambda p: 0.2 + 0 * p[..., 0], OneForm.random(rng), q)
    assert mixed.passed


# index form ---------------------------------------------------------------


def test_index_form_values(hyper_a, rng):
    ctx = IndexFormContext(hyper_a, 512)
    T = hyper_a.T
    assert ctx.evaluate(PeriodicFunction(T)).value == 0.0
    const = ctx.evaluate(PeriodicFunction.constant(T))
    assert const.value == pytest.approx(0.75 * T, rel=1e-12)
    for _ in range(20):
        ev = ctx.evaluate(PeriodicFunction.random(rng, T, 6))
        assert ev.value > 0
        assert abs(ev.value - ev.value_by_parts) < 1e-9 * max(1.0, abs(ev.value))
        assert abs(ev.value - ev.value_riccati) < 1e-8 * max(1.0, abs(ev.value))
        # K_eff = -3/4 along the whole orbit: I(z) >= 3/4 |z|^2
        assert ev.ratio >= 0.75 - 1e-9


def test_index_form_samples_match_function(hyper_a, rng):
    z = PeriodicFunction.random(rng, hyper_a.T, 4)
    ctx = IndexFormContext(hyper_a, 256)
    a = index_form(hyper_a.system, hyper_a, z, context=ctx)
    b = index_form(hyper_a.system, hyper_a, z(ctx.t), context=ctx)
    assert a.value == pytest.approx(b.value, rel=1e-10)


def test_index_form_flat_control_negative(flat_circle):
    ev = index_form(flat_circle.system, flat_circle, PeriodicFunction.constant(flat_circle.T))
    assert ev.value == pytest.approx(-0.25 * flat_circle.T, rel=1e-10)


def test_index_form_contracts(hyper_a, hyper05):
    with pytest.raises(ContractError):
        index_form(hyper05, hyper_a, PeriodicFunction(hyper_a.T + 1.0, 1.0))
    with pytest.raises(ContractError):
        index_form(hyper05, hyper_a, np.ones(7), n=64)
    with pytest.raises(ContractError):
        IndexFormContext("not an orbit")
    with pytest.raises(ContractError):
        PeriodicFunction(-1.0)


# free-time action ---------------------------------------------------------


def test_free_time_action_constant_curve():
    s = systems.flat_torus(0.5)
    curve = LiftedCurve.constant(s, [0.3, 0.4], 3.7)
    a = free_time_action(ConnectionData(s), curve, k=0.5)
    assert a.kinetic == 0.0 and a.holonomy_lift == pytest.approx(0.0, abs=1e-15)
    assert a.value == pytest.approx((0.5 * 3.7) % 1.0, abs=1e-14)


@pytest.mark.parametrize("r", [0.5, 2.0, 3.0])
def test_free_time_action_circle(r):
    lam0 = 0.5
    s = systems.flat_torus(lam0)
    conn = ConnectionData(s)
    a = free_time_action(conn, circle_curve(s, (0.5, 0.5), r), k=0.5)
    assert a.lift == pytest.approx(TWO_PI * r - lam0 * np.pi * r ** 2, abs=1e-9)
    # reparametrization changes A_k but not the geometric part
    b = free_time_action(conn, circle_curve(s, (0.5, 0.5), r, speed=2.0), k=0.5)
    assert abs(b.lift - a.lift) > 0.1
    assert b.geometric == pytest.approx(a.geometric, abs=1e-9)


# first variation ----------------------------------------------------------


def test_first_variation_circle_orbit(rng):
    s = systems.flat_torus(0.5)
    curve = circle_curve(s, (0.5, 0.5), 2.0)
    for _ in range(5):
        rep = first_variation_check(curve, Variation.random(rng))
        assert rep.passed and rep.converged, rep.as_dict()
    assert first_variation_check(curve, Variation.time_shift()).passed


def test_first_variation_hyperbolic_orbit(hyper_a, rng):
    for _ in range(3):
        assert first_variation_check(hyper_a, Variation.random(rng)).passed


def test_first_variation_control_nonzero():
    s = systems.flat_torus(0.5)
    curve = circle_curve(s, (0.5, 0.5), 1.3 * 2.0)
    rep = first_variation_check(curve, Variation(normal=(1.0, (), ())))
    # the left normal of a counterclockwise circle points inward (r -> r - tau):
    # -d/dr (2 pi r - lambda pi r^2) = lambda 2 pi r - 2 pi
    assert rep.derivative == pytest.approx(0.5 * TWO_PI * 2.6 - TWO_PI, rel=1e-6)
    assert not rep.passed


@given(st.floats(0.05, 0.95))
def test_time_shift_invariance(delta):
    s = systems.flat_torus(0.5)
    curve = circle_curve(s, (0.5, 0.5), 1.7, n=128)
    conn = ConnectionData(s)
    a = free_time_action(conn, curve)
    b = free_time_action(conn, curve.start_shifted(delta))
    assert b.lift == pytest.approx(a.lift, abs=1e-10)
