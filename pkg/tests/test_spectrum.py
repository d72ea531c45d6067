import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from magflow import systems
from magflow.curves import LiftedCurve, line_integral, strip_flux
from magflow.exceptions import ConfigurationError, ContractError
from magflow.fourier import TWO_PI, torus_series
from magflow.orbits import (TopologicalClass, circle_seed, continue_in_parameter,
                            find_hyperbolic_orbit, hyperbolic_orbit_oracle, shoot_and_refine)
from magflow.spectrum import (BetaFamily, ConnectionData, OneForm, action_entry, action_spectrum,
                              isospectral_derivative_check, spectrum_csv, spectrum_json)

TAUS = list(np.linspace(-0.1, 0.1, 9))


@pytest.fixture(scope="module")
def band():
    return systems.banded_torus(0.2, 0.1)


@pytest.fixture(scope="module")
def band_orbit(band):
    return shoot_and_refine(band, TopologicalClass.torus(1, 0), [0.0, 0.5, 0.0], 1.0)


def _branch(conn, orbit):
    return continue_in_parameter(conn.system_at, orbit, TAUS)


# holonomy -----------------------------------------------------------------


@pytest.mark.parametrize("side", [0.1, 0.25, 0.4])
def test_square_holonomy(side):
    lam0 = 0.5
    s = systems.flat_torus(lam0)
    sq = LiftedCurve.polygon(s, [[0.1, 0.1], [0.1 + side, 0.1], [0.1 + side, 0.1 + side],
                                 [0.1, 0.1 + side]])
    hol = ConnectionData(s).holonomy(sq)
    # counterclockwise boundary: log hol = + c * lambda0 * area
    assert hol.lift == pytest.approx(s.c * lam0 * side ** 2, abs=1e-12)
    assert hol.fill_discrepancy < 1e-12
    rev = ConnectionData(s).holonomy(sq.reversed())
    assert rev.lift == pytest.approx(-hol.lift, abs=1e-12)


def test_circle_holonomy_and_action():
    lam0 = 0.5
    s = systems.flat_torus(lam0)
    assert s.c == 2.0
    seed, T = circle_seed(s)
    o = shoot_and_refine(s, TopologicalClass.torus(0, 0), seed, T)
    e = action_entry(ConnectionData(s), o)
    assert e.holonomy_lift == pytest.approx(4 * np.pi, abs=1e-9)
    assert e.action_lift == pytest.approx(np.pi / lam0, abs=1e-9)
    assert e.action == pytest.approx((np.pi / lam0) % 1.0, abs=1e-9)


def test_integrality_enforced():
    s = systems.flat_torus(0.5, c=0.7)
    with pytest.raises(ConfigurationError):
        ConnectionData(s)


def test_exact_beta_leaves_holonomy(band):
    rng = np.random.default_rng(11)
    F = torus_series([((1, 2), 0.03, -0.01), ((0, 1), 0.02, 0.05)])
    conn0 = ConnectionData(band)
    conn = ConnectionData(band, BetaFamily.linear(OneForm.exact(F)))
    fn = lambda sg: np.stack([sg + 0.05 * np.sin(TWO_PI * sg), 0.3 + 0.1 * np.cos(TWO_PI * sg)], 1)
    curve = LiftedCurve.from_function(band, fn, (1, 0), 1.0)
    assert line_integral(curve, OneForm.exact(F)) == pytest.approx(0.0, abs=1e-14)
    h0, h1 = conn0.holonomy(curve), conn.holonomy(curve, tau=rng.uniform(-1, 1))
    assert h1.lift == pytest.approx(h0.lift, abs=1e-13)


def test_closed_beta_shifts_by_period(band):
    form = OneForm.closed(0.3, 0.1)
    conn = ConnectionData(band, BetaFamily.linear(form))
    fn = lambda sg: np.stack([sg, 0.3 + 0.1 * np.sin(TWO_PI * sg)], 1)
    curve = LiftedCurve.from_function(band, fn, (1, 0), 1.0)
    d = conn.holonomy(curve, 0.5).lift - conn.holonomy(curve, 0.0).lift
    assert d == pytest.approx(0.5 * form.period((1, 0)) / TWO_PI, abs=1e-13)


def test_strip_flux_additivity():
    s = systems.random_torus(np.random.default_rng(2))
    a = LiftedCurve.from_function(s, lambda sg: np.stack([sg, 0.2 + 0 * sg], 1), (1, 0), 1.0)
    b = LiftedCurve.from_function(s, lambda sg: np.stack([sg, 0.5 + 0.1 * np.sin(TWO_PI * sg)], 1),
                                  (1, 0), 1.0)
    c = LiftedCurve.from_function(s, lambda sg: np.stack([sg, 0.7 + 0 * sg], 1), (1, 0), 1.0)
    assert strip_flux(s, a, b) + strip_flux(s, b, c) == pytest.approx(strip_flux(s, a, c),
                                                                      abs=1e-12)


def test_deformation_needs_torus(hyper05):
    with pytest.raises(ConfigurationError):
        ConnectionData(hyper05, BetaFamily.linear(OneForm.closed(0.1, 0.0)))


# spectra ------------------------------------------------------------------


def test_empty_spectrum(band):
    assert action_spectrum(ConnectionData(band), []) == []
    assert spectrum_csv([]).splitlines() == ["class,tau,length,holonomy,action"]


def test_hyperbolic_spectrum_matches_oracle(hyper05, tmp_path):
    conn = ConnectionData(hyper05)
    orbits = [find_hyperbolic_orbit(hyper05, w) for w in ["a", "ab"]]
    entries = action_spectrum(conn, orbits)
    for e, w in zip(sorted(entries, key=lambda e: e.length), ["a", "ab"]):
        orc = hyperbolic_orbit_oracle(hyper05, w)
        # hypercycle action: l sqrt(1 - lambda^2) whatever c is
        assert e.action_lift == pytest.approx(orc.length * np.sqrt(0.75), abs=1e-6)
        assert 0.0 <= e.action < 1.0
    tight = action_spectrum(conn, [find_hyperbolic_orbit(hyper05, w, tol=1e-13)
                                   for w in ["a", "ab"]], tol=1e-13)
    for e, f in zip(entries, tight):
        assert abs(e.action_lift - f.action_lift) < 1e-7
    rows = spectrum_csv(entries).splitlines()
    assert len(rows) == 3 and rows[1].startswith("word(")
    doc = json.loads(spectrum_json(entries))
    assert {d["class_key"] for d in doc} == {"word(a)", "word(ab)"}


def test_banded_action_frozen(band, band_orbit):
    e = action_entry(ConnectionData(band), band_orbit)
    assert e.action_lift == pytest.approx(1.0020467148111771, abs=1e-9)
    assert e.holonomy_lift == pytest.approx(-0.46203356889103075, abs=1e-8)


# deformations -------------------------------------------------------------


def test_exact_family_is_isospectral(band, band_orbit):
    F = torus_series([((1, 0), 0.05, 0.02), ((1, 1), 0.0, 0.03)])
    conn = ConnectionData(band, BetaFamily.linear(OneForm.exact(F)))
    br = _branch(conn, band_orbit)
    lifts = [action_entry(conn, o, t).action_lift for t, o in zip(br.taus, br.orbits)]
    assert np.ptp(lifts) < 1e-8
    rep = isospectral_derivative_check(conn, br, 0.0)
    assert abs(rep.line_integral) < 1e-12 and rep.passed


def test_closed_family_derivative(band, band_orbit):
    conn = ConnectionData(band, BetaFamily.linear(OneForm.closed(0.3, 0.1)))
    br = _branch(conn, band_orbit)
    # a closed form does not change Omega: the orbit stays put
    assert np.ptp(br.lengths) < 1e-12
    rep = isospectral_derivative_check(conn, br, 0.0)
    assert rep.predicted == pytest.approx(-0.3 / (TWO_PI * band.c), abs=1e-12)
    assert rep.predicted == pytest.approx(-9.645029e-3, abs=1e-9)
    assert rep.residual < 1e-10


def test_fourier_family_derivative(band, band_orbit):
    conn = ConnectionData(band, BetaFamily.linear(OneForm.random(np.random.default_rng(5))))
    br = _branch(conn, band_orbit)
    for tau in TAUS[2:-2]:
        rep = isospectral_derivative_check(conn, br, tau)
        assert rep.residual < 1e-6, tau
        assert rep.passed


def test_derivative_check_needs_stencil(band, band_orbit):
    conn = ConnectionData(band, BetaFamily.linear(OneForm.closed(0.3, 0.0)))
    br = _branch(conn, band_orbit)
    with pytest.raises(ContractError):
        isospectral_derivative_check(conn, br, TAUS[1])


# 1-form algebra -----------------------------------------------------------


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-2, 2))
def test_oneform_algebra(a1, a2, tau):
    F = torus_series([((1, 1), 0.3, 0.1)])
    closed = OneForm.closed(a1, a2, F)
    assert closed.is_closed and closed.is_exact == (a1 == 0.0 and a2 == 0.0)
    assert closed.period((2, -1)) == pytest.approx(2 * a1 - a2)
    fam = BetaFamily([OneForm(), closed, closed])
    p = np.array([[0.3, 0.7]])
    assert np.allclose(fam.at(tau)(p), (tau + tau ** 2) * closed(p), atol=1e-13)
    assert np.allclose(fam.derivative(tau)(p), (1 + 2 * tau) * closed(p), atol=1e-13)
    back = BetaFamily.from_dict(json.loads(json.dumps(fam.to_dict())))
    assert np.allclose(back.at(tau)(p), fam.at(tau)(p), atol=1e-14)


def test_random_form_not_closed():
    form = OneForm.random(np.random.default_rng(0))
    assert not form.is_closed
    with pytest.raises(ContractError):
        form.period((1, 0))
