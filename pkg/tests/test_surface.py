import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from magflow import systems
from magflow.exceptions import ConfigurationError, DegenerateInputError, DomainError
from magflow.fourier import TWO_PI, torus_series
from magflow.hyperbolic import octagon_generators
from magflow.surface import (AxisBand, ConformalTorusSpec, HyperbolicConstantSpec,
                             MagneticSystem, PoincareDisk, eval_lambda_jet, eval_metric_data,
                             load_spec, metric_inner, rotate_tangent, save_spec)


def torus(u_terms=(), lam_terms=()):
    return MagneticSystem.from_spec(ConformalTorusSpec(torus_series(u_terms),
                                                       torus_series(lam_terms)))


def test_flat_torus_metric():
    s = systems.flat_torus(0.0)
    m = eval_metric_data(s.surface, np.random.default_rng(0).uniform(0, 1, (10, 2)))
    assert np.all(m.curvature == 0.0)
    assert np.all(m.area_density == 1.0)


def test_hyperbolic_curvature_is_minus_one(hyper05):
    p = np.array([[0.0, 0.0], [0.3, -0.2], [0.5, 0.5]])
    assert np.allclose(eval_metric_data(hyper05.surface, p).curvature, -1.0, atol=0, rtol=0)
    assert np.allclose(eval_metric_data(AxisBand(), [[0.3, 1.0]]).curvature, -1.0)


def test_curvature_of_cosine_factor():
    s = torus(u_terms=[((1, 0), 0.1, 0.0)])
    k = eval_metric_data(s.surface, [0.0, 0.0]).curvature
    assert k == pytest.approx(0.4 * np.pi ** 2 * np.exp(-0.2), rel=1e-13)
    # fourth-order central differences of u itself
    h = 1e-3
    u = lambda x: 0.1 * np.cos(TWO_PI * x)  # noqa: E731
    lap = (-u(2 * h) + 16 * u(h) - 30 * u(0.0) + 16 * u(-h) - u(-2 * h)) / (12 * h ** 2)
    assert abs(k + np.exp(-2 * u(0.0)) * lap) < 1e-8


def test_lambda_jets():
    zero = systems.flat_torus(0.0)
    j = eval_lambda_jet(zero, [[0.2, 0.7]])
    assert j.value[0] == 0.0 and np.all(j.grad == 0.0)
    const = systems.flat_torus(0.5)
    assert np.all(eval_lambda_jet(const, [[0.2, 0.7]]).grad == 0.0)
    s = torus(lam_terms=[((0, 0), 0.3, 0.0), ((0, 1), 0.0, 0.05)])
    j = eval_lambda_jet(s, [0.0, 0.0])
    assert j.value == pytest.approx(0.3, abs=1e-15)
    assert j.grad[1] == pytest.approx(0.1 * np.pi, rel=1e-13)
    h = 1e-5
    fd = (s.lam([0.0, h]) - s.lam([0.0, -h])) / (2 * h)
    assert abs(fd - j.grad[1]) < 1e-9


def test_rotation_flat_and_twice(rng):
    assert np.allclose(rotate_tangent([0.1, 0.2], [1.0, 0.0]), [0.0, 1.0], atol=0)
    v = rng.standard_normal((100, 2))
    p = rng.uniform(0, 1, (100, 2))
    assert np.array_equal(rotate_tangent(p, rotate_tangent(p, v)), -v)


def test_rotation_is_metric_isometry(random_systems, rng):
    surf = random_systems[0].surface
    p = rng.uniform(0, 1, (100, 2))
    v = rng.standard_normal((100, 2))
    iv = rotate_tangent(p, v, surf)
    assert np.max(np.abs(metric_inner(surf, p, iv, v))) < 1e-12
    assert np.allclose(metric_inner(surf, p, iv, iv), metric_inner(surf, p, v, v), rtol=1e-12)


def test_rotation_errors():
    with pytest.raises(DegenerateInputError):
        rotate_tangent([0.1, 0.1], [0.0, 0.0])
    with pytest.raises(DomainError):
        rotate_tangent([1.2, 0.0], [1.0, 0.0], PoincareDisk())


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        HyperbolicConstantSpec(1.0)
    gens = dict(octagon_generators())
    gens["a"] = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConfigurationError):
        HyperbolicConstantSpec(0.5, deck_generators=gens)
    bad = torus_series([((1, 0), 0.1, 0.0)])
    bad.coeffs[0] += 1e-3j  # breaks conjugate symmetry
    with pytest.raises(ConfigurationError):
        ConformalTorusSpec(bad, torus_series())
    with pytest.raises(ConfigurationError):
        ConformalTorusSpec(torus_series([((9, 0), 0.1, 0.0)]), torus_series())


def test_domain_checks():
    with pytest.raises(DomainError):
        PoincareDisk().check_domain(np.array([[0.8, 0.8]]))
    with pytest.raises(DomainError):
        AxisBand().check_domain(np.array([[0.0, 3.5]]))


def test_integrality_constant(random_systems):
    for s in random_systems:
        assert s.check_integrality() == 1
        assert s.c * s.total_flux() == pytest.approx(1.0, abs=1e-12)
    assert systems.flat_torus(0.0).c == 1.0
    with pytest.raises(ConfigurationError):
        MagneticSystem(random_systems[0].surface, random_systems[0].lam, c=0.7).check_integrality()


def test_spec_round_trip(tmp_path, random_systems):
    s = random_systems[1]
    path = tmp_path / "sys.json"
    save_spec(s.spec, path)
    again = MagneticSystem.from_spec(load_spec(path), label=s.label)
    assert again.digest() == s.digest()
    p = np.random.default_rng(1).uniform(0, 1, (20, 2))
    assert np.array_equal(again.lam(p), s.lam(p))
    assert json.loads(path.read_text())  # plain JSON


@given(st.floats(0, 1), st.floats(0, 1))
def test_area_density_matches_exp_2u(x1, x2):
    s = systems.banded_torus(0.2, 0.1)
    m = eval_metric_data(s.surface, [x1, x2])
    assert m.area_density == pytest.approx(np.exp(0.2 * np.cos(TWO_PI * x2)), rel=1e-14)
    assert np.isfinite(m.curvature)


@given(st.floats(-0.9, 0.9), st.floats(0, TWO_PI))
def test_disk_metric_formula(r, a):
    p = np.array([r * np.cos(a), r * np.sin(a)]) * 0.99
    m = eval_metric_data(PoincareDisk(), p)
    assert m.area_density == pytest.approx(4.0 / (1 - p @ p) ** 2, rel=1e-12)
