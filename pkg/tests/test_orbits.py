import numpy as np
import pytest
from hypothesis import given, strategies as st

from magflow import systems
from magflow.cli import enumerate_words
from magflow.exceptions import ContinuationError, ContractError, RegimeError
from magflow.hyperbolic import octagon_generators, reduce_word, translation_length, word_matrix
from magflow.orbits import (ClosedOrbit, OrbitDatabase, TopologicalClass, circle_seed,
                            continue_in_parameter, find_hyperbolic_orbit, hyperbolic_orbit_oracle,
                            hypercycle_period, shoot_and_refine)
from magflow.spectrum import BetaFamily, ConnectionData, OneForm
from magflow.fourier import torus_series

L_A = 2 * np.arccosh(1 + np.sqrt(2))  # systole of the regular octagon surface


@pytest.fixture(scope="module")
def band():
    return systems.banded_torus(0.2, 0.1)


@pytest.fixture(scope="module")
def band_orbit(band):
    return shoot_and_refine(band, TopologicalClass.torus(1, 0), [0.0, 0.5, 0.0], 1.0)


# words and lengths --------------------------------------------------------


def test_reduce_word():
    assert reduce_word("aAb") == "b"
    assert reduce_word("abBA") == ""
    assert reduce_word("bab" + "B") == "ba"  # cyclic reduction
    with pytest.raises(ContractError):
        TopologicalClass.hyperbolic("aA")


def test_frozen_translation_lengths():
    g = octagon_generators()
    tl = {w: translation_length(word_matrix(w, g)) for w in ["a", "b", "ab", "aB", "ac"]}
    assert tl["a"] == pytest.approx(L_A, abs=1e-12)
    assert tl["a"] == pytest.approx(3.0571418389619978, abs=1e-12)
    assert tl["b"] == pytest.approx(tl["a"], abs=1e-12)
    assert tl["ab"] == pytest.approx(5.828070775441809, abs=1e-10)
    assert tl["aB"] == pytest.approx(3.0571418389619978, abs=1e-10)
    assert tl["ac"] == pytest.approx(4.896904895356154, abs=1e-10)


def test_enumerate_words():
    w1 = enumerate_words(1)
    assert sorted(w1) == sorted("abcdABCD")
    w2 = enumerate_words(2)
    assert "aa" in w2 and "aA" not in w2 and len(w2) == len(set(w2))
    # cyclic rotations are identified
    assert not ("ab" in w2 and "ba" in w2)


# shooting on the torus ----------------------------------------------------


def test_flat_circle_is_degenerate():
    s = systems.flat_torus(0.5)
    seed, T = circle_seed(s)
    assert T == pytest.approx(4 * np.pi)
    o = shoot_and_refine(s, TopologicalClass.torus(0, 0), seed, T)
    assert o.T == pytest.approx(4 * np.pi, abs=1e-10)
    assert o.degenerate and o.cls.winding == 1
    assert o.cls.key() == "torus(0,0)w1"


def test_flat_geodesic_class_10():
    s = systems.flat_torus(0.0)
    o = shoot_and_refine(s, TopologicalClass.torus(1, 0), [0.0, 0.3, 0.05], 1.1)
    assert o.T == pytest.approx(1.0, abs=1e-10)
    assert abs(np.sin(o.z0[2])) < 1e-10
    assert o.degenerate  # translation invariance in x2


def test_banded_torus_frozen(band_orbit):
    o = band_orbit
    assert o.T == pytest.approx(0.9087136211588863, rel=1e-9)
    assert o.z0[1] == pytest.approx(0.453296635, abs=1e-8)
    assert o.monodromy_trace == pytest.approx(8.071669800247875, rel=1e-7)
    assert not o.degenerate
    assert o.closure_error() < 1e-9


def test_banded_torus_zero_field():
    o = shoot_and_refine(systems.banded_torus(0.0, 0.1), TopologicalClass.torus(1, 0),
                         [0.0, 0.5, 0.0], 1.0)
    # geodesic along the band minimum of u: length exp(-0.1)
    assert o.T == pytest.approx(np.exp(-0.1), abs=1e-10)
    assert o.z0[1] == pytest.approx(0.5, abs=1e-9)
    assert o.monodromy_trace == pytest.approx(8.430136884373672, rel=1e-7)


# hyperbolic orbits --------------------------------------------------------


def test_hypercycle_period():
    assert hypercycle_period(3.0, 0.5) == pytest.approx(3.4641016151377544, abs=1e-12)
    lams = np.linspace(0, 0.99, 12)
    assert np.all(np.diff([hypercycle_period(1.0, l) for l in lams]) > 0)
    with pytest.raises(RegimeError):
        hypercycle_period(1.0, 1.0)


def test_oracle_orbit_closes(hyper05):
    orc = hyperbolic_orbit_oracle(hyper05, "a")
    assert orc.T == pytest.approx(3.530083327351154, abs=1e-12)
    cls = TopologicalClass.hyperbolic("a")
    o = ClosedOrbit(hyper05, cls, orc.disk_state, orc.T, 0.0)
    assert o.closure_error() < 1e-9


@pytest.mark.parametrize("word,lam", [("a", 0.5), ("ab", 0.5), ("a", 0.8)])
def test_found_orbit_matches_oracle(word, lam):
    s = systems.hyperbolic(lam)
    o = find_hyperbolic_orbit(s, word)
    orc = hyperbolic_orbit_oracle(s, word)
    assert abs(o.T - orc.T) < 1e-6
    # hyperbolic monodromy: trace 1 + 2 cosh(chi T) with chi = sqrt(1 - lam^2)
    assert o.monodromy_trace == pytest.approx(1 + 2 * np.cosh(np.sqrt(1 - lam ** 2) * o.T),
                                              rel=1e-6)
    assert o.floquet_exponent == pytest.approx(np.sqrt(1 - lam ** 2), rel=1e-6)


def test_frozen_hyperbolic_periods(hyper05):
    assert find_hyperbolic_orbit(hyper05, "a").T == pytest.approx(3.5300833273509644, abs=1e-9)
    assert find_hyperbolic_orbit(hyper05, "ab").T == pytest.approx(6.7296764621149405, abs=1e-9)


def test_geodesic_trace_word_a():
    o = find_hyperbolic_orbit(systems.hyperbolic(0.0), "a")
    assert o.T == pytest.approx(L_A, abs=1e-10)
    assert o.monodromy_trace == pytest.approx(22.3137085, abs=1e-6)
    assert o.monodromy_trace == pytest.approx(1 + 2 * np.cosh(L_A), rel=1e-9)


# continuation -------------------------------------------------------------


def test_zero_and_exact_families_keep_the_orbit(band, band_orbit):
    taus = np.linspace(-0.1, 0.1, 5)
    for fam in [BetaFamily.zero(),
                BetaFamily.linear(OneForm.exact(torus_series([((1, 0), 0.05, 0.02)])))]:
        conn = ConnectionData(band, fam)
        br = continue_in_parameter(conn.system_at, band_orbit, taus)
        assert br.taus == list(taus)
        assert np.ptp(br.lengths) < 1e-12


def test_nonexact_family_moves_the_orbit(band, band_orbit, rng):
    conn = ConnectionData(band, BetaFamily.linear(OneForm.random(np.random.default_rng(3))))
    br = continue_in_parameter(conn.system_at, band_orbit, np.linspace(-0.1, 0.1, 5))
    assert len(br.orbits) == 5 and np.ptp(br.lengths) > 1e-6
    assert all(o.newton_residual < 1e-9 for o in br.orbits)


def test_degenerate_start_raises():
    s = systems.flat_torus(0.5)
    seed, T = circle_seed(s)
    o = shoot_and_refine(s, TopologicalClass.torus(0, 0), seed, T)
    with pytest.raises(ContinuationError):
        continue_in_parameter(lambda tau: s, o, [0.0, 0.1])


# classes and persistence --------------------------------------------------


@given(st.integers(-3, 3), st.integers(-3, 3))
def test_class_round_trip(m, n):
    c = TopologicalClass.torus(m, n)
    assert TopologicalClass.from_dict(c.to_dict()) == c
    assert c.contractible == (m == n == 0)


def test_database_round_trip(tmp_path, band, band_orbit):
    path = tmp_path / "orbits.jsonl"
    db = OrbitDatabase(str(path))
    db.put(band_orbit)
    db.put(band_orbit)  # superseding write
    again = OrbitDatabase(str(path))
    assert len(again) == 1
    o = again.get(band, band_orbit.cls)
    assert o.T == band_orbit.T and np.array_equal(o.z0, band_orbit.z0)
    assert again.get(systems.banded_torus(0.3, 0.1), band_orbit.cls) is None
    with pytest.raises(ContractError):
        ClosedOrbit.from_record(systems.flat_torus(0.0), band_orbit.to_record())
