"""Closed magnetic geodesics: Newton shooting, hypercycle oracle, continuation.

A closed orbit in a class with deck transformation ``g`` is a zero of

    F(z0, T) = phi_T(z0) - g(z0)        (theta component taken mod 2 pi)

in cover coordinates. Newton's method runs on the unknowns ``(z0, T)``
with the extra phase row ``<z0 - z_seed, X_lambda(z_seed)> = 0`` that
removes the time-shift symmetry. The Jacobian ``[D phi_T - Dg, X_lambda]``
comes from the magnetic Jacobi fields
(:func:`magflow.flow.variational_flow`), not from finite differences.

The monodromy ``P = Dg^{-1} D phi_T`` always has the eigenvalue 1 along
the flow; on a 3-manifold the remaining pair multiplies to 1, so
``tr P = 3`` exactly when the orbit is degenerate (elliptic with rotation
zero or parabolic). Degenerate orbits are flagged, not rejected; they
cannot be continued.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .curves import LiftedCurve
from .exceptions import (ConfigurationError, ContinuationError, ContractError,
                         DegenerateOrbitError, NoConvergenceError, RegimeError)
from .flow import integrate_orbit, variational_flow
from .fourier import TWO_PI
from .hyperbolic import AxisChart, DiskIsometry, octagon_generators, reduce_word, \
    translation_length, word_matrix
from .smbundle import UnitTangent
from .surface import AxisBand, ConformalTorus, HyperbolicConstantSpec, PoincareDisk

CLOSURE_TOL = 1e-9
DEGENERACY_TOL = 1e-6


def _wrap(angle):
    return (np.asarray(angle) + np.pi) % TWO_PI - np.pi


# --------------------------------------------------------------------------
# classes and deck maps


@dataclass(frozen=True)
class TopologicalClass:
    """Free-homotopy class of a closed orbit.

    Torus backend: translation vector ``shift = (m, n)``; for contractible
    orbits ``winding`` holds the turning number of the tangent (filled in by
    the shooting routine). Hyperbolic backend: a cyclically reduced word in
    the deck generators (upper case = inverse).
    """

    backend: str
    shift: tuple = (0, 0)
    word: str = ""
    winding: int | None = None

    @classmethod
    def torus(cls, m, n, winding=None):
        return cls("torus", (int(m), int(n)), "", winding)

    @classmethod
    def hyperbolic(cls, word):
        red = reduce_word(word)
        if not red:
            raise ContractError(f"word {word!r} reduces to the identity")
        return cls("hyperbolic", (0, 0), red, None)

    @property
    def contractible(self):
        return self.backend == "torus" and self.shift == (0, 0)

    def key(self):
        if self.backend == "torus":
            base = f"torus({self.shift[0]},{self.shift[1]})"
            if self.contractible and self.winding is not None:
                base += f"w{self.winding}"
            return base
        return f"word({self.word})"

    def same_class(self, other):
        return (self.backend, self.shift, self.word) == (other.backend, other.shift, other.word)

    def to_dict(self):
        return {"backend": self.backend, "shift": list(self.shift), "word": self.word,
                "winding": self.winding}

    @classmethod
    def from_dict(cls, d):
        return cls(d["backend"], tuple(d.get("shift", (0, 0))), d.get("word", ""),
                   d.get("winding"))


class TranslationDeck:
    """Deck map ``(x, theta) -> (x + shift, theta)`` of the torus cover."""

    def __init__(self, shift):
        self.shift = np.array([shift[0], shift[1], 0.0], dtype=float)

    def apply(self, state):
        return np.asarray(state, dtype=float) + self.shift

    def jacobian(self, state):
        return np.eye(3)


def generators_of(system):
    spec = system.spec
    if isinstance(spec, HyperbolicConstantSpec) and spec.deck_generators is not None:
        return spec.deck_generators
    return octagon_generators()


def deck_map(system, cls: TopologicalClass):
    """Deck transformation of ``cls`` acting on SM in the system's chart."""
    if cls.backend == "torus":
        if not isinstance(system.surface, ConformalTorus):
            raise ConfigurationError("torus class on a non-torus system")
        return TranslationDeck(cls.shift)
    if not isinstance(system.surface, PoincareDisk):
        raise ConfigurationError("hyperbolic class needs the Poincaré disk chart")
    return DiskIsometry.from_sl2(word_matrix(cls.word, generators_of(system)))


def class_element(system, cls):
    """Real SL(2) matrix of a hyperbolic class."""
    return word_matrix(cls.word, generators_of(system))


# --------------------------------------------------------------------------
# closed orbits


@dataclass
class ClosedOrbit:
    """A periodic magnetic geodesic ``phi_T(z0) = g(z0)``.

    Attributes
    ----------
    system : MagneticSystem
    cls : TopologicalClass
    z0 : ndarray, shape (3,)
        Initial state in the system's chart.
    T : float
        Period, equal to the length (unit speed).
    newton_residual : float
        ``|F(z0, T)|`` at the accepted iterate.
    iterations : int
    monodromy_trace : float
        ``tr(Dg^{-1} D phi_T)``.
    degenerate : bool
    tau : float or None
        Deformation parameter, when produced by continuation.
    """

    system: object
    cls: TopologicalClass
    z0: np.ndarray
    T: float
    newton_residual: float
    iterations: int = 0
    monodromy_trace: float = float("nan")
    degenerate: bool = False
    tau: float | None = None
    history: list = field(default_factory=list)

    @property
    def length(self):
        return self.T

    @property
    def seed(self):
        return UnitTangent.from_state(self.z0)

    @property
    def floquet_exponent(self):
        """``log`` of the expanding monodromy eigenvalue divided by ``T`` (0 if elliptic)."""
        half = 0.5 * (self.monodromy_trace - 1.0)
        return float(np.arccosh(half) / self.T) if half > 1.0 else 0.0

    def orbit(self, tol=1e-11):
        return integrate_orbit(self.system, self.z0, (0.0, self.T), tol)

    def closure_error(self, tol=1e-12):
        """``|phi_T(z0) - g(z0)|`` re-integrated at ``tol``."""
        end = integrate_orbit(self.system, self.z0, (0.0, self.T), tol).states[-1]
        return _closure(end - deck_map(self.system, self.cls).apply(self.z0))

    def key(self):
        tau = "" if self.tau is None else f"{self.tau:.12g}"
        return f"{self.system.digest()}|{self.cls.key()}|{tau}"

    def to_record(self):
        return {
            "system": self.system.digest(),
            "class": self.cls.to_dict(),
            "class_key": self.cls.key(),
            "tau": self.tau,
            "z0": [float(v) for v in self.z0],
            "T": float(self.T),
            "newton_residual": float(self.newton_residual),
            "iterations": int(self.iterations),
            "monodromy_trace": float(self.monodromy_trace),
            "degenerate": bool(self.degenerate),
        }

    @classmethod
    def from_record(cls, system, rec):
        if rec["system"] != system.digest():
            raise ContractError("record belongs to a different system")
        return cls(system, TopologicalClass.from_dict(rec["class"]), np.array(rec["z0"]),
                   rec["T"], rec["newton_residual"], rec.get("iterations", 0),
                   rec.get("monodromy_trace", float("nan")), rec.get("degenerate", False),
                   rec.get("tau"))

    # geometry in a translation chart --------------------------------------

    def lifted_curve(self, n=256, tol=1e-12):
        """Lift of the projected orbit to a chart where its deck map is a translation.

        Torus: the cover itself. Hyperbolic: the axis band of the class
        element, where the orbit advances by the translation length.
        """
        if self.cls.backend == "torus":
            system, z0 = self.system, self.z0
            shift = np.array(self.cls.shift, dtype=float)
        else:
            chart = AxisChart(class_element(self.system, self.cls))
            system = self.system.with_surface(AxisBand())
            z0 = chart.disk_to_band(self.z0)
            shift = np.array([chart.length, 0.0])
        sol = integrate_orbit(system, z0, (0.0, self.T), tol)
        tt = np.arange(n) / n * self.T
        pts = sol(tt)[:, :2]
        return LiftedCurve(system, pts, shift, self.T)


def _closure(diff):
    diff = np.array(diff, dtype=float)
    diff[2] = _wrap(diff[2])
    return float(np.linalg.norm(diff))


def _turning_number(system, z0, T, deck):
    """Turning number of the tangent along one period (contractible torus orbits)."""
    sol = integrate_orbit(system, z0, (0.0, T), 1e-9)
    return int(round((sol.states[-1, 2] - z0[2]) / TWO_PI))


def shoot_and_refine(system, cls, seed, T_seed, tol=1e-12, residual_tol=CLOSURE_TOL,
                     max_iter=40, step_tol=1e-12, max_step=0.2):
    """Newton shooting for a closed orbit in ``cls``.

    Parameters
    ----------
    system : MagneticSystem
    cls : TopologicalClass
    seed : UnitTangent or array_like, shape (3,)
    T_seed : float
    tol : float
        Integrator tolerance for the flow and its Jacobi fields.
    residual_tol : float
        Acceptance threshold on the closure residual.
    max_step : float
        Cap on the chart norm of a Newton update of ``z0`` (damped Newton).

    Returns
    -------
    ClosedOrbit

    Raises
    ------
    NoConvergenceError
        Newton stagnates or diverges; ``residuals`` holds the history.
    DegenerateOrbitError
        The bordered Jacobian is singular and Newton did not converge.
    """
    if T_seed <= 0:
        raise ContractError("T_seed must be positive")
    z = np.array(seed.state if isinstance(seed, UnitTangent) else seed, dtype=float).reshape(3)
    system.surface.check_domain(z[:2])
    T = float(T_seed)
    deck = deck_map(system, cls)
    anchor = z.copy()
    direction = system.velocity(anchor)
    direction = direction / np.linalg.norm(direction)
    history = []
    rank = 4
    dphi = None
    for it in range(max_iter + 1):
        try:
            yT, dphi = variational_flow(system, z, T, tol)
        except Exception as exc:  # left the chart, stiffness...
            raise NoConvergenceError(f"shooting integration failed: {exc}", history) from exc
        diff = yT - deck.apply(z)
        diff[2] = _wrap(diff[2])
        res = float(np.linalg.norm(diff))
        history.append(res)
        # accept once below tolerance, after polishing while Newton still gains
        if res < residual_tol and (res < 1e-3 * residual_tol or
                                   (len(history) > 1 and res > 0.1 * history[-2])):
            break
        if it == max_iter or not np.isfinite(res) or (it > 3 and res > 1e3 * min(history)):
            break
        jac = np.zeros((4, 4))
        jac[:3, :3] = dphi - deck.jacobian(z)
        jac[:3, 3] = system.velocity(yT)
        jac[3, :3] = direction
        rhs = -np.concatenate([diff, [direction @ (z - anchor)]])
        step, _, rank, _ = np.linalg.lstsq(jac, rhs, rcond=1e-12)
        # damping: keep the update inside the region where the linearization is trusted
        scale = max(np.linalg.norm(step[:3]) / max_step, abs(step[3]) / (0.25 * T), 1.0)
        step = step / scale
        z = z + step[:3]
        T = T + step[3]
        if T <= 0:
            raise NoConvergenceError("period became non-positive", history)
        if np.linalg.norm(step) < step_tol and res < 100 * residual_tol:
            # stagnation at the integrator floor
            history.append(res)
            break
    if history[-1] >= residual_tol:
        if rank < 4:
            raise DegenerateOrbitError(
                f"singular shooting Jacobian; final residual {history[-1]:.3e}", history)
        raise NoConvergenceError(f"Newton did not converge; final residual {history[-1]:.3e}",
                                 history)
    mono = np.linalg.solve(deck.jacobian(z), dphi)
    trace = float(np.trace(mono))
    degenerate = bool(abs(trace - 3.0) < DEGENERACY_TOL)
    if cls.contractible and cls.winding is None:
        cls = replace(cls, winding=_turning_number(system, z, T, deck))
    return ClosedOrbit(system, cls, z, T, history[-1], len(history) - 1, trace, degenerate,
                       history=history)


# --------------------------------------------------------------------------
# seeds and oracles


def circle_seed(system, center=(0.5, 0.5)):
    """Seed on the circle orbit of radius ``1/lambda`` (flat torus, constant lambda).

    Returns ``(state, T)`` with the circle traversed counterclockwise.
    """
    lam = float(system.lam(np.asarray(center, float)))
    if lam == 0:
        raise RegimeError("no circle orbits when lambda = 0")
    r = 1.0 / abs(lam)
    # start at the bottom of the circle moving in +x1 (lambda > 0)
    theta = 0.0 if lam > 0 else np.pi
    state = np.array([center[0], center[1] - r * np.sign(lam), theta])
    return state, TWO_PI * r


@dataclass
class HypercycleOracle:
    """Closed-form closed orbit of a constant-curvature system.

    For ``K = -1`` and constant ``|lambda| < 1`` the closed magnetic geodesic
    in the class of a hyperbolic ``g`` is the hypercycle at distance
    ``d = artanh(lambda)`` from the axis of ``g``, with period
    ``T = l_g / sqrt(1 - lambda^2)``. In the axis band chart it is the line
    ``x2 = arccos(lambda)`` travelled at chart speed ``sqrt(1 - lambda^2)``.
    """

    word: str
    lam: float
    length: float
    T: float
    distance: float
    band_state: np.ndarray
    disk_state: np.ndarray
    chart: AxisChart

    def band_curve(self, t):
        t = np.asarray(t, dtype=float)
        x1 = self.band_state[0] + np.sqrt(1.0 - self.lam ** 2) * t
        return np.stack([x1, np.full_like(x1, self.band_state[1]), np.zeros_like(x1)], -1)

    def disk_curve(self, t):
        return self.chart.band_to_disk(self.band_curve(t))

    def as_dict(self):
        return {"word": self.word, "lambda": self.lam, "translation_length": self.length,
                "T": self.T, "distance": self.distance,
                "disk_state": [float(v) for v in self.disk_state]}


def hypercycle_period(length, lam):
    """Period ``l / sqrt(1 - lambda^2)`` of the closed orbit over a closed geodesic of length ``l``."""
    lam = float(lam)
    if abs(lam) >= 1.0:
        raise RegimeError(f"|lambda| = {abs(lam)} >= 1: no closed orbit guaranteed")
    return float(length) / np.sqrt(1.0 - lam ** 2)


def hyperbolic_orbit_oracle(spec, word):
    """Closed-form period and parametrization for ``K = -1``, constant lambda.

    ``spec`` may be a :class:`HyperbolicConstantSpec` or a system built from one.
    """
    if not isinstance(spec, HyperbolicConstantSpec):
        spec = getattr(spec, "spec", None)
    if not isinstance(spec, HyperbolicConstantSpec):
        raise ConfigurationError("hypercycle oracle needs a constant-curvature spec")
    lam = float(spec.lambda_const)
    if abs(lam) >= 1.0:
        raise RegimeError(f"|lambda| = {abs(lam)} >= 1: no closed orbit guaranteed")
    gens = spec.deck_generators if spec.deck_generators is not None else octagon_generators()
    word = reduce_word(word)
    if not word:
        raise ContractError("trivial word")
    g = word_matrix(word, gens)
    length = translation_length(g)
    chart = AxisChart(g)
    x1 = chart.origin_x1()
    band = np.array([x1, np.arccos(lam), 0.0])
    return HypercycleOracle(word, lam, length, hypercycle_period(length, lam),
                            float(np.arctanh(lam)), band, chart.band_to_disk(band), chart)


def axis_seed(system, word):
    """The ``lambda = 0`` closed geodesic on the axis of ``word`` (disk state, length)."""
    g = word_matrix(reduce_word(word), generators_of(system))
    chart = AxisChart(g)
    band = np.array([chart.origin_x1(), 0.5 * np.pi, 0.0])
    return chart.band_to_disk(band), chart.length


# --------------------------------------------------------------------------
# continuation


@dataclass
class OrbitBranch:
    """Orbits ``gamma_tau`` along a parameter grid (sorted by ``tau``)."""

    taus: list
    orbits: list
    refinements: list = field(default_factory=list)

    @property
    def lengths(self):
        return np.array([o.T for o in self.orbits])

    def at(self, tau, atol=1e-12):
        for t, o in zip(self.taus, self.orbits):
            if abs(t - tau) <= atol:
                return o
        raise KeyError(tau)

    def length_derivative(self):
        """Centered differences of the length along the grid."""
        return np.gradient(self.lengths, np.asarray(self.taus))

    def as_records(self):
        return [o.to_record() for o in self.orbits]


def continue_in_parameter(family, orbit0, taus, tau0=0.0, tol=1e-12, max_halvings=4):
    """Predictor-corrector continuation of ``orbit0`` through ``family(tau)``.

    Parameters
    ----------
    family : callable
        ``tau -> MagneticSystem`` (same chart for all ``tau``).
    orbit0 : ClosedOrbit
        Orbit of ``family(tau0)``; must be nondegenerate.
    taus : sequence of float
        Grid to report; continuation proceeds outward from ``tau0`` in both
        directions with secant prediction.

    Raises
    ------
    ContinuationError
        At a degenerate start, or when the corrector fails after step
        halving (the partial branch is attached).
    """
    if orbit0.degenerate:
        raise ContinuationError("starting orbit is degenerate; continuation undefined", None)
    taus = sorted(set(float(t) for t in taus))
    up = [t for t in taus if t > tau0]
    down = [t for t in reversed(taus) if t < tau0]
    start = replace(orbit0, tau=tau0)
    done = {tau0: start}
    notes = []

    def run(targets):
        path = [(tau0, start)]
        for target in targets:
            t_prev, o_prev = path[-1]
            sub = [target]
            halvings = 0
            while sub:
                t_next = sub[0]
                t_last, o_last = path[-1]
                if len(path) >= 2:
                    t_pp, o_pp = path[-2]
                    w = (t_next - t_last) / (t_last - t_pp)
                    z_pred = o_last.z0 + w * (o_last.z0 - o_pp.z0)
                    T_pred = o_last.T + w * (o_last.T - o_pp.T)
                else:
                    z_pred, T_pred = o_last.z0, o_last.T
                try:
                    orb = shoot_and_refine(family(t_next), o_last.cls, z_pred, T_pred, tol=tol)
                except NoConvergenceError as exc:
                    if halvings >= max_halvings:
                        branch = _branch(done, notes)
                        raise ContinuationError(
                            f"corrector failed at tau={t_next}: {exc}", branch) from exc
                    halvings += 1
                    sub.insert(0, 0.5 * (t_last + t_next))
                    notes.append({"tau": t_next, "event": "step halved"})
                    continue
                if not orb.cls.same_class(o_last.cls):
                    raise ContinuationError("class changed along the branch", _branch(done, notes))
                if orb.degenerate:
                    notes.append({"tau": t_next, "event": "degenerate orbit (fold?)"})
                    raise ContinuationError(f"degenerate orbit at tau={t_next}",
                                            _branch(done, notes))
                orb = replace(orb, tau=t_next, cls=o_last.cls)
                path.append((t_next, orb))
                sub.pop(0)
            done[target] = path[-1][1]

    run(up)
    run(down)
    return _branch({t: o for t, o in done.items() if t in taus or t == tau0}, notes,
                   keep=set(taus))


def _branch(done, notes, keep=None):
    ts = sorted(t for t in done if keep is None or t in keep)
    return OrbitBranch(ts, [done[t] for t in ts], list(notes))


# --------------------------------------------------------------------------
# persistence


class OrbitDatabase:
    """Line-oriented JSON store keyed by ``(system hash, class, tau)``.

    Each line is one :meth:`ClosedOrbit.to_record`; later lines with the
    same key supersede earlier ones. ``get``/``put`` make re-runs
    incremental.
    """

    def __init__(self, path):
        self.path = path
        self._records = {}
        if os.path.exists(path):
            with open(path) as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self._records[self._key(rec)] = rec

    @staticmethod
    def _key(rec):
        tau = rec.get("tau")
        return (rec["system"], rec["class_key"] if "class_key" in rec else
                TopologicalClass.from_dict(rec["class"]).key(),
                None if tau is None else round(float(tau), 12))

    def __len__(self):
        return len(self._records)

    def get(self, system, cls, tau=None):
        key = (system.digest(), cls.key(), None if tau is None else round(float(tau), 12))
        rec = self._records.get(key)
        return None if rec is None else ClosedOrbit.from_record(system, rec)

    def find(self, system, cls, tau=None):
        """Like :meth:`get` but ignores the contractible winding annotation."""
        digest = system.digest()
        t = None if tau is None else round(float(tau), 12)
        for (d, _, tt), rec in self._records.items():
            if d == digest and tt == t and TopologicalClass.from_dict(rec["class"]).same_class(cls):
                return ClosedOrbit.from_record(system, rec)
        return None

    def put(self, orbit):
        self.put_record(orbit.to_record())

    def put_record(self, rec):
        self._records[self._key(rec)] = rec
        with open(self.path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def records(self):
        return [self._records[k] for k in sorted(self._records, key=str)]


def find_hyperbolic_orbit(system, word, n_steps=None, tol=1e-12):
    """Closed orbit in the class of ``word`` for constant ``lambda`` on the disk.

    Starts from the closed geodesic on the axis (``lambda = 0``) and continues
    in ``lambda`` up to the system's value.
    """
    from .surface import MagneticSystem

    cls = TopologicalClass.hyperbolic(word)
    lam = float(system.lam(np.zeros(2)))
    seed, length = axis_seed(system, cls.word)
    if n_steps is None:
        n_steps = int(np.ceil(abs(lam) / 0.2))
    spec = system.spec

    def family(mu):
        sp = HyperbolicConstantSpec(mu, spec.curvature, spec.deck_generators)
        return MagneticSystem.from_spec(sp, c=system.c, label=system.label)

    orbit = shoot_and_refine(family(0.0), cls, seed, length, tol=tol)
    if n_steps == 0:
        return orbit
    grid = list(np.linspace(0.0, lam, n_steps + 1))
    branch = continue_in_parameter(family, orbit, grid, tau0=0.0, tol=tol)
    final = branch.orbits[-1] if lam > 0 else branch.orbits[0]
    # re-anchor on the requested system object (same data, same digest)
    return replace(final, system=system, tau=None)
