"""Holonomy, the action of closed orbits, action spectra and deformations.

Conventions
-----------
The rotation ``i`` is counterclockwise and a magnetic geodesic satisfies
``D gamma'/dt = lambda i gamma'``, so for ``lambda > 0`` orbits turn left.
The holonomy of the circle connection ``alpha`` is fixed by

    log hol_alpha(boundary of S) = + c * int_S Omega          (mod 1)

and a deformation ``alpha_tau = alpha + beta_tau`` (``beta_tau`` a 1-form
on the surface) shifts it by ``(1/2 pi) int beta_tau``. The curvature of
``alpha_tau`` is then ``Omega_tau = Omega + (1 / 2 pi c) d beta_tau``.
With this sign ``A(gamma) = l(gamma) - c^{-1} log hol(gamma)`` is
stationary exactly on closed magnetic geodesics (a counterclockwise
circle of radius ``r`` in a constant field has
``A = 2 pi r - lambda pi r^2``, critical at ``r = 1/lambda``).

Holonomy of a curve that is not a boundary is measured against a fixed
reference loop of its class (the 2-chain is the strip swept from the
reference to the curve, see :mod:`magflow.curves`):

* contractible curves: a constant loop (the strip is a cone);
* torus class ``(m, n)``: the straight loop ``sigma -> sigma (m, n)``
  through the origin;
* hyperbolic classes: the axis ``x2 = pi/2`` of the class element in its
  band chart.

Each reference loop is assigned the gauge value ``log hol = 0``. Absolute
per-class values are therefore conventions; differences along a
deformation are not.

The action is formed from the real lift ``c int_S Omega_0 + (1/2pi)
int beta_tau`` before reduction mod 1; with ``c != 1`` reducing the
holonomy first would change the action by a multiple of ``1/c``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .curves import LiftedCurve, circular_distance, line_integral, mod1, strip_flux
from .exceptions import ConfigurationError, ContractError
from .fourier import TWO_PI, TrigPolynomial, torus_series
from .surface import (AxisBand, ConformalTorus, LambdaField, MagneticSystem, ScalarJet,
                      _points)

# --------------------------------------------------------------------------
# 1-forms on the torus


class OneForm:
    """``beta = (a1 + b1) dx1 + (a2 + b2) dx2`` on the unit torus.

    ``a1, a2`` are constants (the cohomology class), ``b1, b2`` real
    trigonometric polynomials.
    """

    def __init__(self, const=(0.0, 0.0), b1=None, b2=None):
        self.const = (float(const[0]), float(const[1]))
        self.b1 = b1 if b1 is not None else torus_series()
        self.b2 = b2 if b2 is not None else torus_series()

    @classmethod
    def exact(cls, F: TrigPolynomial):
        """``dF``."""
        return cls((0.0, 0.0), F.derivative(0), F.derivative(1))

    @classmethod
    def closed(cls, a1, a2, F=None):
        """``a1 dx1 + a2 dx2 (+ dF)``."""
        form = cls((a1, a2))
        return form + cls.exact(F) if F is not None else form

    @classmethod
    def random(cls, rng, degree=2, amplitude=0.05, decay=1.0, const=(0.0, 0.0)):
        scales = (TWO_PI, TWO_PI)
        b1 = TrigPolynomial.random(rng, degree, scales, amplitude, decay, include_constant=False)
        b2 = TrigPolynomial.random(rng, degree, scales, amplitude, decay, include_constant=False)
        return cls(const, b1, b2)

    def __add__(self, other):
        return OneForm((self.const[0] + other.const[0], self.const[1] + other.const[1]),
                       self.b1 + other.b1, self.b2 + other.b2)

    def scaled(self, f):
        return OneForm((f * self.const[0], f * self.const[1]), self.b1.scaled(f),
                       self.b2.scaled(f))

    def __call__(self, p):
        """Chart components ``(beta_1, beta_2)`` at points ``(..., 2)``."""
        p = _points(p)
        return np.stack([self.const[0] + self.b1(p), self.const[1] + self.b2(p)], axis=-1)

    def curl(self):
        """``d beta / (dx1 ^ dx2) = d1 beta_2 - d2 beta_1`` as a polynomial."""
        return (self.b2.derivative(0) - self.b1.derivative(1)).simplified(1e-15)

    @property
    def is_closed(self):
        return len(self.curl().coeffs) == 0

    @property
    def is_exact(self):
        return self.is_closed and self.const == (0.0, 0.0)

    def period(self, shift):
        """``int beta`` over a closed loop in class ``shift`` (closed forms only)."""
        if not self.is_closed:
            raise ContractError("periods are defined for closed forms only")
        return self.const[0] * shift[0] + self.const[1] * shift[1]

    def to_dict(self):
        return {"const": list(self.const), "b1": self.b1.table(), "b2": self.b2.table()}

    @classmethod
    def from_dict(cls, d):
        sc = (TWO_PI, TWO_PI)
        return cls(tuple(d.get("const", (0.0, 0.0))),
                   TrigPolynomial.from_table(d.get("b1", []), sc),
                   TrigPolynomial.from_table(d.get("b2", []), sc))


class BetaFamily:
    """Polynomial family ``beta_tau = sum_k tau^k B_k`` with exact ``tau``-derivative."""

    def __init__(self, terms):
        self.terms = list(terms)
        if not self.terms:
            self.terms = [OneForm()]

    @classmethod
    def linear(cls, form):
        return cls([OneForm(), form])

    @classmethod
    def zero(cls):
        return cls([OneForm()])

    def at(self, tau):
        out = OneForm()
        for k, t in enumerate(self.terms):
            out = out + t.scaled(tau ** k)
        return out

    def derivative(self, tau):
        out = OneForm()
        for k, t in enumerate(self.terms[1:], start=1):
            out = out + t.scaled(k * tau ** (k - 1))
        return out

    @property
    def is_zero(self):
        return all(t.const == (0.0, 0.0) and not len(t.b1.coeffs) and not len(t.b2.coeffs)
                   for t in self.terms)

    @property
    def is_closed(self):
        return all(t.is_closed for t in self.terms)

    @property
    def is_exact(self):
        return all(t.is_exact for t in self.terms)

    def to_dict(self):
        return {"terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_dict(cls, d):
        return cls([OneForm.from_dict(t) for t in d["terms"]])


class DeformedLambda(LambdaField):
    """``lambda_tau = lambda + e^{-2u} curl(beta) / (2 pi c)``.

    The intensity of ``Omega_tau = Omega + (1/2 pi c) d beta`` with respect
    to the area form ``e^{2u} dx1 dx2``.
    """

    def __init__(self, base: LambdaField, u: TrigPolynomial, beta: OneForm, c: float):
        self.base = base
        self.u = u
        self.beta = beta
        self.c = float(c)
        self._curl = beta.curl()

    def jet(self, p):
        p = _points(p)
        b = self.base.jet(p)
        uv, ug = self.u.jet(p, 1)
        cv, cg = self._curl.jet(p, 1)
        e = np.exp(-2.0 * uv) / (TWO_PI * self.c)
        value = b.value + e * cv
        grad = b.grad + e[..., None] * (cg - 2.0 * cv[..., None] * ug)
        return ScalarJet(value, grad)

    @property
    def is_constant(self):
        return self.base.is_constant and len(self._curl.coeffs) == 0

    def to_dict(self):
        base = self.base.to_dict() if hasattr(self.base, "to_dict") else repr(self.base)
        return {"kind": "deformed", "base": base, "beta": self.beta.to_dict(), "c": self.c}


# --------------------------------------------------------------------------
# connection data


@dataclass
class HolonomyValue:
    """Holonomy of a closed curve.

    ``lift`` is the real number ``c int_S Omega_0 + (1/2pi) int beta_tau``
    whose class mod 1 is ``value``; ``fill_discrepancy`` is the circular
    distance between two independent evaluations.
    """

    lift: float
    value: float
    flux: float
    beta_term: float
    fill_discrepancy: float

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class ConnectionData:
    """Integrality constant, base form ``Omega`` and a deformation family.

    Parameters
    ----------
    system : MagneticSystem
        The undeformed system (``tau = 0``); ``c`` is taken from it.
    beta : BetaFamily, optional
        Torus backend only.
    references : dict, optional
        Extra reference loops keyed by the deck shift ``(m, n)``; values are
        callables ``sigma -> (len(sigma), 2)`` in the torus cover.
    """

    system: MagneticSystem
    beta: BetaFamily = None
    references: dict = field(default_factory=dict)
    check: bool = True

    def __post_init__(self):
        if self.beta is None:
            self.beta = BetaFamily.zero()
        torus = isinstance(self.system.surface, ConformalTorus)
        if not torus and not self.beta.is_zero:
            raise ConfigurationError("deformations are supported on the torus backend only")
        if torus and self.check:
            self.system.check_integrality()
        self._cache = {}

    @property
    def c(self):
        return self.system.c

    def system_at(self, tau):
        """Magnetic system with ``Omega_tau``; the base object when unchanged."""
        tau = float(tau)
        beta = self.beta.at(tau)
        if beta.is_closed:
            return self.system
        if tau not in self._cache:
            lam = DeformedLambda(self.system.lam, self.system.surface.u, beta, self.c)
            self._cache[tau] = MagneticSystem(self.system.surface, lam, c=self.c,
                                              label=f"{self.system.label}|tau={tau:.12g}")
        return self._cache[tau]

    def family(self):
        return self.system_at

    # reference loops ------------------------------------------------------

    def reference_loop(self, curve: LiftedCurve, apex=None):
        """Reference lift with the same shift and sample count as ``curve``."""
        sigma = curve.sigma
        shift = curve.shift
        if np.allclose(shift, 0.0):
            p = np.mean(curve.points, axis=0) if apex is None else np.asarray(apex, float)
            return LiftedCurve(curve.system, np.tile(p, (curve.n, 1)), shift, curve.T)
        if isinstance(curve.system.surface, AxisBand):
            if abs(shift[1]) > 1e-12:
                raise ConfigurationError("band curves must translate along x1")
            pts = np.stack([curve.points[0, 0] + sigma * shift[0],
                            np.full_like(sigma, 0.5 * np.pi)], axis=1)
            return LiftedCurve(curve.system, pts, shift, curve.T)
        if isinstance(curve.system.surface, ConformalTorus):
            key = (int(round(shift[0])), int(round(shift[1])))
            if np.abs(np.array(key) - shift).max() > 1e-12:
                raise ConfigurationError(f"non-integer torus shift {shift}")
            fn = self.references.get(key)
            pts = np.asarray(fn(sigma), float) if fn is not None else sigma[:, None] * shift
            return LiftedCurve(curve.system, pts, shift, curve.T)
        raise ConfigurationError(
            f"no reference loop registered for shift {tuple(shift)} on {curve.system.surface.name}")

    def register_reference(self, shift, fn):
        self.references[(int(shift[0]), int(shift[1]))] = fn

    def _base_system(self, curve):
        return self.system if isinstance(curve.system.surface, ConformalTorus) else curve.system

    # holonomy -------------------------------------------------------------

    def holonomy(self, curve: LiftedCurve, tau=0.0, n_s=24):
        """``log hol_{alpha_tau}(curve)`` mod 1, with a second-fill cross-check."""
        ref = self.reference_loop(curve)
        base = self._base_system(curve)
        flux = strip_flux(base, ref, curve, n_s)
        beta = self.beta.at(tau)
        beta_term = line_integral(curve, beta) / TWO_PI if not self.beta.is_zero else 0.0
        lift = self.c * flux + beta_term
        # second evaluation through a different 2-chain with the same boundary
        if self.beta.is_zero or beta.is_closed:
            if np.allclose(curve.shift, 0.0):
                centre = np.mean(curve.points, axis=0)
                alt_ref = self.reference_loop(curve, centre + 0.1 * (curve.points[0] - centre))
            else:
                alt_ref = ref.start_shifted(0.37)  # re-paired strip
            alt = self.c * strip_flux(base, alt_ref, curve, n_s)
            if not self.beta.is_zero:
                alt += line_integral(alt_ref, beta) / TWO_PI  # Stokes: d beta = 0
        else:
            deformed = self.system_at(tau)
            alt = self.c * strip_flux(deformed, ref, curve, n_s) + line_integral(ref, beta) / TWO_PI
        disc = float(circular_distance(lift, alt))
        return HolonomyValue(float(lift), float(mod1(lift)), float(flux), float(beta_term), disc)


def holonomy(conn: ConnectionData, curve: LiftedCurve, tau=0.0):
    """Holonomy of a closed curve, reduced to ``[0, 1)``."""
    return conn.holonomy(curve, tau).value


# --------------------------------------------------------------------------
# action spectrum


@dataclass
class ActionEntry:
    """Length, holonomy and action of one closed orbit."""

    key: str
    class_key: str
    tau: float
    length: float
    holonomy: float
    holonomy_lift: float
    action: float
    action_lift: float

    def as_dict(self):
        return dict(self.__dict__)


def action_entry(conn, orbit, tau=0.0, n=256, tol=1e-12):
    curve = orbit.lifted_curve(n, tol)
    hol = conn.holonomy(curve, tau)
    lift = orbit.T - hol.lift / conn.c
    return ActionEntry(orbit.key(), orbit.cls.key(), float(tau), float(orbit.T), hol.value,
                       hol.lift, float(mod1(lift)), float(lift))


def action_spectrum(conn, orbits, tau=0.0, n=256, tol=1e-12):
    """Sorted list of :class:`ActionEntry` (by action value, then class key)."""
    entries = [action_entry(conn, o, tau, n, tol) for o in orbits]
    return sorted(entries, key=lambda e: (round(e.action, 12), e.class_key, e.key))


SPECTRUM_COLUMNS = ["class", "tau", "length", "holonomy", "action"]


def spectrum_csv(entries):
    """CSV text with columns ``class, tau, length, holonomy, action``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SPECTRUM_COLUMNS)
    for e in entries:
        w.writerow([e.class_key, repr(e.tau), f"{e.length:.15e}", f"{e.holonomy:.15e}",
                    f"{e.action:.15e}"])
    return buf.getvalue()


def spectrum_json(entries):
    return json.dumps([e.as_dict() for e in entries], indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# deformation identity


@dataclass
class DeformationReport:
    """``d a_tau(gamma_tau)/dtau`` against ``-(1/2 pi c) int_gamma d beta/dtau``."""

    tau0: float
    step: float
    actions: list
    derivative: float
    derivative_coarse: float
    line_integral: float
    predicted: float
    residual: float
    passed: bool

    def as_dict(self):
        return dict(self.__dict__)


def _action_lift(conn, orbit, tau, n, tol):
    return action_entry(conn, orbit, tau, n, tol).action_lift


def isospectral_derivative_check(conn, branch, tau0, n=256, tol=1e-12, threshold=1e-6):
    """Check ``d a_tau/dtau = -(1/2 pi c) int_{gamma_tau0} beta'(tau0)`` on a branch.

    The derivative uses the five-point centered stencil on the branch
    points ``tau0 + {-2,-1,1,2} h`` (``h`` the grid spacing next to
    ``tau0``); the three-point estimate is reported as a convergence check.
    The actions use the real lift so no branch cuts enter the differences.
    """
    taus = np.asarray(branch.taus, dtype=float)
    i0 = int(np.argmin(np.abs(taus - tau0)))
    if abs(taus[i0] - tau0) > 1e-12 or i0 < 2 or i0 > len(taus) - 3:
        raise ContractError(f"continuation data missing around tau={tau0}")
    h = taus[i0 + 1] - taus[i0]
    stencil = taus[i0 - 2:i0 + 3]
    if np.abs(np.diff(stencil) - h).max() > 1e-9 * max(1.0, abs(h)):
        raise ContractError("non-uniform continuation grid around tau0")
    a = [_action_lift(conn, branch.orbits[i0 + j], taus[i0 + j], n, tol) for j in range(-2, 3)]
    d5 = (a[0] - 8 * a[1] + 8 * a[3] - a[4]) / (12 * h)
    d3 = (a[3] - a[1]) / (2 * h)
    curve = branch.orbits[i0].lifted_curve(n, tol)
    li = line_integral(curve, conn.beta.derivative(tau0))
    predicted = -li / (TWO_PI * conn.c)
    resid = d5 - predicted
    return DeformationReport(float(tau0), float(h), [float(x) for x in a], float(d5), float(d3),
                             float(li), float(predicted), float(abs(resid)),
                             bool(abs(resid) < threshold))
