"""Energy identities on SM, the index form along closed orbits, and the free-time action.

Pointwise identity
------------------
For every smooth ``phi`` on SM, with ``K_eff = K - H lambda + lambda^2``::

    2 H phi . V X_l phi = (X_l phi)^2 + (H phi)^2 - K_eff (V phi)^2
                          + X_l(H phi . V phi) - H(X_l phi . V phi) + V(X_l phi . H phi)

Integrated over SM against the Liouville measure the last three terms drop
out, giving (I1); expanding ``X_l V phi = V X_l phi - H phi`` gives (I2);
their difference is (I3)::

    (I1) 2 int H phi V X_l phi = int (X_l phi)^2 + int (H phi)^2 - int K_eff (V phi)^2
    (I2) int (X_l V phi)^2 = int (V X_l phi)^2 + int (H phi)^2 - 2 int V X_l phi H phi
    (I3) int (X_l V phi)^2 - K_eff (V phi)^2 = int (V X_l phi)^2 - int (X_l phi)^2

Index form
----------
Along a closed orbit of period ``T`` and for ``T``-periodic ``z``::

    I(z) = int_0^T (z'^2 - K_eff z^2) dt = -int_0^T z (z'' + K_eff z) dt

and, when ``u`` is a ``T``-periodic solution of ``u' = -u^2 - K_eff``
(hyperbolic orbits), ``I(z) = int_0^T (z' - u z)^2 dt >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curves import LiftedCurve, mod1, strip_flux
from .exceptions import BandwidthError, ContractError
from .flow import integrate_jacobi, integrate_orbit, riccati_advance
from .fourier import TWO_PI
from .smbundle import FieldCalculus, LiouvilleQuadrature, integrate_liouville, one_form_on_sm

# --------------------------------------------------------------------------
# pointwise identity


@dataclass
class PointwiseResidual:
    """``|LHS - RHS|`` of the pointwise identity and the size of its largest term."""

    residual: np.ndarray
    scale: np.ndarray

    @property
    def relative(self):
        return self.residual / self.scale


def pestov_terms(system, phi, z, frame=None):
    """All terms of the pointwise identity at the states ``z``."""
    calc = FieldCalculus(system, phi, z, frame=frame)
    keff = calc.frame.effective_curvature
    xl, h, v = calc.apply("X_lambda"), calc.apply("H"), calc.apply("V")
    return {
        "lhs": 2.0 * h * calc.compose("V", "X_lambda"),
        "X_l phi^2": xl ** 2,
        "H phi^2": h ** 2,
        "K_eff V phi^2": -keff * v ** 2,
        "X_l(H phi V phi)": calc.apply_product("X_lambda", "H", "V"),
        "-H(X_l phi V phi)": -calc.apply_product("H", "X_lambda", "V"),
        "V(X_l phi H phi)": calc.apply_product("V", "X_lambda", "H"),
    }


def pestov_pointwise(system, phi, z, frame=None):
    """Residual of the pointwise identity (including the three divergence terms).

    Returns
    -------
    PointwiseResidual
        ``scale`` is ``max(1, largest |term|)`` per point.
    """
    terms = pestov_terms(system, phi, z, frame)
    rhs = sum(v for k, v in terms.items() if k != "lhs")
    resid = np.abs(terms["lhs"] - rhs)
    scale = np.maximum(1.0, np.max(np.abs(np.stack(list(terms.values()))), axis=0))
    return PointwiseResidual(resid, scale)


# --------------------------------------------------------------------------
# integrated identities


@dataclass
class PestovReport:
    """Pointwise and integrated residuals for one test function.

    Integrated residuals are relative to the largest integral in the
    identity (floored at 1).
    """

    pointwise_max: float
    pointwise_rms: float
    integrated_pestov: float
    square_expansion: float
    difference_identity: float
    integrals: dict
    tolerance: float = 1e-9

    @property
    def max_residual(self):
        return max(self.pointwise_max, self.integrated_pestov, self.square_expansion, self.difference_identity)

    @property
    def passed(self):
        return self.max_residual < self.tolerance

    def as_dict(self):
        out = {k: v for k, v in self.__dict__.items()}
        out["passed"] = self.passed
        return out


def integrand_degree(system, phi):
    """Per-axis trigonometric degree bound for the quadratic integrands.

    Frame coefficients contribute ``exp(+-u)`` factors, which are not
    polynomials; their contribution is accounted for by the spectral margin
    of :func:`default_quadrature`, not by this bound.
    """
    deg = phi.degree
    if np.isscalar(deg):
        deg = (deg, deg, deg)
    lam_deg = (0, 0)
    series = getattr(system.lam, "series", None)
    if series is not None:
        lam_deg = series.degree
    u_deg = system.surface.u.degree if hasattr(system.surface, "u") else (0, 0)
    return (int(2 * deg[0] + 2 * u_deg[0] + lam_deg[0]),
            int(2 * deg[1] + 2 * u_deg[1] + lam_deg[1]),
            int(2 * deg[2] + 2))


def default_quadrature(system, phi, margin=12):
    return LiouvilleQuadrature.for_degree(system, integrand_degree(system, phi), margin=margin)


def _rel(lhs, rhs, *terms):
    scale = max([1.0, abs(lhs), abs(rhs)] + [abs(t) for t in terms])
    return abs(lhs - rhs) / scale


def integrated_identities(system, phi, quadrature=None, tolerance=1e-9):
    """Both sides of the three integrated identities, by the tensor trapezoidal rule.

    Raises
    ------
    BandwidthError
        When the quadrature cannot resolve the declared integrand degree.
    """
    if quadrature is None:
        quadrature = default_quadrature(system, phi)
    deg = integrand_degree(system, phi)
    if any(d > b for d, b in zip(deg, quadrature.bandwidth)):
        raise BandwidthError(f"integrand degree {deg} exceeds bandwidth {quadrature.bandwidth}")
    q = quadrature
    calc = FieldCalculus(system, phi, q.states)
    keff = calc.frame.effective_curvature
    xl, h, v = calc.apply("X_lambda"), calc.apply("H"), calc.apply("V")
    vxl = calc.compose("V", "X_lambda")
    xlv = calc.compose("X_lambda", "V")

    def integ(values):
        return integrate_liouville(q, values)

    I = {
        "H.VX": integ(h * vxl),
        "X^2": integ(xl ** 2),
        "H^2": integ(h ** 2),
        "K V^2": integ(keff * v ** 2),
        "(XV)^2": integ(xlv ** 2),
        "(VX)^2": integ(vxl ** 2),
    }
    r_int = _rel(2 * I["H.VX"], I["X^2"] + I["H^2"] - I["K V^2"], *I.values())
    r_sq = _rel(I["(XV)^2"], I["(VX)^2"] + I["H^2"] - 2 * I["H.VX"], *I.values())
    r_diff = _rel(I["(XV)^2"] - I["K V^2"], I["(VX)^2"] - I["X^2"], *I.values())
    pw = pestov_pointwise(system, phi, q.states, frame=calc.frame).relative
    return PestovReport(float(pw.max()), float(np.sqrt(np.mean(pw ** 2))), r_int, r_sq, r_diff, I,
                        tolerance)


def divergence_integrals(system, f, quadrature):
    """``int A f dmu`` for ``A`` in ``X_lambda, X, H, V`` (all vanish)."""
    calc = FieldCalculus(system, f, quadrature.states)
    return {name: integrate_liouville(quadrature, calc.apply(name))
            for name in ("X_lambda", "X", "H", "V")}


def measure_symmetry(system, omega, quadrature):
    """``int omega(v)``, and ``int omega(v)^2 - int omega(iv)^2`` over SM."""
    b1 = lambda p: omega(p)[..., 0]  # noqa: E731
    b2 = lambda p: omega(p)[..., 1]  # noqa: E731
    wv = one_form_on_sm(system, b1, b2, quadrature.states)
    wiv = one_form_on_sm(system, b1, b2, quadrature.states, rotated=True)
    sq = integrate_liouville(quadrature, wv ** 2)
    return {
        "mean": integrate_liouville(quadrature, wv),
        "square_difference": sq - integrate_liouville(quadrature, wiv ** 2),
        "square": sq,
    }


@dataclass
class MechanismReport:
    """Mechanism behind the sign argument for ``X_l phi = G + omega(v)``.

    ``lhs = int (V X_l phi)^2 - int (X_l phi)^2`` and ``rhs = -int G^2``.
    """

    lhs: float
    rhs: float
    residual: float
    omega_mean: float
    omega_square_difference: float
    cohomological_residual: float | None
    passed: bool

    def as_dict(self):
        return dict(self.__dict__)


def cohomological_mechanism(system, G, omega, quadrature, phi=None, tolerance=1e-9):
    """Check ``int (V X_l phi)^2 - int (X_l phi)^2 = -int G^2`` and the symmetry facts.

    Parameters
    ----------
    G : float or callable
        Function on the surface (points ``(..., 2)``).
    omega : callable
        1-form, ``omega(points) -> (..., 2)`` chart components.
    phi : Jet2Function, optional
        Solution of ``X_l phi = G + omega(v)``; the residual of that equation
        at the nodes is reported. Without ``phi`` the left side is formed
        from ``G + omega`` directly (``V X_l phi = omega(iv)``).
    """
    states = quadrature.states
    p = states[:, :2]
    g = np.full(len(states), float(G)) if np.isscalar(G) else np.asarray(G(p), float)
    sym = measure_symmetry(system, omega, quadrature)
    b1 = lambda q: omega(q)[..., 0]  # noqa: E731
    b2 = lambda q: omega(q)[..., 1]  # noqa: E731
    wv = one_form_on_sm(system, b1, b2, states)
    wiv = one_form_on_sm(system, b1, b2, states, rotated=True)
    coh = None
    if phi is not None:
        calc = FieldCalculus(system, phi, states)
        xl = calc.apply("X_lambda")
        vxl = calc.compose("V", "X_lambda")
        coh = float(np.max(np.abs(xl - g - wv)))
    else:
        xl, vxl = g + wv, wiv
    lhs = integrate_liouville(quadrature, vxl ** 2) - integrate_liouville(quadrature, xl ** 2)
    rhs = -integrate_liouville(quadrature, g ** 2)
    scale = max(1.0, abs(sym["square"]), abs(rhs))
    resid = abs(lhs - rhs) / scale
    ok = (resid < tolerance and abs(sym["mean"]) < tolerance * scale
          and abs(sym["square_difference"]) < tolerance * scale
          and (coh is None or coh < tolerance * scale))
    return MechanismReport(float(lhs), float(rhs), float(resid), float(sym["mean"]),
                           float(sym["square_difference"]), coh, bool(ok))


# --------------------------------------------------------------------------
# periodic test functions and the index form


class PeriodicFunction:
    """``z(t) = a0 + sum_k a_k cos(2 pi k t / T) + b_k sin(2 pi k t / T)``."""

    def __init__(self, T, a0=0.0, a=(), b=()):
        if T <= 0:
            raise ContractError("period must be positive")
        self.T = float(T)
        self.a0 = float(a0)
        n = max(len(a), len(b))
        self.a = np.zeros(n)
        self.b = np.zeros(n)
        self.a[:len(a)] = a
        self.b[:len(b)] = b

    @classmethod
    def random(cls, rng, T, degree=4, amplitude=1.0, decay=0.5):
        k = np.arange(1, degree + 1)
        w = amplitude * np.exp(-decay * (k - 1))
        return cls(T, amplitude * rng.standard_normal(), w * rng.standard_normal(degree),
                   w * rng.standard_normal(degree))

    @classmethod
    def constant(cls, T, value=1.0):
        return cls(T, value)

    @property
    def degree(self):
        return len(self.a)

    def derivatives(self, t, order=2):
        """``(z, z', z'')`` at times ``t``."""
        t = np.asarray(t, dtype=float)
        out = [np.full(t.shape, self.a0), np.zeros(t.shape), np.zeros(t.shape)]
        for k in range(1, len(self.a) + 1):
            w = TWO_PI * k / self.T
            c, s = np.cos(w * t), np.sin(w * t)
            ak, bk = self.a[k - 1], self.b[k - 1]
            out[0] = out[0] + ak * c + bk * s
            out[1] = out[1] + w * (-ak * s + bk * c)
            out[2] = out[2] - w * w * (ak * c + bk * s)
        return tuple(out[:order + 1])

    def __call__(self, t):
        return self.derivatives(t, 0)[0]

    def norm_sq(self):
        """``int_0^T z^2 dt``."""
        return self.T * (self.a0 ** 2 + 0.5 * np.sum(self.a ** 2 + self.b ** 2))


@dataclass
class IndexFormEvaluation:
    """Index form of one periodic ``z`` along a closed orbit.

    ``value`` uses the defining integrand, ``value_by_parts`` the
    integrated-by-parts form and ``value_riccati`` (hyperbolic orbits only)
    the completed square ``(z' - u z)^2``. ``quadrature_error`` compares
    ``n`` and ``n/2`` samples.
    """

    orbit_key: str
    T: float
    n: int
    z_samples: np.ndarray
    value: float
    value_by_parts: float
    value_riccati: float | None
    quadrature_error: float
    norm_sq: float

    @property
    def ratio(self):
        return self.value / self.norm_sq if self.norm_sq > 0 else 0.0

    def as_dict(self):
        return {"orbit": self.orbit_key, "T": self.T, "n": self.n, "value": self.value,
                "value_by_parts": self.value_by_parts, "value_riccati": self.value_riccati,
                "quadrature_error": self.quadrature_error, "norm_sq": self.norm_sq,
                "ratio": self.ratio}


class IndexFormContext:
    """Effective curvature (and Riccati solution) sampled along one closed orbit.

    Raises
    ------
    ContractError
        If the orbit does not close up within ``closure_tol``.
    """

    def __init__(self, orbit, n=512, tol=1e-12, closure_tol=1e-8, riccati=True):
        from .orbits import ClosedOrbit, deck_map, _closure

        if not isinstance(orbit, ClosedOrbit):
            raise ContractError("index form needs a ClosedOrbit")
        self.orbit = orbit
        self.n = int(n)
        sol = integrate_orbit(orbit.system, orbit.z0, (0.0, orbit.T), tol)
        err = _closure(sol.states[-1] - deck_map(orbit.system, orbit.cls).apply(orbit.z0))
        if err > closure_tol:
            raise ContractError(f"orbit does not close (error {err:.2e})")
        self.closure = err
        self.t = np.arange(self.n) / self.n * orbit.T
        self.keff = orbit.system.effective_curvature(sol(self.t))
        self.u = self._riccati(orbit, sol, tol) if riccati else None

    def _riccati(self, orbit, sol, tol):
        """Periodic Riccati solution from the expanding eigenvector of the y-monodromy."""
        cols = []
        for ic in ((0.0, 1.0, 0.0), (0.0, 0.0, 1.0)):
            jac = integrate_jacobi(orbit.system, sol, ic, (0.0, orbit.T), tol)
            cols.append(jac(orbit.T)[1:])
        m = np.array(cols).T  # (y, y') monodromy
        vals, vecs = np.linalg.eig(m)
        if np.max(np.abs(vals.imag)) > 0 or abs(np.max(np.abs(vals))) <= 1.0 + 1e-9:
            return None
        vec = vecs[:, int(np.argmax(np.abs(vals)))].real
        if abs(vec[0]) < 1e-12:
            return None
        try:
            ric = riccati_advance(orbit.system, sol, vec[1] / vec[0], (0.0, orbit.T), tol)
        except Exception:
            return None
        if ric.blew_up if hasattr(ric, "blew_up") else False:
            return None
        return ric(self.t)

    def evaluate(self, z):
        if isinstance(z, PeriodicFunction):
            if abs(z.T - self.orbit.T) > 1e-12 * max(1.0, self.orbit.T):
                raise ContractError("test function period differs from the orbit period")
            zz, dz, ddz = z.derivatives(self.t)
            norm = z.norm_sq()
        else:
            from .fourier import periodic_derivative

            zz = np.asarray(z, dtype=float)
            if zz.shape != self.t.shape:
                raise ContractError(f"expected {self.n} uniform samples of z")
            dz = periodic_derivative(zz, self.orbit.T)
            ddz = periodic_derivative(dz, self.orbit.T)
            norm = float(np.mean(zz ** 2) * self.orbit.T)
        T = self.orbit.T
        integrand = dz ** 2 - self.keff * zz ** 2
        value = float(np.mean(integrand) * T)
        coarse = float(np.mean(integrand[::2]) * T)
        by_parts = float(-np.mean(zz * (ddz + self.keff * zz)) * T)
        ric = None
        if self.u is not None:
            ric = float(np.mean((dz - self.u * zz) ** 2) * T)
        return IndexFormEvaluation(self.orbit.key(), T, self.n, zz, value, by_parts, ric,
                                   abs(value - coarse), float(norm))


def index_form(system, orbit, z, n=512, context=None):
    """Index form ``int (z'^2 - K_eff z^2) dt`` of periodic ``z`` along ``orbit``.

    ``z`` is a :class:`PeriodicFunction` of the orbit period or ``n``
    uniform samples on ``[0, T)``. Pass a shared :class:`IndexFormContext`
    to evaluate many ``z`` on the same orbit.
    """
    if context is None:
        if orbit.system is not system and orbit.system.digest() != system.digest():
            raise ContractError("orbit belongs to a different system")
        context = IndexFormContext(orbit, n)
    return context.evaluate(z)


# --------------------------------------------------------------------------
# free-time action


@dataclass
class FreeTimeAction:
    """``A_k = (1/2) int |gamma'|^2 dt + k T - c^{-1} log hol`` (mod 1)."""

    k: float
    T: float
    kinetic: float
    length: float
    holonomy: float
    holonomy_lift: float
    value: float
    lift: float
    geometric: float

    def as_dict(self):
        return dict(self.__dict__)


def free_time_action(conn, curve: LiftedCurve, k=0.5, tau=0.0):
    """Free-time action of a closed curve.

    ``geometric`` is ``length - c^{-1} log hol`` mod 1, which does not
    depend on the parametrization.
    """
    if not isinstance(curve, LiftedCurve):
        raise ContractError("free-time action needs a closed LiftedCurve")
    hol = conn.holonomy(curve, tau)
    kin = curve.kinetic()
    length = curve.length()
    lift = kin + k * curve.T - hol.lift / conn.c
    geo = length - hol.lift / conn.c
    return FreeTimeAction(float(k), float(curve.T), float(kin), float(length), hol.value,
                          hol.lift, float(mod1(lift)), float(lift), float(mod1(geo)))


# --------------------------------------------------------------------------
# first variation


@dataclass
class Variation:
    """Closed variation ``gamma_tau = gamma + tau (a N + b gamma')``, ``T_tau = T e^{tau rho}``.

    ``a`` and ``b`` are periodic functions of ``sigma`` given by real
    Fourier coefficients ``(a0, [a_k], [b_k])``; ``shift`` instead selects
    the start-point variation ``gamma_tau(sigma) = gamma(sigma + tau)``.
    """

    normal: tuple = (0.0, (), ())
    tangential: tuple = (0.0, (), ())
    rho: float = 0.0
    shift: bool = False

    @classmethod
    def random(cls, rng, degree=3, amplitude=0.1, tangential=True, period=True):
        def coeffs():
            w = amplitude * np.exp(-0.5 * np.arange(degree))
            return (amplitude * rng.standard_normal(), tuple(w * rng.standard_normal(degree)),
                    tuple(w * rng.standard_normal(degree)))

        return cls(coeffs(), coeffs() if tangential else (0.0, (), ()),
                   amplitude * rng.standard_normal() if period else 0.0)

    @classmethod
    def time_shift(cls):
        return cls(shift=True)

    @staticmethod
    def _eval(c, sigma):
        a0, a, b = c
        out = np.full(sigma.shape, float(a0))
        for k, (ak, bk) in enumerate(zip(a, b), start=1):
            out += ak * np.cos(TWO_PI * k * sigma) + bk * np.sin(TWO_PI * k * sigma)
        return out

    def apply(self, curve: LiftedCurve, tau):
        if self.shift:
            return curve.start_shifted(tau)
        sig = curve.sigma
        d = curve.derivative()
        disp = (tau * self._eval(self.normal, sig))[:, None] * curve.normal() \
            + (tau * self._eval(self.tangential, sig))[:, None] * d
        return LiftedCurve(curve.system, curve.points + disp, curve.shift,
                           curve.T * np.exp(tau * self.rho))


@dataclass
class FirstVariationReport:
    derivative: float
    derivative_half: float
    step: float
    scale: float
    values: list = field(default_factory=list)
    threshold: float = 1e-6

    @property
    def converged(self):
        return abs(self.derivative - self.derivative_half) < max(self.threshold * self.scale,
                                                                 1e-3 * abs(self.derivative))

    @property
    def passed(self):
        return abs(self.derivative) < self.threshold * self.scale

    def as_dict(self):
        out = dict(self.__dict__)
        out.update(converged=self.converged, passed=self.passed)
        return out


def action_increment(curve, other, k=0.5):
    """``A_k(other) - A_k(curve)`` through the strip between the two curves."""
    dkin = other.kinetic() - curve.kinetic()
    return dkin + k * (other.T - curve.T) - strip_flux(curve.system, curve, other)


def first_variation_check(curve, variation, k=0.5, h=1e-2, threshold=1e-6):
    """Derivative of ``A_k`` along a closed variation at ``tau = 0``.

    Five-point centered differences with steps ``h`` and ``h/2``; the
    holonomy term enters through the flux of ``Omega`` over the strip swept
    between ``gamma`` and ``gamma_tau``, so the mod-1 ambiguity never
    appears.
    """
    from .orbits import ClosedOrbit

    if isinstance(curve, ClosedOrbit):
        curve = curve.lifted_curve()

    def deriv(step):
        vals = {j: action_increment(curve, variation.apply(curve, j * step), k)
                for j in (-2, -1, 1, 2)}
        return (vals[-2] - 8 * vals[-1] + 8 * vals[1] - vals[2]) / (12 * step), vals

    d1, vals = deriv(h)
    d2, _ = deriv(0.5 * h)
    return FirstVariationReport(float(d2), float(d1), float(h), max(1.0, curve.length()),
                                [float(vals[j]) for j in (-2, -1, 1, 2)], threshold)


def circle_curve(system, center, radius, n=256, speed=1.0, clockwise=False):
    """Round circle in a flat chart, length-parametrized at constant ``speed``."""
    sign = -1.0 if clockwise else 1.0
    c = np.asarray(center, float)

    def fn(s):
        return np.stack([c[0] + radius * np.sin(sign * TWO_PI * s),
                         c[1] - radius * np.cos(sign * TWO_PI * s)], axis=1)

    return LiftedCurve.from_function(system, fn, (0.0, 0.0), TWO_PI * radius / speed, n)


__all__ = [
    "PointwiseResidual", "pestov_terms", "pestov_pointwise", "PestovReport",
    "integrated_identities", "divergence_integrals", "measure_symmetry", "MechanismReport",
    "cohomological_mechanism", "integrand_degree", "default_quadrature", "PeriodicFunction", "IndexFormEvaluation", "IndexFormContext",
    "index_form", "FreeTimeAction", "free_time_action", "Variation", "FirstVariationReport",
    "action_increment", "first_variation_check", "circle_curve",
]
