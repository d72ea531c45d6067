"""Frame calculus on the unit sphere bundle.

SM is coordinatized by ``(x1, x2, theta)`` where the unit vector is
``v = exp(-u) (cos theta, sin theta)`` in chart components. In these
coordinates the frame fields are

    X = e^{-u} (cos t, sin t, -u_1 sin t + u_2 cos t)
    H = e^{-u} (-sin t, cos t, -(u_1 cos t + u_2 sin t))
    V = (0, 0, 1)

and ``X_lambda = X + lambda V``. The dual coframe is

    alpha = e^{u} (cos t dx1 + sin t dx2)
    beta  = e^{u} (-sin t dx1 + cos t dx2)
    psi   = dtheta - u_2 dx1 + u_1 dx2

and the Liouville measure is ``exp(2u) dx1 dx2 dtheta``.

Derivatives of test functions are always taken from exact jets: a field
applied to ``f`` is ``a . grad f`` and its gradient is
``(da)^T grad f + Hess f . a``, which is what second compositions such as
``V X_lambda f`` are built from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import BandwidthError, ConfigurationError
from .fourier import TWO_PI, TrigPolynomial
from .surface import ConformalTorus, MagneticSystem

FIELDS = ("X", "H", "V", "X_lambda")


@dataclass(frozen=True)
class UnitTangent:
    """Point ``(x, v)`` of SM given by chart point and frame angle.

    The fields may be floats or equally shaped arrays (a batch of points).
    """

    x1: object
    x2: object
    theta: object

    @classmethod
    def from_state(cls, state):
        state = np.asarray(state, dtype=float)
        return cls(state[..., 0], state[..., 1], state[..., 2])

    @property
    def state(self):
        return np.stack(np.broadcast_arrays(
            np.asarray(self.x1, float), np.asarray(self.x2, float),
            np.asarray(self.theta, float)), axis=-1)

    @property
    def point(self):
        return self.state[..., :2]

    def reduced(self):
        return UnitTangent(self.x1, self.x2, np.mod(self.theta, TWO_PI))

    def vector(self, surface):
        """Chart components of the unit vector ``v``."""
        e = np.exp(-surface.conformal(self.point).u)
        return np.stack([e * np.cos(self.theta), e * np.sin(self.theta)], axis=-1)


@dataclass
class FrameCoefficients:
    """Chart coefficients of the frame fields and their first partials.

    ``coeffs[name]`` has shape ``(..., 3)``; ``partials[name][..., i, j]``
    is the derivative of coefficient ``i`` along chart variable ``j``.
    """

    coeffs: dict
    partials: dict
    curvature: np.ndarray
    lam: np.ndarray
    lam_grad: np.ndarray
    h_lambda: np.ndarray

    @property
    def effective_curvature(self):
        return self.curvature - self.h_lambda + self.lam ** 2

    def coframe(self, u, du, theta):
        """Rows of the dual forms (alpha, beta, psi) at the same points."""
        e = np.exp(u)
        c, s = np.cos(theta), np.sin(theta)
        z = np.zeros_like(c)
        alpha = np.stack([e * c, e * s, z], -1)
        beta = np.stack([-e * s, e * c, z], -1)
        psi = np.stack([-du[..., 1], du[..., 0], np.ones_like(c)], -1)
        return alpha, beta, psi


def frame_at(system: MagneticSystem, z: UnitTangent) -> FrameCoefficients:
    """Chart expressions of X, H, V, X_lambda with first partials at ``z``."""
    state = z.state
    p = state[..., :2]
    jet = system.surface.conformal(p)
    lj = system.lam.jet(p)
    theta = state[..., 2]
    c, s = np.cos(theta), np.sin(theta)
    e = np.exp(-jet.u)
    u1, u2 = jet.du[..., 0], jet.du[..., 1]
    u11, u12, u22 = jet.d2u[..., 0, 0], jet.d2u[..., 0, 1], jet.d2u[..., 1, 1]
    zero = np.zeros_like(e)

    p_x = -u1 * s + u2 * c          # X theta-coefficient / e
    q_h = -(u1 * c + u2 * s)        # H theta-coefficient / e

    x_coef = np.stack([e * c, e * s, e * p_x], -1)
    h_coef = np.stack([-e * s, e * c, e * q_h], -1)
    v_coef = np.stack([zero, zero, zero + 1.0], -1)

    def row(d1f, d2f, dtf):
        return np.stack([d1f, d2f, dtf], -1)

    dx = np.stack([
        row(-u1 * e * c, -u2 * e * c, -e * s),
        row(-u1 * e * s, -u2 * e * s, e * c),
        row(-u1 * e * p_x + e * (-u11 * s + u12 * c),
            -u2 * e * p_x + e * (-u12 * s + u22 * c),
            e * (-u1 * c - u2 * s)),
    ], -2)
    dh = np.stack([
        row(u1 * e * s, u2 * e * s, -e * c),
        row(-u1 * e * c, -u2 * e * c, -e * s),
        row(-u1 * e * q_h - e * (u11 * c + u12 * s),
            -u2 * e * q_h - e * (u12 * c + u22 * s),
            -e * p_x),
    ], -2)
    dv = np.zeros(dx.shape)

    xl_coef = x_coef.copy()
    xl_coef[..., 2] += lj.value
    dxl = dx.copy()
    dxl[..., 2, 0] += lj.grad[..., 0]
    dxl[..., 2, 1] += lj.grad[..., 1]

    curvature = -np.exp(-2.0 * jet.u) * (u11 + u22)
    h_lambda = e * (-s * lj.grad[..., 0] + c * lj.grad[..., 1])
    return FrameCoefficients(
        coeffs={"X": x_coef, "H": h_coef, "V": v_coef, "X_lambda": xl_coef},
        partials={"X": dx, "H": dh, "V": dv, "X_lambda": dxl},
        curvature=curvature, lam=lj.value, lam_grad=lj.grad, h_lambda=h_lambda,
    )


# --------------------------------------------------------------------------
# test functions on SM


class Jet2Function:
    """Scalar function on SM evaluable with value, gradient and Hessian."""

    def jet(self, state):
        raise NotImplementedError

    def __call__(self, z):
        return self.jet(_as_state(z))[0]

    @property
    def degree(self):
        raise NotImplementedError


class TrigJet(Jet2Function):
    """Trigonometric polynomial in ``(x1, x2, theta)`` for the torus backend."""

    def __init__(self, poly: TrigPolynomial):
        if poly.dim != 3:
            raise ValueError("TrigJet needs a 3-variable polynomial")
        self.poly = poly

    @classmethod
    def random(cls, rng, spatial_degree=2, fiber_degree=2, amplitude=1.0, decay=0.3):
        return cls(TrigPolynomial.random(
            rng, (spatial_degree, spatial_degree, fiber_degree), (TWO_PI, TWO_PI, 1.0),
            amplitude=amplitude, decay=decay))

    @classmethod
    def basic(cls, h: TrigPolynomial):
        """Pull back ``h`` on the torus to SM (``h o pi``)."""
        modes = np.hstack([h.modes, np.zeros((len(h.modes), 1), dtype=int)])
        return cls(TrigPolynomial(modes, h.coeffs, (TWO_PI, TWO_PI, 1.0)))

    @classmethod
    def constant(cls, value):
        return cls(TrigPolynomial.constant(value, (TWO_PI, TWO_PI, 1.0)))

    def jet(self, state):
        return self.poly.jet(state, 2)

    @property
    def degree(self):
        return self.poly.degree

    def table(self):
        return self.poly.table()

    @classmethod
    def from_table(cls, rows):
        return cls(TrigPolynomial.from_table(rows, (TWO_PI, TWO_PI, 1.0)))


class PolyTrigJet(Jet2Function):
    """``sum c_{a,b,m} x1^a x2^b exp(i m theta)`` (disk backend test functions)."""

    def __init__(self, powers, coeffs):
        self.powers = np.asarray(powers, dtype=int)  # (n, 3): a, b, m
        self.coeffs = np.asarray(coeffs, dtype=complex)

    @classmethod
    def random(cls, rng, poly_degree=3, fiber_degree=2, amplitude=1.0):
        powers, coeffs = [], []
        for a in range(poly_degree + 1):
            for b in range(poly_degree + 1 - a):
                for m in range(0, fiber_degree + 1):
                    c = amplitude * (rng.standard_normal() + 1j * rng.standard_normal())
                    if m == 0:
                        c = c.real
                    powers.append((a, b, m))
                    coeffs.append(c)
        return cls(powers, coeffs)

    def jet(self, state):
        state = np.asarray(state, dtype=float)
        x1, x2, th = state[..., 0, None], state[..., 1, None], state[..., 2, None]
        a, b, m = self.powers.T

        def pw(x, k):
            return np.where(k >= 0, x ** np.maximum(k, 0), 0.0)

        e = np.exp(1j * m * th) * self.coeffs
        f = pw(x1, a) * pw(x2, b)
        f1 = a * pw(x1, a - 1) * pw(x2, b)
        f2 = b * pw(x1, a) * pw(x2, b - 1)
        f11 = a * (a - 1) * pw(x1, a - 2) * pw(x2, b)
        f22 = b * (b - 1) * pw(x1, a) * pw(x2, b - 2)
        f12 = a * b * pw(x1, a - 1) * pw(x2, b - 1)
        im = 1j * m
        val = (f * e).sum(-1).real
        grad = np.stack([(f1 * e).sum(-1), (f2 * e).sum(-1), (im * f * e).sum(-1)], -1).real
        h = [[f11, f12, im * f1], [f12, f22, im * f2], [im * f1, im * f2, im * im * f]]
        hess = np.stack([np.stack([(hij * e).sum(-1) for hij in hrow], -1) for hrow in h],
                        -2).real
        return val, grad, hess

    @property
    def degree(self):
        return tuple(int(v) for v in self.powers.max(axis=0))


def _as_state(z):
    if isinstance(z, UnitTangent):
        return z.state
    return np.asarray(z, dtype=float)


class FieldCalculus:
    """Frame fields applied to one test function at a batch of points.

    Caches the frame and the 2-jet of ``f``; every method is exact to
    roundoff.
    """

    def __init__(self, system, f: Jet2Function, z, frame=None):
        self.system = system
        self.state = _as_state(z)
        self.frame = frame if frame is not None else frame_at(system, UnitTangent.from_state(self.state))
        self.value, self.grad, self.hess = f.jet(self.state)

    def coef(self, name):
        return self.frame.coeffs[name]

    def apply(self, name):
        """``A f`` for field ``name``."""
        return np.einsum("...i,...i->...", self.coef(name), self.grad)

    def apply_grad(self, name):
        """Chart gradient of ``A f``."""
        a = self.coef(name)
        da = self.frame.partials[name]
        return (np.einsum("...ij,...i->...j", da, self.grad)
                + np.einsum("...ij,...j->...i", self.hess, a))

    def compose(self, outer, inner):
        """``B(A f)`` with ``B = outer`` and ``A = inner``."""
        return np.einsum("...i,...i->...", self.coef(outer), self.apply_grad(inner))

    def apply_product(self, name, first, second):
        """``A(F f . G f)`` for fields ``F = first``, ``G = second``."""
        return (self.apply(first) * self.compose(name, second)
                + self.apply(second) * self.compose(name, first))

    def commutator(self, a, b):
        """``[A, B] f = A(B f) - B(A f)``."""
        return self.compose(a, b) - self.compose(b, a)


def apply_field(system, field, f, z, jet=False):
    """Directional derivative of ``f`` along a frame field at ``z``.

    With ``jet=True`` returns ``(value, gradient)`` where the gradient is the
    chart gradient of ``field(f)``, enabling compositions such as
    ``V X_lambda f``.
    """
    if field not in FIELDS:
        raise ValueError(f"unknown field {field!r}")
    calc = FieldCalculus(system, f, z)
    if jet:
        return calc.apply(field), calc.apply_grad(field)
    return calc.apply(field)


def magnetic_commutators_check(system, f, z, frame=None):
    """Residuals of the three magnetic commutation relations applied to ``f``.

    Returns a dict with keys ``"[V,X_lambda]"``, ``"[V,H]"``,
    ``"[X_lambda,H]"``; each value is an array of absolute residuals,
    together with ``"scale"``: the largest magnitude among the terms.
    ``frame`` overrides the frame coefficients (used to inject faults).
    """
    calc = FieldCalculus(system, f, z, frame=frame)
    fr = calc.frame
    lam, keff = fr.lam, fr.effective_curvature
    xl, h, v = calc.apply("X_lambda"), calc.apply("H"), calc.apply("V")
    lhs = {
        "[V,X_lambda]": calc.commutator("V", "X_lambda"),
        "[V,H]": calc.commutator("V", "H"),
        "[X_lambda,H]": calc.commutator("X_lambda", "H"),
    }
    rhs = {
        "[V,X_lambda]": h,
        "[V,H]": -xl + lam * v,
        "[X_lambda,H]": -lam * xl + keff * v,
    }
    out = {k: np.abs(lhs[k] - rhs[k]) for k in lhs}
    terms = [np.abs(calc.compose(a, b)) for a in ("V", "H", "X_lambda")
             for b in ("V", "H", "X_lambda") if a != b]
    out["scale"] = np.maximum(1.0, np.max(np.stack(terms + [np.abs(xl), np.abs(h)]), axis=0))
    return out


def geodesic_commutators_check(system, f, z, frame=None):
    """Residuals of ``[V,X]=H``, ``[V,H]=-X``, ``[X,H]=KV`` (lambda ignored)."""
    calc = FieldCalculus(system, f, z, frame=frame)
    k = calc.frame.curvature
    x, h, v = calc.apply("X"), calc.apply("H"), calc.apply("V")
    out = {
        "[V,X]": np.abs(calc.commutator("V", "X") - h),
        "[V,H]": np.abs(calc.commutator("V", "H") + x),
        "[X,H]": np.abs(calc.commutator("X", "H") - k * v),
    }
    terms = [np.abs(calc.compose(a, b)) for a in ("V", "H", "X") for b in ("V", "H", "X")
             if a != b]
    out["scale"] = np.maximum(1.0, np.max(np.stack(terms), axis=0))
    return out


def duality_residual(system, z, frame=None):
    """``max |<coframe, frame> - I|`` at ``z`` (pairings of alpha, beta, psi)."""
    state = _as_state(z)
    fr = frame if frame is not None else frame_at(system, UnitTangent.from_state(state))
    jet = system.surface.conformal(state[..., :2])
    forms = fr.coframe(jet.u, jet.du, state[..., 2])
    fields = [fr.coeffs["X"], fr.coeffs["H"], fr.coeffs["V"]]
    worst = 0.0
    for i, form in enumerate(forms):
        for j, vec in enumerate(fields):
            pairing = np.sum(form * vec, axis=-1)
            worst = max(worst, float(np.max(np.abs(pairing - (i == j)))))
    return worst


def corrupted_frame(frame, field="H", component=2, relative=1e-3):
    """Copy of ``frame`` with one coefficient scaled by ``1 + relative``.

    Negative control: the commutator checks must flag the relations that
    involve ``field``.
    """
    coeffs = {k: v.copy() for k, v in frame.coeffs.items()}
    coeffs[field][..., component] = coeffs[field][..., component] * (1.0 + relative) + relative
    return FrameCoefficients(coeffs, frame.partials, frame.curvature, frame.lam,
                             frame.lam_grad, frame.h_lambda)


# --------------------------------------------------------------------------
# Liouville quadrature


@dataclass
class LiouvilleQuadrature:
    """Tensor trapezoidal rule on the torus SM with density ``exp(2u)``.

    Weights sum to ``area(M) * 2 pi``. The node set is exact for
    trigonometric polynomials whose degree along each axis is at most
    ``(n - 1) // 2``; integrands that also involve the analytic factors
    ``exp(+-u)`` converge spectrally.
    """

    system: MagneticSystem
    n1: int
    n2: int
    ntheta: int

    def __post_init__(self):
        if not isinstance(self.system.surface, ConformalTorus):
            raise ConfigurationError("global SM quadrature exists only for the torus backend")
        g1 = np.arange(self.n1) / self.n1
        g2 = np.arange(self.n2) / self.n2
        gt = TWO_PI * np.arange(self.ntheta) / self.ntheta
        x1, x2, th = np.meshgrid(g1, g2, gt, indexing="ij")
        self.states = np.stack([x1.ravel(), x2.ravel(), th.ravel()], axis=-1)
        density = self.system.surface.area_density(self.states[:, :2])
        self.weights = density * (TWO_PI / (self.n1 * self.n2 * self.ntheta))

    @classmethod
    def for_degree(cls, system, degree, margin=0):
        """Nodes ``2 * degree + 1 (+ margin)`` per axis.

        ``degree`` is an int or a ``(d1, d2, dtheta)`` triple.
        """
        degs = (degree,) * 3 if np.isscalar(degree) else tuple(degree)
        n = [2 * d + 1 + margin for d in degs]
        return cls(system, *n)

    @property
    def bandwidth(self):
        return ((self.n1 - 1) // 2, (self.n2 - 1) // 2, (self.ntheta - 1) // 2)

    @property
    def nodes(self):
        return UnitTangent.from_state(self.states)

    @property
    def total_mass(self):
        return float(np.sum(self.weights))


def integrate_liouville(q: LiouvilleQuadrature, integrand, degree=None):
    """Integral of ``integrand`` over SM against the Liouville measure.

    ``integrand`` is an array of node values or a callable of
    :class:`UnitTangent`. ``degree`` (int or triple), when given, is the
    combined trigonometric degree of the integrand; a node set below that
    bandwidth raises :class:`BandwidthError`.
    """
    if degree is not None:
        degs = (degree,) * 3 if np.isscalar(degree) else tuple(degree)
        if any(d > b for d, b in zip(degs, q.bandwidth)):
            raise BandwidthError(f"degree {degs} exceeds quadrature bandwidth {q.bandwidth}")
    values = integrand(q.nodes) if callable(integrand) else np.asarray(integrand)
    values = np.asarray(values, dtype=float).reshape(-1)
    # fixed node order keeps the reduction deterministic
    return float(np.dot(q.weights, values))


def one_form_on_sm(system, omega1, omega2, z, rotated=False):
    """``omega_x(v)`` (or ``omega_x(iv)``) for the 1-form ``omega1 dx1 + omega2 dx2``."""
    state = _as_state(z)
    p = state[..., :2]
    e = np.exp(-system.surface.conformal(p).u)
    w1, w2 = omega1(p), omega2(p)
    c, s = np.cos(state[..., 2]), np.sin(state[..., 2])
    if rotated:
        return e * (-w1 * s + w2 * c)
    return e * (w1 * c + w2 * s)
