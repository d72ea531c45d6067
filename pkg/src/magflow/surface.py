"""Surface backends and magnetic systems.

Every backend is a conformal chart: the metric is ``g = exp(2u) (dx1^2 +
dx2^2)`` for an explicit conformal exponent ``u``. Three charts exist:

* :class:`ConformalTorus` -- the unit square with periodic Fourier ``u``;
  the chart is also the universal cover ``R^2``.
* :class:`PoincareDisk` -- curvature ``-1``, ``u = log(2 / (1 - |x|^2))``.
* :class:`AxisBand` -- curvature ``-1`` in the band ``0 < x2 < pi``,
  ``u = -log(sin x2)``; used to straighten one deck translation.

Rotation by pi/2 (the complex structure ``i``) is counterclockwise in the
chart. Under the opposite orientation the sign of ``lambda`` flips.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import ConfigurationError, DegenerateInputError, DomainError
from .fourier import TWO_PI, TrigPolynomial
from .hyperbolic import octagon_generators, translation_length


class SurfacePoint(NamedTuple):
    """Chart coordinates of a point of the surface."""

    x1: float
    x2: float

    def reduced(self):
        """Torus representative in ``[0, 1)^2``."""
        return SurfacePoint(self.x1 % 1.0, self.x2 % 1.0)


class ConformalJet(NamedTuple):
    u: np.ndarray
    du: np.ndarray   # (..., 2)
    d2u: np.ndarray  # (..., 2, 2)


class ScalarJet(NamedTuple):
    value: np.ndarray
    grad: np.ndarray  # (..., 2) chart partials


@dataclass(frozen=True)
class MetricJet:
    """Metric data at chart points: ``g = exp(2u) |dx|^2``."""

    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    conformal_factor: np.ndarray
    curvature: np.ndarray

    @property
    def area_density(self):
        return self.conformal_factor


def _points(p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError("points must have trailing dimension 2")
    return p


# --------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class ConformalTorusSpec:
    """Conformal exponent ``u`` and magnetic intensity ``lambda`` on the unit torus."""

    fourier_u: TrigPolynomial
    fourier_lambda: TrigPolynomial
    max_degree: int = 8

    def __post_init__(self):
        for name in ("fourier_u", "fourier_lambda"):
            series = getattr(self, name)
            if series.conjugate_residual() > 1e-14 * max(1.0, np.abs(series.coeffs).max(initial=0)):
                raise ConfigurationError(f"{name} is not conjugate-symmetric")
            if max(series.degree, default=0) > self.max_degree:
                raise ConfigurationError(f"{name} exceeds max_degree={self.max_degree}")


@dataclass(frozen=True)
class HyperbolicConstantSpec:
    """Curvature ``-1`` with constant ``lambda`` and deck generators.

    ``deck_generators`` maps letters to real unit-determinant matrices; the
    genus-two octagon group is used when it is omitted.
    """

    lambda_const: float
    curvature: float = -1.0
    deck_generators: dict = field(default_factory=octagon_generators)

    def __post_init__(self):
        if self.curvature != -1.0:
            raise ConfigurationError("only curvature -1 is supported")
        if not abs(self.lambda_const) < 1.0:
            raise ConfigurationError("need |lambda_const| < 1 for the Anosov regime")
        for name, g in self.deck_generators.items():
            g = np.asarray(g, dtype=float)
            if g.shape != (2, 2) or abs(np.linalg.det(g) - 1.0) > 1e-10:
                raise ConfigurationError(f"generator {name} must be 2x2 with det 1")
            if abs(np.trace(g)) <= 2.0:
                raise ConfigurationError(f"generator {name} is not hyperbolic")

    def translation_lengths(self):
        return {k: translation_length(g) for k, g in self.deck_generators.items()}


# --------------------------------------------------------------------------
# charts


class ConformalSurface:
    """Base class of conformal charts."""

    name = "abstract"
    #: True when the chart is a translation cover of a compact quotient
    periodic = False

    def conformal(self, p) -> ConformalJet:
        raise NotImplementedError

    def check_domain(self, p):
        return _points(p)

    def curvature(self, p):
        jet = self.conformal(p)
        return -np.exp(-2.0 * jet.u) * (jet.d2u[..., 0, 0] + jet.d2u[..., 1, 1])

    def area_density(self, p):
        return np.exp(2.0 * self.conformal(p).u)

    def recenter(self, state):
        """Equivalent state in a well-conditioned part of the chart."""
        return np.asarray(state, dtype=float)

    def to_dict(self):
        raise NotImplementedError


class ConformalTorus(ConformalSurface):
    name = "conformal_torus"
    periodic = True

    def __init__(self, u: TrigPolynomial):
        self.u = u

    def conformal(self, p):
        p = _points(p)
        u, du, d2u = self.u.jet(p, 2)
        return ConformalJet(u, du, d2u)

    def area(self, n=64):
        g = (np.arange(n) + 0.0) / n
        x1, x2 = np.meshgrid(g, g, indexing="ij")
        return float(np.mean(self.area_density(np.stack([x1, x2], axis=-1))))

    def recenter(self, state):
        state = np.array(state, dtype=float)
        state[..., :2] %= 1.0
        state[..., 2] %= TWO_PI
        return state

    def to_dict(self):
        return {"chart": self.name, "fourier_u": self.u.table()}


class PoincareDisk(ConformalSurface):
    name = "poincare_disk"

    def check_domain(self, p):
        p = _points(p)
        if np.any(np.sum(p * p, axis=-1) >= 1.0):
            raise DomainError("point outside the Poincaré disk")
        return p

    def conformal(self, p):
        p = self.check_domain(p)
        x1, x2 = p[..., 0], p[..., 1]
        s = 1.0 - x1 * x1 - x2 * x2
        u = np.log(2.0 / s)
        du = np.stack([2 * x1 / s, 2 * x2 / s], axis=-1)
        d11 = 2 / s + 4 * x1 * x1 / s ** 2
        d22 = 2 / s + 4 * x2 * x2 / s ** 2
        d12 = 4 * x1 * x2 / s ** 2
        d2u = np.stack([np.stack([d11, d12], -1), np.stack([d12, d22], -1)], -2)
        return ConformalJet(u, du, d2u)

    def curvature(self, p):
        return -np.ones(np.shape(self.check_domain(p))[:-1])

    def recenter(self, state):
        from .hyperbolic import DiskIsometry

        state = np.asarray(state, dtype=float)
        iso = DiskIsometry.moving_to_origin(state[0] + 1j * state[1])
        return iso.apply(state)

    def to_dict(self):
        return {"chart": self.name}


class AxisBand(ConformalSurface):
    name = "axis_band"

    def check_domain(self, p):
        p = _points(p)
        if np.any((p[..., 1] <= 0.0) | (p[..., 1] >= np.pi)):
            raise DomainError("point outside the band 0 < x2 < pi")
        return p

    def conformal(self, p):
        p = self.check_domain(p)
        x2 = p[..., 1]
        zero = np.zeros_like(x2)
        u = -np.log(np.sin(x2))
        du = np.stack([zero, -1.0 / np.tan(x2)], axis=-1)
        c2 = 1.0 / np.sin(x2) ** 2
        d2u = np.stack([np.stack([zero, zero], -1), np.stack([zero, c2], -1)], -2)
        return ConformalJet(u, du, d2u)

    def curvature(self, p):
        return -np.ones(np.shape(self.check_domain(p))[:-1])

    def to_dict(self):
        return {"chart": self.name}


# --------------------------------------------------------------------------
# magnetic intensity fields


class LambdaField:
    """Smooth function on the chart with value and gradient."""

    def jet(self, p) -> ScalarJet:
        raise NotImplementedError

    def __call__(self, p):
        return self.jet(p).value

    @property
    def is_constant(self):
        return False


class ConstantLambda(LambdaField):
    def __init__(self, value):
        self.value = float(value)

    def jet(self, p):
        p = _points(p)
        shape = p.shape[:-1]
        return ScalarJet(np.full(shape, self.value), np.zeros(shape + (2,)))

    @property
    def is_constant(self):
        return True

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


class FourierLambda(LambdaField):
    def __init__(self, series: TrigPolynomial):
        self.series = series

    def jet(self, p):
        value, grad = self.series.jet(_points(p), 1)
        return ScalarJet(value, grad)

    @property
    def is_constant(self):
        return bool(np.all(self.series.modes == 0))

    def to_dict(self):
        return {"kind": "fourier", "table": self.series.table()}


# --------------------------------------------------------------------------
# magnetic system


@dataclass
class MagneticSystem:
    """The pair ``(g, Omega = lambda * area form)`` plus integrality constant ``c``.

    ``spec`` keeps the originating spec (if any) for serialization and
    hashing; ``c`` defaults to the smallest positive constant that makes
    ``c * integral(Omega)`` an integer on the torus and to 1 otherwise.
    """

    surface: ConformalSurface
    lam: LambdaField
    c: float | None = None
    spec: object = None
    label: str = ""

    def __post_init__(self):
        if self.c is None:
            self.c = 1.0
            if isinstance(self.surface, ConformalTorus):
                flux = self.total_flux()
                if abs(flux) > 1e-12:
                    self.c = 1.0 / abs(flux)
        if self.c == 0:
            raise ConfigurationError("integrality constant c must be nonzero")

    @classmethod
    def from_spec(cls, spec, c=None, label=""):
        if isinstance(spec, ConformalTorusSpec):
            lam = FourierLambda(spec.fourier_lambda)
            if lam.is_constant:
                lam = ConstantLambda(spec.fourier_lambda.mean())
            return cls(ConformalTorus(spec.fourier_u), lam, c=c, spec=spec, label=label)
        if isinstance(spec, HyperbolicConstantSpec):
            return cls(PoincareDisk(), ConstantLambda(spec.lambda_const), c=c, spec=spec,
                       label=label)
        raise TypeError(f"unsupported spec {type(spec).__name__}")

    def with_surface(self, surface):
        """Same magnetic data on another chart (constant lambda only)."""
        if not self.lam.is_constant:
            raise ConfigurationError("chart change requires constant lambda")
        return MagneticSystem(surface, self.lam, c=self.c, spec=self.spec, label=self.label)

    def total_flux(self, n=64):
        """``integral_M Omega`` over the torus cell (spectral quadrature)."""
        if not isinstance(self.surface, ConformalTorus):
            raise ConfigurationError("total flux is only computed on the torus")
        g = np.arange(n) / n
        x1, x2 = np.meshgrid(g, g, indexing="ij")
        p = np.stack([x1, x2], axis=-1)
        return float(np.mean(self.lam(p) * self.surface.area_density(p)))

    def flux_density(self, p):
        """Coefficient of ``dx1 ^ dx2`` in ``Omega``."""
        return self.lam(p) * self.surface.area_density(p)

    def check_integrality(self, tol=1e-9):
        flux = self.c * self.total_flux()
        if abs(flux - round(flux)) > tol:
            raise ConfigurationError(f"c * integral(Omega) = {flux} is not an integer")
        return int(round(flux))

    # derived scalar fields on SM ---------------------------------------

    def velocity(self, state):
        """Chart components of ``X_lambda`` at states ``(..., 3)``."""
        state = np.asarray(state, dtype=float)
        p = state[..., :2]
        jet = self.surface.conformal(p)
        lam = self.lam(p)
        e = np.exp(-jet.u)
        c, s = np.cos(state[..., 2]), np.sin(state[..., 2])
        u1, u2 = jet.du[..., 0], jet.du[..., 1]
        return np.stack([e * c, e * s, e * (-u1 * s + u2 * c) + lam], axis=-1)

    def effective_curvature(self, state):
        """``K - H(lambda) + lambda^2`` at states ``(..., 3)``."""
        state = np.asarray(state, dtype=float)
        p = state[..., :2]
        jet = self.surface.conformal(p)
        lj = self.lam.jet(p)
        k = -np.exp(-2.0 * jet.u) * (jet.d2u[..., 0, 0] + jet.d2u[..., 1, 1])
        c, s = np.cos(state[..., 2]), np.sin(state[..., 2])
        h_lam = np.exp(-jet.u) * (-s * lj.grad[..., 0] + c * lj.grad[..., 1])
        return k - h_lam + lj.value ** 2

    # serialization -------------------------------------------------------

    def to_dict(self):
        out = {"c": self.c, "label": self.label}
        if self.spec is not None:
            out["spec"] = spec_to_dict(self.spec)
        else:
            out["surface"] = self.surface.to_dict()
            out["lambda"] = self.lam.to_dict() if hasattr(self.lam, "to_dict") else repr(self.lam)
        return out

    def digest(self):
        """Stable hash of the system data (used as an orbit-database key)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# point operations


def eval_metric_data(surface, p):
    """Metric jet at chart points ``p``.

    Raises :class:`DomainError` for points outside the chart.
    """
    if isinstance(surface, MagneticSystem):
        surface = surface.surface
    jet = surface.conformal(p)
    k = -np.exp(-2.0 * jet.u) * (jet.d2u[..., 0, 0] + jet.d2u[..., 1, 1])
    if isinstance(surface, (PoincareDisk, AxisBand)):
        k = -np.ones_like(jet.u)
    return MetricJet(jet.u, jet.du, jet.d2u, np.exp(2.0 * jet.u), k)


def eval_lambda_jet(system, p):
    """Value and chart gradient of ``lambda`` at ``p``."""
    system.surface.check_domain(p)
    return system.lam.jet(p)


def rotate_tangent(p, v, surface=None):
    """Rotate chart vector ``v`` by pi/2 counterclockwise.

    Conformal charts make ``i`` a Euclidean rotation of chart components,
    so the result is a g-isometry for every backend.
    """
    if surface is not None:
        surface.check_domain(p)
    v = np.asarray(v, dtype=float)
    if np.any(np.linalg.norm(v, axis=-1) == 0.0):
        raise DegenerateInputError("cannot rotate the zero vector")
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def metric_inner(surface, p, v, w):
    """``g_p(v, w)`` for chart vectors."""
    return surface.area_density(p) * np.sum(np.asarray(v) * np.asarray(w), axis=-1)


# --------------------------------------------------------------------------
# structured-text serialization


def spec_to_dict(spec):
    if isinstance(spec, ConformalTorusSpec):
        return {
            "backend": "conformal_torus",
            "max_degree": spec.max_degree,
            "fourier_u": spec.fourier_u.table(),
            "fourier_lambda": spec.fourier_lambda.table(),
        }
    if isinstance(spec, HyperbolicConstantSpec):
        return {
            "backend": "hyperbolic",
            "curvature": spec.curvature,
            "lambda_const": spec.lambda_const,
            "deck_generators": {k: np.asarray(g).tolist()
                                for k, g in sorted(spec.deck_generators.items())},
        }
    raise TypeError(f"unsupported spec {type(spec).__name__}")


def spec_from_dict(doc):
    backend = doc.get("backend")
    if backend == "conformal_torus":
        scales = (TWO_PI, TWO_PI)
        return ConformalTorusSpec(
            TrigPolynomial.from_table(doc.get("fourier_u", []), scales),
            TrigPolynomial.from_table(doc.get("fourier_lambda", []), scales),
            max_degree=int(doc.get("max_degree", 8)),
        )
    if backend == "hyperbolic":
        gens = doc.get("deck_generators")
        kwargs = {}
        if gens:
            kwargs["deck_generators"] = {k: np.asarray(v, dtype=float) for k, v in gens.items()}
        return HyperbolicConstantSpec(float(doc["lambda_const"]),
                                      curvature=float(doc.get("curvature", -1.0)), **kwargs)
    raise ConfigurationError(f"unknown backend {backend!r}")


def save_spec(spec, path):
    with open(path, "w") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_spec(path):
    with open(path) as fh:
        return spec_from_dict(json.load(fh))
