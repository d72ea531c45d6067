"""Closed curves in translation charts, 2-chain fluxes and line integrals.

A closed curve on the surface is stored as a lift ``gamma(sigma)``,
``sigma in [0, 1)``, to a chart in which its deck transformation is the
translation by ``shift``: ``gamma(sigma + 1) = gamma(sigma) + shift``. For
the torus the chart is the universal cover itself; for the hyperbolic
backend it is the axis band of the deck element (see
:class:`magflow.hyperbolic.AxisChart`).

Two lifts with the same shift bound the strip
``S(s, sigma) = (1 - s) ref(sigma) + s gamma(sigma)`` whose oriented
boundary is ``gamma - ref``; since the strip commutes with the
translation it is a genuine 2-chain on the quotient cylinder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError
from .fourier import periodic_derivative, periodic_shift


def circular_distance(a, b):
    """Distance on R/Z."""
    d = np.mod(np.asarray(a) - np.asarray(b), 1.0)
    return np.minimum(d, 1.0 - d)


def mod1(x):
    """Representative in [0, 1)."""
    y = np.mod(x, 1.0)
    return np.where(y >= 1.0, 0.0, y)


@dataclass
class LiftedCurve:
    """Uniform samples of a closed curve lift.

    Attributes
    ----------
    system : MagneticSystem
        System expressed in the translation chart.
    points : ndarray, shape (N, 2)
        ``gamma(j / N)``.
    shift : ndarray, shape (2,)
        Deck translation.
    T : float
        Time length of the parametrization (``t = sigma * T``).
    tangents : ndarray, shape (N, 2), optional
        Exact ``d gamma / d sigma``; otherwise it is computed spectrally.
        Piecewise-smooth curves (polygons) should supply one-sided tangents
        with corners placed on sample points.
    """

    system: object
    points: np.ndarray
    shift: np.ndarray
    T: float
    tangents: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.shift = np.asarray(self.shift, dtype=float)
        if self.tangents is not None:
            self.tangents = np.asarray(self.tangents, dtype=float).reshape(self.points.shape)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ContractError("points must be (N, 2)")
        if self.T <= 0:
            raise ContractError("time length must be positive")

    @property
    def n(self):
        return len(self.points)

    @property
    def sigma(self):
        return np.arange(self.n) / self.n

    @property
    def periodic_part(self):
        return self.points - self.sigma[:, None] * self.shift

    def derivative(self):
        """``d gamma / d sigma`` (given, or spectral)."""
        if self.tangents is not None:
            return self.tangents
        return periodic_derivative(self.periodic_part, 1.0, axis=0) + self.shift

    def speed_sq(self):
        """``|d gamma / d sigma|_g^2`` at the samples."""
        d = self.derivative()
        return self.system.surface.area_density(self.points) * np.sum(d * d, axis=1)

    def length(self):
        return float(np.mean(np.sqrt(self.speed_sq())))

    def kinetic(self):
        """``(1/2) int_0^T |gamma_t|^2 dt``."""
        return float(np.mean(self.speed_sq()) / (2.0 * self.T))

    def normal(self):
        """Left unit g-normal at the samples (chart components)."""
        d = self.derivative()
        rot = np.stack([-d[:, 1], d[:, 0]], axis=1)
        return rot / np.sqrt(self.speed_sq())[:, None]

    def start_shifted(self, delta):
        """Same curve started at ``sigma = delta`` (band-limited resampling)."""
        if self.tangents is not None:
            raise ContractError("cannot resample a curve with prescribed tangents")
        per = periodic_shift(self.periodic_part, delta, 1.0, axis=0)
        pts = per + (self.sigma[:, None] + delta) * self.shift
        return LiftedCurve(self.system, pts, self.shift, self.T)

    def with_points(self, points, T=None):
        return LiftedCurve(self.system, points, self.shift, self.T if T is None else T)

    def reversed(self):
        """Opposite orientation (shift negated)."""
        pts = np.concatenate([self.points[:1], self.points[:0:-1]])
        tan = None if self.tangents is None else -np.concatenate(
            [self.tangents[-1:], self.tangents[:0:-1]])
        return LiftedCurve(self.system, pts, -self.shift, self.T, tan)

    @classmethod
    def from_function(cls, system, fn, shift, T, n=256, derivative=None):
        """Sample ``fn(sigma) -> (len(sigma), 2)``; checks closure.

        ``derivative`` optionally gives ``d fn / d sigma`` in the same form.
        """
        sigma = np.arange(n) / n
        pts = np.asarray(fn(sigma), dtype=float)
        end = np.asarray(fn(np.array([1.0])), dtype=float)[0]
        if np.linalg.norm(end - pts[0] - np.asarray(shift, float)) > 1e-9:
            raise ContractError("curve is not closed under its deck translation")
        tangents = None if derivative is None else np.asarray(derivative(sigma), dtype=float)
        return cls(system, pts, shift, T, tangents)

    @classmethod
    def polygon(cls, system, vertices, T=1.0, n_per_edge=64):
        """Closed polygon through ``vertices`` (contractible), exact tangents."""
        v = np.asarray(vertices, dtype=float)
        edges = np.roll(v, -1, axis=0) - v
        k = len(v)
        frac = np.arange(n_per_edge) / n_per_edge
        pts = np.concatenate([v[i] + frac[:, None] * edges[i] for i in range(k)])
        tan = np.concatenate([np.tile(k * edges[i], (n_per_edge, 1)) for i in range(k)])
        return cls(system, pts, np.zeros(2), T, tan)

    @classmethod
    def constant(cls, system, point, T, n=64):
        return cls(system, np.tile(np.asarray(point, float), (n, 1)), np.zeros(2), T)


def strip_flux(system, ref: LiftedCurve, curve: LiftedCurve, n_s=24):
    """``int_S Omega`` over the strip with boundary ``curve - ref``.

    Gauss--Legendre in the interpolation parameter, trapezoidal (spectral)
    in ``sigma``.
    """
    if curve.n != ref.n:
        raise ContractError("curves must share the sample count")
    if np.linalg.norm(curve.shift - ref.shift) > 1e-12:
        raise ContractError("curves lie in different deck classes")
    s, w = np.polynomial.legendre.leggauss(n_s)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    g, r = curve.points, ref.points
    dg, dr = curve.derivative(), ref.derivative()
    ds = g - r
    total = 0.0
    for sk, wk in zip(s, w):
        pts = (1.0 - sk) * r + sk * g
        dsig = (1.0 - sk) * dr + sk * dg
        jac = ds[:, 0] * dsig[:, 1] - ds[:, 1] * dsig[:, 0]
        total += wk * np.mean(system.flux_density(pts) * jac)
    return float(total)


def line_integral(curve: LiftedCurve, one_form):
    """``int_gamma beta`` for ``one_form(points) -> (..., 2)`` chart components."""
    comps = np.asarray(one_form(curve.points), dtype=float)
    return float(np.mean(np.sum(comps * curve.derivative(), axis=1)))
