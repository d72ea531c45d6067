"""Ready-made magnetic systems used by tests, demos and the CLI."""

from __future__ import annotations

import numpy as np

from .fourier import TWO_PI, TrigPolynomial, torus_series
from .surface import ConformalTorusSpec, HyperbolicConstantSpec, MagneticSystem


def flat_torus(lam0=0.0, c=None):
    """Flat unit torus with constant ``lambda = lam0``."""
    spec = ConformalTorusSpec(torus_series(), torus_series([((0, 0), lam0, 0.0)]))
    return MagneticSystem.from_spec(spec, c=c, label=f"flat_torus(lambda={lam0})")


def random_torus_spec(rng, u_degree=2, lambda_degree=2, u_amplitude=0.05,
                      lambda_mean=0.3, lambda_amplitude=0.1):
    """Conformal torus with random smooth ``u`` and ``lambda``.

    Non-constant modes have magnitudes ``amplitude * exp(-|k|_1)``; ``u`` has
    no mean and ``lambda`` has mean ``lambda_mean``, so ``Omega`` is
    non-exact whenever ``lambda_mean != 0``.
    """
    scales = (TWO_PI, TWO_PI)
    u = TrigPolynomial.random(rng, u_degree, scales, amplitude=u_amplitude, decay=1.0,
                              include_constant=False)
    lam = TrigPolynomial.random(rng, lambda_degree, scales, amplitude=lambda_amplitude,
                                decay=1.0, include_constant=False)
    lam = lam + lambda_mean
    return ConformalTorusSpec(u, lam)


def random_torus(rng, c=None, **kwargs):
    return MagneticSystem.from_spec(random_torus_spec(rng, **kwargs), c=c, label="random_torus")


def banded_torus(lam0=0.2, u_amp=0.1, lam_wave=0.0):
    """Torus with ``u = u_amp cos(2 pi x2)``.

    ``x2 = 1/2`` carries a hyperbolic closed geodesic in class ``(1, 0)``
    when ``lam0 = 0``; ``lam_wave`` adds ``lam_wave * sin(2 pi x1)`` to
    ``lambda``.
    """
    u = torus_series([((0, 1), u_amp, 0.0)])
    terms = [((0, 0), lam0, 0.0)]
    if lam_wave:
        terms.append(((1, 0), 0.0, lam_wave))
    spec = ConformalTorusSpec(u, torus_series(terms))
    return MagneticSystem.from_spec(spec, label=f"banded_torus(lambda={lam0})")


def hyperbolic(lam=0.5, c=None, generators=None):
    """Curvature -1 genus-two model in the Poincaré disk with constant ``lambda``."""
    kwargs = {} if generators is None else {"deck_generators": generators}
    spec = HyperbolicConstantSpec(lam, **kwargs)
    return MagneticSystem.from_spec(spec, c=c, label=f"hyperbolic(lambda={lam})")


def random_points(rng, n, system=None):
    """Uniform random SM states in the torus cell, or in ``|x| < 0.6`` for the disk."""
    theta = rng.uniform(0.0, TWO_PI, n)
    if system is not None and not system.surface.periodic:
        r = 0.6 * np.sqrt(rng.uniform(0.0, 1.0, n))
        a = rng.uniform(0.0, TWO_PI, n)
        return np.stack([r * np.cos(a), r * np.sin(a), theta], axis=-1)
    return np.stack([rng.uniform(0, 1, n), rng.uniform(0, 1, n), theta], axis=-1)
