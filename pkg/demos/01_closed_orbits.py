"""Closed magnetic geodesics: circles, hypercycles and a banded torus.

Run with ``python demos/01_closed_orbits.py``.
"""

import numpy as np

from magflow import systems
from magflow.orbits import (TopologicalClass, circle_seed, find_hyperbolic_orbit,
                            hyperbolic_orbit_oracle, shoot_and_refine)

# %% Constant field on the flat torus: orbits are circles of radius 1/lambda.
# Every circle of that radius closes, so the orbit is degenerate (trace 3).
flat = systems.flat_torus(0.5)
seed, T = circle_seed(flat)
circle = shoot_and_refine(flat, TopologicalClass.torus(0, 0), seed, T)
print(f"flat circle: T = {circle.T:.12f} (2 pi / lambda = {2 * np.pi / 0.5:.12f}), "
      f"trace = {circle.monodromy_trace:.6f}, degenerate = {circle.degenerate}")

# %% K = -1 with constant lambda: hypercycles at distance artanh(lambda)
# from the axis of each deck element, period l / sqrt(1 - lambda^2).
print("\nword  lambda  T (shooting)        T (oracle)          |diff|")
for lam in (0.3, 0.5, 0.8):
    s = systems.hyperbolic(lam)
    for word in ("a", "ab", "aB"):
        o = find_hyperbolic_orbit(s, word)
        orc = hyperbolic_orbit_oracle(s, word)
        print(f"{word:5s} {lam:5.2f}  {o.T:.15f}  {orc.T:.15f}  {abs(o.T - orc.T):.1e}")

# %% A non-constant example: lambda = 0.2 on a torus with a cosine band in
# the conformal factor. The (1, 0) orbit settles below the band centre and
# is hyperbolic.
band = systems.banded_torus(0.2, 0.1)
o = shoot_and_refine(band, TopologicalClass.torus(1, 0), [0.0, 0.5, 0.0], 1.0)
print(f"\nbanded torus (1,0): T = {o.T:.12f}, x2 = {o.z0[1]:.9f}, "
      f"trace = {o.monodromy_trace:.6f}, Newton iterations = {o.iterations}")
