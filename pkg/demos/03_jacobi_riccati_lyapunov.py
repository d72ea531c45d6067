"""Jacobi fields, the Riccati equation and Lyapunov exponents.

Run with ``python demos/03_jacobi_riccati_lyapunov.py``.
"""

import numpy as np

from magflow import systems
from magflow.flow import (hyperbolicity_diagnostic, integrate_orbit, jacobi_vs_flow_differencing,
                          lyapunov_exponent, riccati_advance)
from magflow.systems import random_points

rng = np.random.default_rng(2)

# %% Jacobi fields against centered differences of nearby orbits: the error
# falls like h^2 until the integrator tolerance takes over.
s = systems.random_torus(rng)
rep = jacobi_vs_flow_differencing(s, [0.3, 0.6, 1.0], rng.standard_normal(3), 5.0,
                                  np.logspace(-1, -6, 11))
for h, e in zip(rep.steps, rep.errors):
    print(f"h = {h:.1e}   |difference - J| = {e:.2e}")
print(f"observed order {rep.observed_order:.3f}, floor {rep.floor:.1e}")

# %% Constant curvature -1 and lambda = 0.5: K_eff = -3/4, the Riccati
# solution is attracted to sqrt(3/4) and so is the Lyapunov exponent.
h = systems.hyperbolic(0.5)
orbit = integrate_orbit(h, [0.1, 0.2, 0.3], (0.0, 30.0))
print(f"\nRiccati u(30) = {riccati_advance(h, orbit, 0.0).value:.12f}  "
      f"(sqrt 0.75 = {np.sqrt(0.75):.12f})")
est = lyapunov_exponent(h, [0.1, 0.2, 0.3], 200.0)
print(f"Lyapunov exponent {est.exponent:.6f}, tail slope {est.tail_slope:.10f}")

# %% Sign diagnostic: certified when K_eff < 0 at every sample.
for name, sys_ in [("hyperbolic 0.5", h), ("flat 0.3", systems.flat_torus(0.3))]:
    d = hyperbolicity_diagnostic(sys_, random_points(rng, 100, sys_), n_orbits=1)
    print(f"{name:15s} K_eff in [{d.keff_min:+.3f}, {d.keff_max:+.3f}]  -> {d.status}")
