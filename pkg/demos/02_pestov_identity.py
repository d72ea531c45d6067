"""The Pestov identity and the frame calculus on random conformal tori.

Run with ``python demos/02_pestov_identity.py``.
"""

import numpy as np

from magflow import systems
from magflow.smbundle import (TrigJet, UnitTangent, corrupted_frame, frame_at,
                              magnetic_commutators_check)
from magflow.systems import random_points
from magflow.variational import default_quadrature, divergence_integrals, integrated_identities, \
    pestov_pointwise

rng = np.random.default_rng(1)

# %% Pointwise identity: residuals sit at roundoff for random test functions.
worst = 0.0
for _ in range(5):
    s = systems.random_torus(rng)
    for _ in range(10):
        phi = TrigJet.random(rng, 2, 2)
        worst = max(worst, pestov_pointwise(s, phi, random_points(rng, 10)).relative.max())
print(f"pointwise identity, 500 triples: max relative residual {worst:.2e}")

# %% Integrated identities with the tensor trapezoidal rule on SM.
s = systems.random_torus(rng)
phi = TrigJet.random(rng, 2, 2)
rep = integrated_identities(s, phi)
print(f"integrated identity residual {rep.integrated_pestov:.2e}, "
      f"square expansion {rep.square_expansion:.2e}")
for k, v in rep.integrals.items():
    print(f"  int {k:8s} = {v: .10f}")
q = default_quadrature(s, phi, 8)
print("divergences:", {k: f"{v:.1e}" for k, v in divergence_integrals(s, phi, q).items()})

# %% A frame with one coefficient off by 1e-3 fails the commutator checks.
z = random_points(rng, 5)
bad = corrupted_frame(frame_at(s, UnitTangent.from_state(z)))
good = magnetic_commutators_check(s, phi, z)
corrupt = magnetic_commutators_check(s, phi, z, bad)
for name in good:
    if name != "scale":
        print(f"{name:14s} exact frame {np.max(good[name] / good['scale']):.1e}   "
              f"corrupted {np.max(corrupt[name] / corrupt['scale']):.1e}")
