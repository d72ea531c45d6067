"""Holonomy, actions and deformations of the circle connection.

Run with ``python demos/04_action_spectrum.py``.
"""

import numpy as np

from magflow import systems
from magflow.fourier import torus_series
from magflow.orbits import (TopologicalClass, continue_in_parameter, find_hyperbolic_orbit,
                            shoot_and_refine)
from magflow.spectrum import (BetaFamily, ConnectionData, OneForm, action_entry,
                              action_spectrum, isospectral_derivative_check, spectrum_csv)

# %% Hyperbolic spectrum: for hypercycles the action is l sqrt(1 - lambda^2).
h = systems.hyperbolic(0.5)
entries = action_spectrum(ConnectionData(h), [find_hyperbolic_orbit(h, w) for w in "abcd"])
print(spectrum_csv(entries))

# %% Deformations alpha + tau beta on a banded torus. Exact beta leaves every
# action entry fixed; closed and generic beta move the action at the rate
# -(1 / 2 pi c) int beta'.
band = systems.banded_torus(0.2, 0.1)
orbit = shoot_and_refine(band, TopologicalClass.torus(1, 0), [0.0, 0.5, 0.0], 1.0)
taus = np.linspace(-0.1, 0.1, 9)
families = {
    "exact": OneForm.exact(torus_series([((1, 0), 0.05, 0.02)])),
    "closed": OneForm.closed(0.3, 0.1),
    "generic": OneForm.random(np.random.default_rng(5)),
}
for name, form in families.items():
    conn = ConnectionData(band, BetaFamily.linear(form))
    branch = continue_in_parameter(conn.system_at, orbit, taus)
    lifts = [action_entry(conn, o, t).action_lift for t, o in zip(branch.taus, branch.orbits)]
    rep = isospectral_derivative_check(conn, branch, 0.0)
    print(f"{name:8s} action spread {np.ptp(lifts):.2e}  length spread {np.ptp(branch.lengths):.2e}"
          f"  d a/d tau = {rep.derivative:+.6e}  predicted {rep.predicted:+.6e}")
