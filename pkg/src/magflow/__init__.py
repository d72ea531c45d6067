"""Magnetic flows on closed surfaces.

Chart-level frame calculus on the unit tangent bundle, the Pestov-type
energy identities, Jacobi/Riccati/Lyapunov tools, closed-orbit shooting and
continuation, holonomy and action spectra, and a batch driver
(``python -m magflow``).
"""

from .exceptions import (BandwidthError, ConfigurationError, ContinuationError, ContractError,
                         DegenerateInputError, DegenerateOrbitError, DomainError, MagflowError,
                         NoConvergenceError, RegimeError, StiffnessError)
from .fourier import TrigPolynomial, torus_series
from .surface import (AxisBand, ConformalTorus, ConformalTorusSpec, HyperbolicConstantSpec,
                      MagneticSystem, PoincareDisk, load_spec, save_spec)
from .smbundle import (FieldCalculus, LiouvilleQuadrature, PolyTrigJet, TrigJet, UnitTangent,
                       apply_field, duality_residual, frame_at, geodesic_commutators_check,
                       integrate_liouville, magnetic_commutators_check)
from .flow import (hyperbolicity_diagnostic, integrate_jacobi, integrate_orbit,
                   jacobi_vs_flow_differencing, lyapunov_exponent, riccati_advance,
                   variational_flow)
from .curves import LiftedCurve, line_integral, strip_flux
from .orbits import (ClosedOrbit, OrbitDatabase, TopologicalClass, continue_in_parameter,
                     find_hyperbolic_orbit, hyperbolic_orbit_oracle, shoot_and_refine)
from .spectrum import (ActionEntry, BetaFamily, ConnectionData, OneForm, action_entry,
                       action_spectrum, holonomy, isospectral_derivative_check)
from .variational import (IndexFormContext, PeriodicFunction, Variation,
                          cohomological_mechanism, divergence_integrals, first_variation_check,
                          free_time_action, index_form, integrated_identities, measure_symmetry,
                          pestov_pointwise)

__version__ = "0.1.0"
