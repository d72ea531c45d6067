"""Magnetic flow, Jacobi fields, Riccati equation and hyperbolicity checks.

The flow is integrated in the state ``(x1, x2, theta)``, which keeps the
velocity on the unit circle by construction. Jacobi fields are represented
by the scalar components of ``J = x gamma' + y i gamma'``::

    x' = lambda y,        y'' + Keff y = 0,     Keff = K - H(lambda) + lambda^2

and the frame coefficients of the transported tangent vector are
``(x, y, y' + lambda x)`` in the basis ``(X, H, V)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .exceptions import DomainError, StiffnessError
from .smbundle import UnitTangent, frame_at

DEFAULT_TOL = 1e-11
RICCATI_BLOWUP = 1e8


def _state(z):
    if isinstance(z, UnitTangent):
        return np.asarray(z.state, dtype=float).reshape(3)
    return np.asarray(z, dtype=float).reshape(3)


def _solve(fun, t_span, y0, tol, dense=True, t_eval=None, events=None):
    sol = solve_ivp(fun, t_span, y0, method="DOP853", rtol=tol, atol=tol,
                    dense_output=dense, t_eval=t_eval, events=events)
    if sol.status == -1:
        if "step size" in sol.message.lower():
            raise StiffnessError(sol.message)
        raise DomainError(sol.message)
    return sol


def _chart_guard(system):
    """Return a callable that raises on points leaving the chart."""
    def rhs_guard(y):
        system.surface.check_domain(y[:2])
    return rhs_guard


# --------------------------------------------------------------------------
# orbits


@dataclass
class OrbitSolution:
    """A magnetic geodesic on SM with dense output.

    ``t`` and ``states`` are the integrator's accepted steps; calling the
    object evaluates the dense interpolant.
    """

    system: object
    z0: np.ndarray
    t: np.ndarray
    states: np.ndarray
    dense: object
    stats: dict = field(default_factory=dict)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.dense(t).T if t.ndim else self.dense(t)

    @property
    def t_final(self):
        return float(self.t[-1])

    def effective_curvature(self, t):
        return self.system.effective_curvature(self(t))

    def sample(self, n, t0=None, t1=None, endpoint=False):
        t0 = self.t[0] if t0 is None else t0
        t1 = self.t[-1] if t1 is None else t1
        tt = np.linspace(t0, t1, n, endpoint=endpoint)
        return tt, self(tt)

    def to_csv(self, path, n=None):
        """Write ``t, x1, x2, theta`` rows (integrator steps, or ``n`` uniform samples)."""
        if n is None:
            tt, ss = self.t, self.states
        else:
            tt, ss = self.sample(n, endpoint=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x1", "x2", "theta"])
            for ti, si in zip(tt, ss):
                w.writerow([repr(float(ti))] + [repr(float(v)) for v in si])

    def save_dense(self, path, refine=8):
        """Binary dense-output file (npz).

        Keys: ``t`` knot times, ``y`` states, ``dy`` velocities ``X_lambda``
        at the knots. Each integrator step is subdivided into ``refine``
        knots (from the solver's own dense output), so piecewise cubic
        Hermite interpolation of ``(t, y, dy)`` is accurate to about
        ``err_step / refine**4``.
        """
        t = self.t
        frac = np.arange(refine) / refine
        knots = np.append((t[:-1, None] + np.diff(t)[:, None] * frac).ravel(), t[-1])
        y = self(knots)
        dy = self.system.velocity(y)
        np.savez(path, t=knots, y=y, dy=dy, z0=self.z0)


def load_dense(path):
    """Load a dense-output file as a callable ``t -> states`` (cubic Hermite)."""
    from scipy.interpolate import CubicHermiteSpline

    data = np.load(path)
    return CubicHermiteSpline(data["t"], data["y"], data["dy"], axis=0)


def integrate_orbit(system, z0, t_span, tol=DEFAULT_TOL, t_eval=None):
    """Integrate ``X_lambda`` from ``z0`` over ``t_span``.

    Explicit adaptive Runge--Kutta of order 8 (DOP853) with dense output;
    ``tol`` is used for both relative and absolute local error control.
    Negative spans integrate backwards in time.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    y0 = _state(z0)
    system.surface.check_domain(y0[:2])
    guard = _chart_guard(system)

    def rhs(t, y):
        guard(y)
        return system.velocity(y)

    sol = _solve(rhs, tuple(t_span), y0, tol, t_eval=t_eval)
    stats = {"nfev": int(sol.nfev), "steps": int(len(sol.t) - 1), "tol": tol}
    if t_eval is None and len(sol.t) > 1:
        stats["max_step"] = float(np.max(np.abs(np.diff(sol.t))))
    return OrbitSolution(system, y0, sol.t, sol.y.T, sol.sol, stats)


def flow_map(system, z0, t, tol=DEFAULT_TOL):
    """``phi_t(z0)`` as a state array."""
    if t == 0:
        return _state(z0)
    return integrate_orbit(system, z0, (0.0, t), tol).states[-1]


def geodesic_curvature(system, orbit, t):
    """Signed geodesic curvature ``<D gamma'/dt, i gamma'>`` of the projected curve.

    For a conformal chart ``k_g = e^{-u} (k_0 - du(n))`` with ``k_0`` the
    Euclidean curvature and ``n`` the left chart normal. Per unit time this
    is ``phi' - e^{-u} (-u_1 sin phi + u_2 cos phi)`` where ``phi`` is the
    chart direction angle of the velocity (the state ``theta``); ``phi'``
    comes from a centered difference of the dense output.
    """
    t = np.asarray(t, dtype=float)
    h = 1e-4
    th = lambda s: orbit(s)[..., 2]  # noqa: E731
    dphi = (-th(t + 2 * h) + 8 * th(t + h) - 8 * th(t - h) + th(t - 2 * h)) / (12 * h)
    st = orbit(t)
    jet = system.surface.conformal(st[..., :2])
    e = np.exp(-jet.u)
    c, s = np.cos(st[..., 2]), np.sin(st[..., 2])
    return dphi - e * (-jet.du[..., 0] * s + jet.du[..., 1] * c)


# --------------------------------------------------------------------------
# Jacobi fields


@dataclass
class JacobiSolution:
    """Scalar Jacobi components ``x, y, y'`` along an orbit."""

    orbit: OrbitSolution
    ic: tuple
    t: np.ndarray
    values: np.ndarray  # (n, 3) columns x, y, ydot
    dense: object

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.dense(t).T if t.ndim else self.dense(t)

    def frame_components(self, t):
        """Coefficients ``(x, y, w)`` of the tangent vector in the frame ``(X, H, V)``."""
        v = self(t)
        lam = self.orbit.system.lam(self.orbit(t)[..., :2])
        return np.stack([v[..., 0], v[..., 1], v[..., 2] + lam * v[..., 0]], axis=-1)

    def chart_field(self, t):
        """Chart components of ``J = x gamma' + y i gamma'``."""
        v = self(t)
        st = self.orbit(t)
        e = np.exp(-self.orbit.system.surface.conformal(st[..., :2]).u)
        c, s = np.cos(st[..., 2]), np.sin(st[..., 2])
        return np.stack([e * (v[..., 0] * c - v[..., 1] * s),
                         e * (v[..., 0] * s + v[..., 1] * c)], axis=-1)

    def equation_residuals(self, window=0.05, nodes=10):
        """Sup-norm residuals of ``x' - lambda y`` and ``y'' + Keff y``.

        Each residual is averaged over consecutive windows of length
        ``window``: e.g. ``(x(b) - x(a) - int_a^b lambda y dt) / (b - a)``,
        with Gauss--Legendre quadrature on the dense output. This measures
        how well the stored solution satisfies the equations without
        differencing interpolants.
        """
        lo, hi = sorted((float(self.t[0]), float(self.t[-1])))
        n = max(1, int(np.ceil((hi - lo) / window)))
        edges = np.linspace(lo, hi, n + 1)
        gx, gw = np.polynomial.legendre.leggauss(nodes)
        a, b = edges[:-1, None], edges[1:, None]
        tt = 0.5 * (b - a) * gx + 0.5 * (a + b)
        ww = 0.5 * (b - a) * gw
        v = self(tt.ravel()).reshape(tt.shape + (3,))
        st = self.orbit(tt.ravel())
        lam = self.orbit.system.lam(st[..., :2]).reshape(tt.shape)
        keff = self.orbit.system.effective_curvature(st).reshape(tt.shape)
        va, vb = self(edges[:-1]), self(edges[1:])
        length = (b - a)[:, 0]
        r_x = (vb[:, 0] - va[:, 0] - np.sum(ww * lam * v[..., 1], axis=1)) / length
        r_y = (vb[:, 2] - va[:, 2] + np.sum(ww * keff * v[..., 1], axis=1)) / length
        return {"x_equation": float(np.max(np.abs(r_x))), "y_equation": float(np.max(np.abs(r_y)))}


def integrate_jacobi(system, orbit, ic, t_span=None, tol=DEFAULT_TOL):
    """Integrate ``x' = lambda y``, ``y'' = -Keff y`` along the dense orbit.

    ``ic = (x0, y0, ydot0)`` at the start of ``t_span`` (defaults to the
    orbit's span).
    """
    if t_span is None:
        t_span = (orbit.t[0], orbit.t[-1])

    def rhs(t, v):
        st = orbit(t)
        lam = system.lam(st[:2])
        keff = system.effective_curvature(st)
        return np.array([lam * v[1], v[2], -keff * v[1]])

    sol = _solve(rhs, tuple(t_span), np.asarray(ic, dtype=float), tol)
    return JacobiSolution(orbit, tuple(ic), sol.t, sol.y.T, sol.sol)


def frame_matrix(system, state):
    """3x3 matrix whose columns are the chart coefficients of X, H, V."""
    fr = frame_at(system, UnitTangent.from_state(state))
    return np.stack([fr.coeffs["X"], fr.coeffs["H"], fr.coeffs["V"]], axis=-1)


def chart_to_jacobi_ic(system, state, xi):
    """Jacobi data ``(x0, y0, ydot0)`` for a chart tangent vector ``xi`` at ``state``."""
    coeffs = np.linalg.solve(frame_matrix(system, state), np.asarray(xi, dtype=float))
    lam = system.lam(np.asarray(state)[:2])
    return coeffs[0], coeffs[1], coeffs[2] - lam * coeffs[0]


def variational_flow(system, z0, T, tol=DEFAULT_TOL):
    """``phi_T(z0)`` and the chart derivative ``D phi_T`` from Jacobi fields.

    The orbit and three scalar Jacobi solutions (one per frame direction)
    are integrated together; ``D phi_T = F(T) M(T) F(0)^{-1}`` with ``F``
    the frame matrix and ``M`` the Jacobi propagator in frame components.
    """
    y0 = _state(z0)
    guard = _chart_guard(system)

    def rhs(t, y):
        st = y[:3]
        guard(st)
        vel = system.velocity(st)
        lam = system.lam(st[:2])
        keff = system.effective_curvature(st)
        jac = y[3:].reshape(3, 3)  # rows x, y, ydot; columns = solutions
        djac = np.stack([lam * jac[1], jac[2], -keff * jac[1]])
        return np.concatenate([vel, djac.ravel()])

    lam0 = system.lam(y0[:2])
    # frame components (x, y, w) = identity -> (x, y, ydot) = (x, y, w - lam x)
    init = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-lam0, 0.0, 1.0]])
    sol = _solve(rhs, (0.0, T), np.concatenate([y0, init.ravel()]), tol, dense=False)
    yT = sol.y[:3, -1]
    jac = sol.y[3:, -1].reshape(3, 3)
    lamT = system.lam(yT[:2])
    m = np.stack([jac[0], jac[1], jac[2] + lamT * jac[0]])
    dphi = frame_matrix(system, yT) @ m @ np.linalg.inv(frame_matrix(system, y0))
    return yT, dphi


@dataclass
class DifferencingReport:
    t: float
    steps: np.ndarray
    errors: np.ndarray
    jacobi: np.ndarray
    observed_order: float
    floor: float

    def as_dict(self):
        return {"t": self.t, "steps": self.steps.tolist(), "errors": self.errors.tolist(),
                "jacobi": self.jacobi.tolist(), "observed_order": self.observed_order,
                "floor": self.floor}


def jacobi_vs_flow_differencing(system, z0, xi, t, steps=None, tol=1e-13):
    """Compare the Jacobi field with centered differences of nearby orbits.

    ``J(t) = d(pi o phi_t)(xi)``; the difference quotient
    ``(pi phi_t(z0 + h xi) - pi phi_t(z0 - h xi)) / 2h`` converges as
    ``O(h^2)`` until roundoff/tolerance dominates.
    """
    if steps is None:
        steps = np.logspace(-1, -5, 9)
    steps = np.asarray(steps, dtype=float)
    y0 = _state(z0)
    xi = np.asarray(xi, dtype=float)
    orbit = integrate_orbit(system, y0, (0.0, t), tol)
    jac = integrate_jacobi(system, orbit, chart_to_jacobi_ic(system, y0, xi), tol=tol)
    j_t = jac.chart_field(np.array([t]))[0]
    errors = []
    for h in steps:
        plus = flow_map(system, y0 + h * xi, t, tol)[:2]
        minus = flow_map(system, y0 - h * xi, t, tol)[:2]
        errors.append(np.linalg.norm((plus - minus) / (2 * h) - j_t))
    errors = np.array(errors)
    # fit the asymptotic range: small enough steps, above the floor, and
    # larger than the step where roundoff takes over
    h_floor = steps[np.argmin(errors)]
    mask = (steps <= 1e-2) & (steps > h_floor) & (errors > 10.0 * errors.min())
    if mask.sum() < 2:
        mask = np.zeros(len(steps), dtype=bool)
        mask[: max(2, min(4, len(steps)))] = True
    if len(steps) < 2 or np.ptp(np.log(steps[mask])) == 0.0:
        order = float("nan")
    else:
        order = float(np.polyfit(np.log(steps[mask]), np.log(errors[mask]), 1)[0])
    return DifferencingReport(float(t), steps, errors, j_t, order, float(errors.min()))


# --------------------------------------------------------------------------
# Riccati


@dataclass
class RiccatiState:
    """Solution of ``u' = -u^2 - Keff`` along an orbit."""

    orbit: OrbitSolution
    t: np.ndarray
    u: np.ndarray
    dense: object
    blew_up: bool
    t_blowup: float | None = None

    def __call__(self, t):
        return self.dense(np.asarray(t, dtype=float))[0]

    @property
    def value(self):
        return float(self.u[-1])

    def residual(self, n=400, h=1e-3):
        """Sup-norm of ``u' + u^2 + Keff`` on the finite part of the solution."""
        lo, hi = sorted((self.t[0], self.t[-1]))
        tt = np.linspace(lo + 2 * h, hi - 2 * h, n)
        du = (-self(tt + 2 * h) + 8 * self(tt + h) - 8 * self(tt - h) + self(tt - 2 * h)) / (12 * h)
        keff = self.orbit.system.effective_curvature(self.orbit(tt))
        return float(np.max(np.abs(du + self(tt) ** 2 + keff)))


def riccati_advance(system, orbit, u0, t_span=None, tol=DEFAULT_TOL, threshold=RICCATI_BLOWUP):
    """Integrate the Riccati equation; blow-up past ``threshold`` is flagged."""
    if not np.isfinite(u0):
        raise ValueError("u0 must be finite")
    if t_span is None:
        t_span = (orbit.t[0], orbit.t[-1])

    def rhs(t, u):
        return [-u[0] ** 2 - system.effective_curvature(orbit(t))]

    def blowup(t, u):
        return abs(u[0]) - threshold

    blowup.terminal = True
    sol = _solve(rhs, tuple(t_span), [float(u0)], tol, events=blowup)
    hit = len(sol.t_events[0]) > 0
    return RiccatiState(orbit, sol.t, sol.y[0], sol.sol, hit,
                        float(sol.t_events[0][0]) if hit else None)


# --------------------------------------------------------------------------
# Lyapunov exponent


@dataclass
class LyapunovEstimate:
    exponent: float
    tail_slope: float
    times: np.ndarray
    log_growth: np.ndarray

    def as_dict(self):
        return {"exponent": self.exponent, "tail_slope": self.tail_slope,
                "T": float(self.times[-1])}


def lyapunov_exponent(system, z0, T_total=1000.0, interval=1.0, tol=1e-10, y_init=None):
    """Top exponent ``(1/T) log |(y, y')(T)|`` with renormalization every ``interval``.

    After each interval the Jacobi data are renormalized and the base point
    is re-expressed in a well-conditioned chart position (torus: reduced
    mod 1; disk: moved to the origin by an isometry, which leaves the
    constant-curvature data unchanged). ``tail_slope`` is the least-squares
    slope of the accumulated log-growth over the second half of the run.
    """
    state = _state(z0)
    v = np.array([0.0, 1.0, 1.0]) / np.sqrt(2.0) if y_init is None else np.asarray(y_init, float)
    v = v / np.linalg.norm(v[1:])
    guard = _chart_guard(system)

    def rhs(t, y):
        guard(y[:3])
        lam = system.lam(y[:2])
        keff = system.effective_curvature(y[:3])
        return np.concatenate([system.velocity(y[:3]), [lam * y[4], y[5], -keff * y[4]]])

    n = int(round(T_total / interval))
    times = np.arange(1, n + 1) * interval
    logs = np.empty(n)
    acc = 0.0
    for k in range(n):
        sol = _solve(rhs, (0.0, interval), np.concatenate([state, v]), tol, dense=False)
        y = sol.y[:, -1]
        norm = np.linalg.norm(y[4:6])
        acc += np.log(norm)
        logs[k] = acc
        v = y[3:] / norm
        state = system.surface.recenter(y[:3])
    half = n // 2
    slope = float(np.polyfit(times[half:], logs[half:], 1)[0]) if n - half >= 2 else np.nan
    return LyapunovEstimate(float(acc / times[-1]), slope, times, logs)


# --------------------------------------------------------------------------
# hyperbolicity diagnostic


@dataclass
class HyperbolicityReport:
    status: str
    keff_min: float
    keff_max: float
    riccati_max_abs: float | None
    riccati_bounded: bool | None
    n_samples: int

    @property
    def certified(self):
        return self.status == "certified negative-K"

    def as_dict(self):
        return dict(self.__dict__)


def hyperbolicity_diagnostic(system, samples, T=20.0, n_orbits=4, tol=1e-9):
    """Sufficient-condition check for hyperbolicity.

    ``Keff < 0`` at every sample gives an invariant Riccati cone; the
    report says ``"certified negative-K"`` only in that case and
    ``"indeterminate"`` otherwise. Riccati solutions from ``u0 = 0`` are
    also followed along the first ``n_orbits`` samples to show boundedness.
    """
    states = samples.state if isinstance(samples, UnitTangent) else np.asarray(samples, float)
    states = states.reshape(-1, 3)
    keff = system.effective_curvature(states)
    kmin, kmax = float(keff.min()), float(keff.max())
    status = "certified negative-K" if kmax < 0 else "indeterminate"
    rmax, bounded = None, None
    if n_orbits and T > 0:
        rmax = 0.0
        bounded = True
        for st in states[:n_orbits]:
            orbit = integrate_orbit(system, st, (0.0, T), tol)
            ric = riccati_advance(system, orbit, 0.0, tol=tol)
            bounded &= not ric.blew_up
            rmax = max(rmax, float(np.max(np.abs(ric.u))))
    return HyperbolicityReport(status, kmin, kmax, rmax, bounded, len(states))
