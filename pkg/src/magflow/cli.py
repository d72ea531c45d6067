"""Batch driver: every verification and computation as a subcommand.

Usage::

    magflow <command> CONFIG [--out DIR] [--jobs N] [--dry-run]

Each command expands the config into independent jobs (one per random
system, orbit class, deformation family, ...), runs them serially or in a
process pool, and reduces the results in job order, so the output does not
depend on ``--jobs``. Result files are written with sorted keys and
``repr`` floats; wall-clock data go to ``<command>.metadata.json`` only.

Exit codes: 0 pass, 1 fail (the failing check is named on stderr),
2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import (DEFAULT_FAMILIES, RunConfig, build_system, family_seed_needed, is_torus,
                     lambda_vanishes, normalize_system_spec, parse_family, tau_grid)
from .exceptions import (ConfigurationError, ContinuationError, ContractError, DomainError,
                         NoConvergenceError, RegimeError, StiffnessError)
from .fourier import TWO_PI, TrigPolynomial

# failures of a single job that are reported, not raised
SOLVER_ERRORS = (NoConvergenceError, ContinuationError, ContractError, DomainError, RegimeError,
                 StiffnessError)

COMMANDS = ("verify-identities", "commutators", "jacobi-check", "lyapunov", "index-form",
            "orbits", "spectrum", "deform", "action-variation")

__version__ = "0.1.0"


# --------------------------------------------------------------------------
# jobs


@dataclass
class Job:
    """One unit of work; ``params`` must be JSON-serializable."""

    id: str
    kind: str
    params: dict = field(default_factory=dict)

    def describe(self):
        shown = {k: v for k, v in self.params.items() if k not in ("system", "tol")}
        return f"[{self.id}] {self.kind} " + json.dumps(shown, sort_keys=True)


@dataclass
class Plan:
    command: str
    jobs: list
    reduce: str

    def render(self):
        lines = [f"{self.command}: {len(self.jobs)} job(s), then reduce",
                 "  stage 1 (independent, parallel with --jobs):"]
        lines += [f"    {j.describe()}" for j in self.jobs]
        lines.append(f"  stage 2 (serial, job order): {self.reduce}")
        return "\n".join(lines)


def _rng(seed, stream, index):
    return np.random.default_rng([int(seed), int(stream), int(index)])


def _clean(obj):
    """Plain JSON types (numpy scalars/arrays converted, non-finite -> None)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# orbit class descriptions


def _class_spec_key(spec):
    if "word" in spec:
        return f"word({spec['word']})"
    if "circle" in spec:
        return "circle"
    return f"torus({spec['shift'][0]},{spec['shift'][1]})"


def _validate_class_spec(spec):
    if not isinstance(spec, dict) or not ({"word", "shift", "circle"} & set(spec)):
        raise ConfigurationError(f"orbit class needs 'word', 'shift' or 'circle': {spec!r}")
    bad = set(spec) - {"word", "shift", "circle", "seed", "T"}
    if bad:
        raise ConfigurationError(f"unknown orbit class keys {sorted(bad)}")
    return dict(spec)


def enumerate_words(max_length, letters="abcd"):
    """Cyclically reduced words up to conjugacy (cyclic rotation), by length."""
    from .hyperbolic import reduce_word

    alphabet = letters + letters.upper()
    found = []
    seen = set()
    frontier = [""]
    for _ in range(max_length):
        frontier = [w + x for w in frontier for x in alphabet
                    if not w or w[-1] != x.swapcase()]
        for w in frontier:
            if reduce_word(w) != w:
                continue
            canon = min(w[i:] + w[:i] for i in range(len(w)))
            if canon not in seen:
                seen.add(canon)
                found.append(canon)
    return found


def _class_specs(params, system_spec):
    """Orbit classes for orbits/spectrum/deform from the command parameters."""
    specs = []
    if params.get("classes"):
        specs += [_validate_class_spec(c) for c in params["classes"]]
    if params.get("words"):
        specs += [{"word": str(w)} for w in params["words"]]
    if params.get("max_word_length"):
        specs += [{"word": w} for w in enumerate_words(int(params["max_word_length"]))]
    if not specs:
        if system_spec["kind"] == "hyperbolic":
            specs = [{"word": w} for w in ("a", "b", "ab", "aB")]
        elif system_spec["kind"] == "banded_torus":
            specs = [{"shift": [1, 0], "seed": [0.0, 0.5, 0.0], "T": 1.0}]
        else:
            specs = [{"shift": [1, 0]}]
    hyper = system_spec["kind"] == "hyperbolic"
    for s in specs:
        if ("word" in s) != hyper:
            raise ConfigurationError(f"class {s!r} does not fit a {system_spec['kind']} system")
    return specs


def find_orbit(system, spec, tol=1e-12):
    """Closed orbit described by a class spec (see the README for the format)."""
    from .orbits import (TopologicalClass, circle_seed, find_hyperbolic_orbit, shoot_and_refine)

    if "word" in spec:
        return find_hyperbolic_orbit(system, spec["word"], tol=tol)
    if "circle" in spec:
        seed, T = circle_seed(system, spec["circle"])
        return shoot_and_refine(system, TopologicalClass.torus(0, 0), seed, T, tol=tol)
    m, n = (int(v) for v in spec["shift"])
    cls = TopologicalClass.torus(m, n)
    if "seed" in spec:
        return shoot_and_refine(system, cls, spec["seed"], float(spec.get("T", math.hypot(m, n))),
                                tol=tol)
    angle = math.atan2(n, m)
    last = None
    for x2 in np.arange(8) / 8:
        try:
            return shoot_and_refine(system, cls, [0.0, x2, angle], math.hypot(m, n), tol=tol)
        except NoConvergenceError as exc:
            last = exc
    raise last


# --------------------------------------------------------------------------
# job implementations (top-level so they can be pickled)


def _job_identities(ctx, p):
    from .smbundle import (PolyTrigJet, TrigJet, UnitTangent, corrupted_frame, duality_residual,
                           frame_at, geodesic_commutators_check, magnetic_commutators_check)
    from .spectrum import OneForm
    from .systems import random_points
    from .variational import (cohomological_mechanism, default_quadrature, divergence_integrals,
                              integrated_identities, measure_symmetry, pestov_pointwise)

    rng = _rng(ctx.seed, p["stream"], p["index"])
    system = build_system(p["system"], rng, ctx.base_dir)
    torus = is_torus(system)
    deg = p.get("phi_degree", [2, 2])
    corrupt = p.get("corrupt_frame")
    out = {"index": p["index"], "system": system.digest(), "torus": torus,
           "classical": lambda_vanishes(system)}
    pest, comm, dual = [], {}, []
    phis = []
    for _ in range(p["n_functions"]):
        phi = (TrigJet.random(rng, deg[0], deg[1]) if torus
               else PolyTrigJet.random(rng, 3, deg[1]))
        phis.append(phi)
        z = random_points(rng, p["n_points"], system)
        frame = None
        if corrupt:
            frame = corrupted_frame(frame_at(system, UnitTangent.from_state(z)), **corrupt)
        if p.get("pestov", True):
            pest.append(float(pestov_pointwise(system, phi, z, frame).relative.max()))
        for group, check in (("magnetic", magnetic_commutators_check),
                             ("geodesic", geodesic_commutators_check)):
            r = check(system, phi, z, frame)
            for name, v in r.items():
                if name != "scale":
                    key = f"{group} {name}"
                    comm[key] = max(comm.get(key, 0.0), float(np.max(v / r["scale"])))
        dual.append(float(duality_residual(system, z, frame)))
    out["n_samples"] = p["n_functions"] * p["n_points"]
    out["commutators"] = comm
    out["duality"] = max(dual)
    if p.get("pestov", True):
        out["pestov_pointwise"] = max(pest)
    if not torus or not p.get("integrated", True):
        return out
    margin = p.get("margin", 8)
    q = default_quadrature(system, phis[0], margin)
    integ, div = [], []
    for phi in phis[:p["n_integrated"]]:
        qq = default_quadrature(system, phi, margin)
        r = integrated_identities(system, phi, qq, p["tol"]["integrated"])
        integ.append({"pestov": r.integrated_pestov, "square_expansion": r.square_expansion,
                      "difference": r.difference_identity, "pointwise_at_nodes": r.pointwise_max})
        div.append({k: abs(v) for k, v in divergence_integrals(system, phi, qq).items()})
    out["integrated"] = integ
    out["divergence"] = div
    sym = []
    for _ in range(p["n_forms"]):
        om = OneForm.random(rng, 2, 0.5, const=tuple(rng.standard_normal(2)))
        s = measure_symmetry(system, om, q)
        sym.append({"mean": abs(s["mean"]), "square_difference": abs(s["square_difference"])})
    out["symmetry"] = sym
    h = TrigPolynomial.random(rng, 2, (TWO_PI, TWO_PI), include_constant=False)
    mech = cohomological_mechanism(system, 0.0, OneForm.exact(h), q, phi=TrigJet.basic(h),
                                   tolerance=p["tol"]["integrated"])
    mech_const = cohomological_mechanism(system, float(rng.normal()), OneForm(), q,
                                         tolerance=p["tol"]["integrated"])
    out["mechanism"] = {"exact_form": mech.as_dict(), "constant_G": mech_const.as_dict()}
    return out


def _job_jacobi(ctx, p):
    from .flow import integrate_jacobi, integrate_orbit, jacobi_vs_flow_differencing
    from .systems import random_points

    rng = _rng(ctx.seed, 3, p["index"])
    system = build_system(p["system"], rng, ctx.base_dir)
    tol = p["tol"]["integrator"]
    z = random_points(rng, 1, system)[0]
    orbit = integrate_orbit(system, z, (0.0, p["T"]), p["integration_tol"])
    jac = integrate_jacobi(system, orbit, tuple(rng.standard_normal(3)), tol=p["integration_tol"])
    res = jac.equation_residuals()
    fwd = integrate_orbit(system, z, (0.0, p["reversal_T"]), tol)
    back = integrate_orbit(system, fwd.states[-1], (p["reversal_T"], 0.0), tol)
    rev = float(np.max(np.abs(back.states[-1] - z)))
    xi = rng.standard_normal(3)
    diff = jacobi_vs_flow_differencing(system, z, xi, p["t_difference"], p["steps"])
    return {"index": p["index"], "system": system.digest(), "z0": z, "T": p["T"],
            "residuals": res, "reversal_error": rev, "reversal_T": p["reversal_T"],
            "differencing": diff.as_dict(), "steps": orbit.stats.get("steps")
            if isinstance(orbit.stats, dict) else None}


def _constant_keff(system, rng):
    from .systems import random_points

    k = system.effective_curvature(random_points(rng, 64, system))
    return float(k[0]) if np.ptp(k) < 1e-12 else None


def _job_lyapunov(ctx, p):
    from .flow import hyperbolicity_diagnostic, integrate_orbit, lyapunov_exponent, riccati_advance
    from .systems import random_points

    rng = _rng(ctx.seed, 4, p["index"])
    system = build_system(p["system"], rng, ctx.base_dir)
    z = random_points(rng, 1, system)[0]
    est = lyapunov_exponent(system, z, p["T_total"], p["interval"])
    keff = _constant_keff(system, rng)
    oracle = math.sqrt(-keff) if keff is not None and keff < 0 else None
    orbit = integrate_orbit(system, z, (0.0, p["riccati_T"]), p["tol"]["integrator"])
    ric = riccati_advance(system, orbit, 0.0)
    diag = hyperbolicity_diagnostic(system, random_points(rng, p["diagnostic_samples"], system),
                                    T=10.0, n_orbits=2)
    return {"index": p["index"], "z0": z, "exponent": est.exponent, "tail_slope": est.tail_slope,
            "oracle": oracle, "riccati_end": float(ric.u[-1]), "riccati_blew_up": ric.blew_up,
            "diagnostic": diag.as_dict(), "times": est.times, "log_growth": est.log_growth}


def _job_orbit(ctx, p):
    from .exceptions import RegimeError
    from .orbits import ClosedOrbit, OrbitDatabase, TopologicalClass, hyperbolic_orbit_oracle

    system = build_system(p["system"], None, ctx.base_dir)
    spec = p["class"]
    out = {"class_spec": spec, "label": _class_spec_key(spec)}
    orbit = None
    if p.get("database") and os.path.exists(p["database"]) and "circle" not in spec:
        db = OrbitDatabase(p["database"])
        cls = (TopologicalClass.hyperbolic(spec["word"]) if "word" in spec
               else TopologicalClass.torus(*spec["shift"]))
        orbit = db.find(system, cls)
    out["cached"] = orbit is not None
    try:
        if orbit is None:
            orbit = find_orbit(system, spec)
    except SOLVER_ERRORS as exc:
        out.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return out
    assert isinstance(orbit, ClosedOrbit)
    out.update(status="ok", record=orbit.to_record(), class_key=orbit.cls.key(),
               closure_error=orbit.closure_error(1e-12))
    if "word" in spec:
        try:
            orc = hyperbolic_orbit_oracle(system, spec["word"])
            out["oracle_T"] = orc.T
            out["oracle_action"] = orc.length * math.sqrt(1.0 - orc.lam ** 2)
        except RegimeError:
            pass
    if p.get("action"):
        from .spectrum import ConnectionData, action_entry

        entry = action_entry(ConnectionData(system), orbit, 0.0, p.get("n", 256))
        out["entry"] = entry.as_dict()
    return out


def _job_deform(ctx, p):
    from .orbits import OrbitBranch
    from .spectrum import ConnectionData, action_entry, isospectral_derivative_check
    from .curves import line_integral

    system = build_system(p["system"], None, ctx.base_dir)
    fam_doc = p["family"]
    rng = _rng(ctx.seed, 7, p["family_index"]) if ctx.seed is not None else None
    family = parse_family(fam_doc, rng)
    conn = ConnectionData(system, family)
    out = {"family": fam_doc.get("name", fam_doc["kind"]), "kind": fam_doc["kind"],
           "class": _class_spec_key(p["class"]), "exact": family.is_exact,
           "closed": family.is_closed, "beta": family.to_dict()}
    taus = p["taus"]
    try:
        orbit0 = find_orbit(conn.system_at(0.0), p["class"])
        branch = _continue(conn, orbit0, taus)
    except ContinuationError as exc:
        out.update(status="continuation-failed", error=str(exc))
        branch = exc.branch
        if branch is None or not branch.orbits:
            return out
    except SOLVER_ERRORS as exc:
        out.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return out
    else:
        out["status"] = "ok"
    assert isinstance(branch, OrbitBranch)
    rows = []
    n = p.get("n", 256)
    for tau, orb in zip(branch.taus, branch.orbits):
        e = action_entry(conn, orb, tau, n)
        curve = orb.lifted_curve(n)
        row = {"tau": tau, "T": orb.T, "action": e.action, "action_lift": e.action_lift,
               "holonomy_lift": e.holonomy_lift,
               "beta_dot_integral": line_integral(curve, family.derivative(tau)),
               "derivative": None, "predicted": None, "residual": None}
        i = branch.taus.index(tau)
        if 2 <= i <= len(branch.taus) - 3:
            try:
                rep = isospectral_derivative_check(conn, branch, tau, n,
                                                   threshold=p["tol"]["variational"])
                row.update(derivative=rep.derivative, predicted=rep.predicted,
                           residual=rep.residual)
            except SOLVER_ERRORS:
                pass
        rows.append(row)
    out["rows"] = rows
    lifts = [r["action_lift"] for r in rows]
    out["action_spread"] = float(np.ptp(lifts)) if lifts else None
    out["length_spread"] = float(np.ptp([r["T"] for r in rows])) if rows else None
    return out


def _continue(conn, orbit0, taus):
    from .orbits import continue_in_parameter

    return continue_in_parameter(conn.system_at, orbit0, taus)


def _default_cases(kind):
    hyper = {"kind": "hyperbolic", "lambda": 0.5}
    flat = {"kind": "flat_torus", "lambda": 0.5}
    if kind == "index_form":
        return [{"system": hyper, "orbit": {"word": "a"}},
                {"system": hyper, "orbit": {"word": "ab"}},
                {"system": hyper, "orbit": {"word": "aB"}}]
    return [{"system": flat, "orbit": {"circle": [0.5, 0.5]}},
            {"system": hyper, "orbit": {"word": "ab"}},
            {"system": {"kind": "banded_torus", "lambda": 0.2, "u_amp": 0.1},
             "orbit": {"shift": [1, 0], "seed": [0.0, 0.5, 0.0], "T": 1.0}}]


def _job_index_form(ctx, p):
    from .flow import hyperbolicity_diagnostic
    from .systems import random_points
    from .variational import IndexFormContext, PeriodicFunction

    rng = _rng(ctx.seed, 5, p["index"])
    system = build_system(p["case"]["system"], rng, ctx.base_dir)
    out = {"index": p["index"], "control": p.get("control", False),
           "orbit_spec": p["case"]["orbit"]}
    try:
        orbit = find_orbit(system, p["case"]["orbit"])
    except SOLVER_ERRORS as exc:
        out.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return out
    samples = np.concatenate([orbit.orbit()(np.linspace(0.0, orbit.T, 64)),
                              random_points(rng, 64, system)])
    diag = hyperbolicity_diagnostic(system, samples, n_orbits=0)
    ctx_ = IndexFormContext(orbit, p["n"])
    zs = [PeriodicFunction.constant(orbit.T)] + [
        PeriodicFunction.random(rng, orbit.T, p["degree"]) for _ in range(p["n_functions"])]
    vals = [ctx_.evaluate(z) for z in zs]
    zero = ctx_.evaluate(PeriodicFunction(orbit.T)).value
    out.update(status="ok", orbit=orbit.key(), class_key=orbit.cls.key(), T=orbit.T,
               certified=diag.certified, diagnostic=diag.as_dict(),
               n_functions=p["n_functions"], values=[v.value for v in vals], zero_value=zero,
               by_parts_gap=max(abs(v.value - v.value_by_parts) for v in vals),
               riccati_gap=(max(abs(v.value - v.value_riccati) for v in vals)
                            if vals[0].value_riccati is not None else None),
               quadrature_error=max(v.quadrature_error for v in vals),
               min_value=min(v.value for v in vals),
               min_ratio=min(v.ratio for v in vals))
    return out


def _job_action_variation(ctx, p):
    from .variational import Variation, circle_curve, first_variation_check

    rng = _rng(ctx.seed, 6, p["index"])
    case = p["case"]
    system = build_system(case["system"], rng, ctx.base_dir)
    out = {"index": p["index"], "control": p.get("control", False)}
    if p.get("control"):
        lam0 = float(system.lam(np.zeros(2)))
        curve = circle_curve(system, (0.5, 0.5), p["radius_factor"] / lam0)
        out["curve"] = f"circle radius {p['radius_factor']}/lambda"
        reports = [first_variation_check(curve, Variation(normal=(1.0, (), ())), p["k"], p["h"])]
    else:
        try:
            orbit = find_orbit(system, case["orbit"])
        except SOLVER_ERRORS as exc:
            out.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            return out
        curve = orbit.lifted_curve()
        out["curve"] = orbit.key()
        reports = [first_variation_check(curve, Variation.time_shift(), p["k"], p["h"])]
    reports += [first_variation_check(curve, Variation.random(rng, amplitude=0.1), p["k"], p["h"],
                                      p["tol"]["variational"])
                for _ in range(p["n_variations"])]
    out.update(status="ok", derivatives=[r.derivative for r in reports],
               derivatives_half_step=[r.derivative_half for r in reports],
               scale=reports[0].scale, converged=all(r.converged for r in reports),
               max_abs=max(abs(r.derivative) for r in reports))
    return out


JOB_KINDS = {
    "identities": _job_identities,
    "jacobi": _job_jacobi,
    "lyapunov": _job_lyapunov,
    "orbit": _job_orbit,
    "deform": _job_deform,
    "index-form": _job_index_form,
    "action-variation": _job_action_variation,
}


def _run_job(payload):
    raw, base_dir, job = payload
    ctx = RunConfig(raw, base_dir)
    return JOB_KINDS[job.kind](ctx, job.params)


def run_jobs(cfg, jobs, workers=1):
    """Results in job order, independent of ``workers``."""
    payloads = [(cfg.raw, cfg.base_dir, j) for j in jobs]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(pl) for pl in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, payloads))


# --------------------------------------------------------------------------
# planning


def _check_corruption(doc):
    if doc is None:
        return None
    if not isinstance(doc, dict) or set(doc) - {"field", "component", "relative"}:
        raise ConfigurationError("corrupt_frame takes field/component/relative")
    if doc.get("field", "H") not in ("X", "H", "V", "X_lambda"):
        raise ConfigurationError("corrupt_frame field must be one of X, H, V, X_lambda")
    return dict(doc)


def _positive_int(params, *names):
    for n in names:
        v = params[n]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigurationError(f"{n} must be a positive integer")


def plan(command, cfg):
    """Validate the config for ``command`` and expand it into jobs."""
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}")
    cfg.require_seed(command)
    p = cfg.params(command)
    tol = cfg.tolerances
    if command in ("verify-identities", "commutators"):
        _positive_int(p, "n_systems", "n_functions", "n_points")
        sys_spec = cfg.system_spec(command)
        if sys_spec["kind"] != "random_torus":
            p["n_systems"] = 1 if "n_systems" not in cfg.raw.get(command.replace("-", "_"), {}) \
                else p["n_systems"]
        full = command == "verify-identities"
        base = {"system": sys_spec, "n_functions": p["n_functions"], "n_points": p["n_points"],
                "corrupt_frame": _check_corruption(p["corrupt_frame"]), "tol": tol,
                "stream": 1 if full else 2, "pestov": full, "integrated": full}
        if full:
            base.update(n_integrated=p["n_integrated"], n_forms=p["n_forms"],
                        phi_degree=list(p["phi_degree"]), margin=p["margin"])
        else:
            base["phi_degree"] = [2, 2]
        jobs = [Job(f"{command}/{i}", "identities", dict(base, index=i))
                for i in range(p["n_systems"])]
        return Plan(command, jobs, "maximum residual per identity; compare with tolerances")
    if command == "jacobi-check":
        _positive_int(p, "n_orbits")
        base = {"system": cfg.system_spec(command), "T": float(p["T"]),
                "t_difference": float(p["t_difference"]), "reversal_T": float(p["reversal_T"]),
                "integration_tol": float(p["integration_tol"]), "steps": [float(s) for s in p["steps"]], "tol": tol}
        return Plan(command, [Job(f"jacobi/{i}", "jacobi", dict(base, index=i))
                              for i in range(p["n_orbits"])],
                    "max Jacobi residuals, differencing order and floor")
    if command == "lyapunov":
        _positive_int(p, "n_starts")
        base = {k: p[k] for k in ("T_total", "interval", "riccati_T", "diagnostic_samples")}
        base.update(system=cfg.system_spec(command), tol=tol)
        return Plan(command, [Job(f"lyapunov/{i}", "lyapunov", dict(base, index=i))
                              for i in range(p["n_starts"])],
                    "exponents and Riccati limits against sqrt(-K_eff) when K_eff is constant")
    if command in ("orbits", "spectrum"):
        sys_spec = cfg.system_spec(command)
        specs = _class_specs(p, sys_spec)
        db = p["database"] or os.path.join(cfg.output_dir(), "orbits.jsonl")
        jobs = [Job(f"orbit/{_class_spec_key(s)}", "orbit",
                    {"system": sys_spec, "class": s, "database": db,
                     "action": command == "spectrum", "n": p.get("n", 256)})
                for s in specs]
        what = "orbit table + database" if command == "orbits" else "sorted action spectrum"
        return Plan(command, jobs, what)
    if command == "deform":
        sys_spec = cfg.system_spec(command)
        if sys_spec["kind"] == "hyperbolic":
            raise ConfigurationError("deformations are supported on torus systems only")
        families = p["families"] or DEFAULT_FAMILIES
        for f in families:
            if not isinstance(f, dict) or "kind" not in f:
                raise ConfigurationError("each family needs a 'kind'")
            parse_family(f, np.random.default_rng(0))  # validates the description
        if family_seed_needed(families) and cfg.seed is None:
            raise ConfigurationError("random 'fourier' families need a seed")
        taus = tau_grid(p["taus"])
        specs = _class_specs(p, sys_spec)
        jobs = [Job(f"deform/{f.get('name', f['kind'])}/{_class_spec_key(s)}", "deform",
                    {"system": sys_spec, "family": f, "family_index": i, "class": s,
                     "taus": taus, "n": p["n"], "tol": tol})
                for i, f in enumerate(families) for s in specs]
        return Plan(command, jobs, "relation residual table; trivial-deformation summary")
    if command == "index-form":
        _positive_int(p, "n_functions", "degree", "n")
        cases = p["cases"] or _default_cases("index_form")
        cases = [_validate_case(c) for c in cases]
        jobs = [Job(f"index-form/{i}", "index-form",
                    {"case": c, "index": i, "n_functions": p["n_functions"],
                     "degree": p["degree"], "n": p["n"], "tol": tol})
                for i, c in enumerate(cases)]
        if p["negative_control"]:
            jobs.append(Job("index-form/control", "index-form",
                            {"case": {"system": {"kind": "flat_torus", "lambda": 0.5},
                                      "orbit": {"circle": [0.5, 0.5]}},
                             "index": len(cases), "control": True,
                             "n_functions": p["n_functions"], "degree": p["degree"],
                             "n": p["n"], "tol": tol}))
        return Plan(command, jobs, "minimum index form per orbit; negative control sign")
    # action-variation
    _positive_int(p, "n_variations")
    cases = p["cases"] or _default_cases("action_variation")
    cases = [_validate_case(c) for c in cases]
    base = {"n_variations": p["n_variations"], "h": float(p["h"]), "k": float(p["k"]), "tol": tol}
    jobs = [Job(f"action-variation/{i}", "action-variation", dict(base, case=c, index=i))
            for i, c in enumerate(cases)]
    if p["control"]:
        jobs.append(Job("action-variation/control", "action-variation",
                        dict(base, case={"system": {"kind": "flat_torus", "lambda": 0.5}},
                             index=len(cases), control=True,
                             radius_factor=float(p["control_radius_factor"]))))
    return Plan(command, jobs, "max |dA/dtau| per orbit; control must be nonzero")


def _validate_case(case):
    if not isinstance(case, dict) or "system" not in case or "orbit" not in case:
        raise ConfigurationError("each case needs 'system' and 'orbit'")
    return {"system": normalize_system_spec(case["system"]),
            "orbit": _validate_class_spec(case["orbit"])}


# --------------------------------------------------------------------------
# reductions


@dataclass
class Outcome:
    report: dict
    files: dict  # name -> text
    failures: list
    table: str = ""


def _max(values):
    values = [v for v in values if v is not None]
    return max(values) if values else None


def _reduce_identities(command, results, tol):
    fails = []
    comm = {}
    for r in results:
        for k, v in r["commutators"].items():
            comm[k] = max(comm.get(k, 0.0), v)
    for k, v in sorted(comm.items()):
        if v >= tol["pointwise"]:
            fails.append(f"commutator {k}: relative residual {v:.3e} >= {tol['pointwise']:.0e}")
    dual = _max(r["duality"] for r in results)
    if dual >= tol["pointwise"]:
        fails.append(f"frame/coframe duality residual {dual:.3e}")
    summary = {"commutators": comm, "duality": dual,
               "n_samples": sum(r["n_samples"] for r in results),
               "classical_reduction": all(r["classical"] for r in results)}
    if command == "verify-identities":
        pest = _max(r.get("pestov_pointwise") for r in results)
        summary["pestov_pointwise"] = pest
        if pest >= tol["pointwise"]:
            fails.append(f"pointwise Pestov identity: relative residual {pest:.3e}")
        integ = [x for r in results for x in r.get("integrated", [])]
        if integ:
            for name in ("pestov", "square_expansion", "difference"):
                v = max(x[name] for x in integ)
                summary[f"integrated_{name}"] = v
                if v >= tol["integrated"]:
                    fails.append(f"integrated identity '{name}': relative residual {v:.3e}")
            div = {}
            for r in results:
                for d in r.get("divergence", []):
                    for k, v in d.items():
                        div[k] = max(div.get(k, 0.0), v)
            summary["divergence"] = div
            for k, v in sorted(div.items()):
                if v >= tol["divergence"]:
                    fails.append(f"divergence integral of {k} f: {v:.3e}")
            sym = [s for r in results for s in r.get("symmetry", [])]
            summary["symmetry_forms"] = len(sym)
            for name in ("mean", "square_difference"):
                v = max(s[name] for s in sym)
                summary[f"symmetry_{name}"] = v
                if v >= tol["symmetry"]:
                    fails.append(f"measure symmetry '{name}': {v:.3e}")
            mech = [m for r in results for m in r.get("mechanism", {}).values()]
            summary["mechanism_max_residual"] = max(m["residual"] for m in mech)
            if not all(m["passed"] for m in mech):
                fails.append("cohomological mechanism check failed")
    return Outcome({"summary": summary, "systems": results}, {}, fails)


def _reduce_jacobi(results, tol):
    fails = []
    res = _max(max(r["residuals"].values()) for r in results)
    orders = [r["differencing"]["observed_order"] for r in results]
    floors = [r["differencing"]["floor"] for r in results]
    rev = _max(r["reversal_error"] for r in results)
    if res >= tol["jacobi"]:
        fails.append(f"Jacobi equation residual {res:.3e} >= {tol['jacobi']:.0e}")
    for o, f in zip(orders, floors):
        if abs(o - 2.0) > 0.3:
            fails.append(f"differencing order {o:.2f} is not 2")
        if f >= tol["floor"]:
            fails.append(f"differencing floor {f:.3e} >= {tol['floor']:.0e}")
    if rev >= 10 * tol["integrator"]:
        fails.append(f"time reversal error {rev:.3e} >= 10 x integrator tolerance")
    rows = [(r["index"], h, e) for r in results
            for h, e in zip(r["differencing"]["steps"], r["differencing"]["errors"])]
    files = {"jacobi-check.csv": _csv(["orbit", "h", "error"], rows)}
    summary = {"max_residual": res, "orders": orders, "floors": floors, "reversal": rev}
    return Outcome({"summary": summary, "orbits": results}, files, fails)


def _reduce_lyapunov(results, tol):
    fails = []
    for r in results:
        if r["oracle"] is None:
            continue
        for key in ("exponent", "tail_slope"):
            err = abs(r[key] - r["oracle"])
            if err >= tol["lyapunov"]:
                fails.append(f"Lyapunov {key} off by {err:.3e} (start {r['index']})")
        err = abs(r["riccati_end"] - r["oracle"])
        if err >= tol["riccati"]:
            fails.append(f"Riccati fixed point off by {err:.3e} (start {r['index']})")
    rows = [(r["index"], t, g) for r in results for t, g in zip(r["times"], r["log_growth"])]
    files = {"lyapunov.csv": _csv(["start", "t", "log_growth"], rows)}
    slim = [{k: v for k, v in r.items() if k not in ("times", "log_growth")} for r in results]
    return Outcome({"starts": slim}, files, fails)


ORBIT_COLUMNS = ["class", "status", "T", "oracle_T", "period_error", "newton_residual",
                 "closure_error", "monodromy_trace", "degenerate", "z0_1", "z0_2", "z0_3"]


def _reduce_orbits(command, results, tol, db_path):
    from .orbits import OrbitDatabase

    fails, rows, notes = [], [], []
    db = OrbitDatabase(db_path)
    for r in results:
        if r["status"] != "ok":
            notes.append(f"{r['label']}: {r['error']}")
            rows.append([r["label"], r["status"]] + [""] * (len(ORBIT_COLUMNS) - 2))
            continue
        rec = r["record"]
        if not r["cached"] and db._records.get(db._key(rec)) != rec:
            db.put_record(rec)
        perr = abs(rec["T"] - r["oracle_T"]) if "oracle_T" in r else None
        r["period_error"] = perr
        if r["closure_error"] >= tol["closure"]:
            fails.append(f"{r['class_key']}: closure error {r['closure_error']:.3e}")
        if perr is not None and perr >= tol["oracle"]:
            fails.append(f"{r['class_key']}: period differs from the oracle by {perr:.3e}")
        rows.append([r["class_key"], "ok", rec["T"], r.get("oracle_T", ""),
                     "" if perr is None else perr, rec["newton_residual"], r["closure_error"],
                     rec["monodromy_trace"], rec["degenerate"], *rec["z0"]])
    files = {}
    report = {"orbits": [{k: v for k, v in r.items() if k != "cached"} for r in results],
              "failures_to_converge": notes, "database": os.path.basename(db_path)}
    if command == "orbits":
        files["orbits.csv"] = _csv(ORBIT_COLUMNS, rows)
        return Outcome(report, files, fails)
    entries = [dict(r["entry"], oracle_action=r.get("oracle_action")) for r in results
               if r["status"] == "ok"]
    entries.sort(key=lambda e: (round(e["action"], 12), e["class_key"], e["key"]))
    for e in entries:
        if e["oracle_action"] is not None:
            err = abs(e["action_lift"] - e["oracle_action"])
            if err >= tol["oracle"]:
                fails.append(f"{e['class_key']}: action differs from the oracle by {err:.3e}")
    cols = ["class_key", "tau", "length", "holonomy", "holonomy_lift", "action", "action_lift",
            "oracle_action"]
    files["spectrum.csv"] = _csv(cols, [[("" if e.get(c) is None else e.get(c)) for c in cols]
                                        for e in entries])
    files["spectrum.json"] = _dumps(entries)
    report["spectrum"] = entries
    return Outcome(report, files, fails)


DEFORM_COLUMNS = ["family", "class", "tau", "T", "action", "action_lift", "beta_dot_integral",
                  "derivative", "predicted", "residual"]


def _reduce_deform(results, tol):
    fails, rows, lines = [], [], []
    for r in results:
        head = f"{r['family']} ({r['kind']}) {r['class']}: "
        if r["status"] != "ok":
            lines.append(head + f"{r['status']}: {r.get('error', '')}")
        for row in r.get("rows", []):
            rows.append([r["family"], r["class"]] + [("" if row[c] is None else row[c])
                                                     for c in DEFORM_COLUMNS[2:]])
            if row["residual"] is not None and row["residual"] >= tol["variational"]:
                fails.append(f"{head}deformation identity residual {row['residual']:.3e} "
                             f"at tau={row['tau']}")
        checked = [row for row in r.get("rows", []) if row["residual"] is not None]
        if r.get("rows") and not checked:
            lines.append(head + "too few branch points for the derivative check")
        if not r.get("rows"):
            continue
        li = max(abs(row["beta_dot_integral"]) for row in r["rows"])
        if r["exact"]:
            ok = r["action_spread"] < tol["invariance"]
            if ok:
                lines.append(head + f"trivial deformation detected (action entries constant "
                                    f"to {r['action_spread']:.1e}, int beta' = {li:.1e})")
            else:
                fails.append(head + f"exact family changed the action by {r['action_spread']:.3e}")
        else:
            lines.append(head + f"non-exact deformation: max |int beta'| = {li:.3e}, "
                                f"action spread {r['action_spread']:.3e}")
    table = _format_table(rows)
    files = {"deform.csv": _csv(DEFORM_COLUMNS, rows)}
    return Outcome({"families": results, "summary": lines}, files, fails,
                   table + "\n" + "\n".join(lines))


def _format_table(rows):
    head = f"{'family':<10} {'class':<12} {'tau':>8} {'da/dtau':>14} {'predicted':>14} {'residual':>10}"
    out = [head, "-" * len(head)]
    for r in rows:
        fam, cls, tau, _, _, _, _, der, pred, res = r
        if der == "":
            continue
        out.append(f"{fam:<10} {cls:<12} {tau:>8.4f} {der:>14.6e} {pred:>14.6e} {res:>10.2e}")
    return "\n".join(out)


def _reduce_index_form(results, tol):
    fails, rows = [], []
    for r in results:
        name = f"case {r['index']}" + (" (control)" if r["control"] else "")
        if r["status"] != "ok":
            fails.append(f"{name}: orbit not found ({r['error']})")
            continue
        rows += [(r["index"], r["class_key"], j, v) for j, v in enumerate(r["values"])]
        if abs(r["zero_value"]) != 0.0:
            fails.append(f"{name}: I(0) = {r['zero_value']}")
        if r["control"]:
            if r["min_value"] >= 0:
                fails.append(f"{name}: negative control produced no negative index form")
        elif r["certified"]:
            if r["min_value"] < -tol["index"]:
                fails.append(f"{name}: index form {r['min_value']:.3e} < 0 on a certified system")
        else:
            r["note"] = "system not certified; values reported only"
    files = {"index-form.csv": _csv(["case", "class", "j", "value"], rows)}
    slim = [{k: v for k, v in r.items() if k != "values"} for r in results]
    return Outcome({"cases": slim}, files, fails)


def _reduce_action_variation(results, tol):
    fails, rows = [], []
    for r in results:
        name = f"case {r['index']}" + (" (control)" if r["control"] else "")
        if r["status"] != "ok":
            fails.append(f"{name}: orbit not found ({r['error']})")
            continue
        rows += [(r["index"], j, d, dh) for j, (d, dh) in
                 enumerate(zip(r["derivatives"], r["derivatives_half_step"]))]
        if r["control"]:
            if r["max_abs"] < 1e-3:
                fails.append(f"{name}: non-orbit control has vanishing first variation")
        else:
            if r["max_abs"] >= tol["variational"] * r["scale"]:
                fails.append(f"{name}: |dA/dtau| = {r['max_abs']:.3e}")
            if not r["converged"]:
                fails.append(f"{name}: difference quotients did not converge")
    files = {"action-variation.csv": _csv(["case", "variation", "derivative", "derivative_h"],
                                          rows)}
    return Outcome({"cases": results}, files, fails)


# --------------------------------------------------------------------------
# driver


def execute(command, cfg, out_dir=None, workers=1, stream=None):
    """Run ``command`` and write its artifacts; returns ``(exit_code, report)``."""
    stream = stream or sys.stdout
    started = time.time()
    pl = plan(command, cfg)
    out = cfg.output_dir(out_dir)
    os.makedirs(out, exist_ok=True)
    tol = cfg.tolerances
    if command in ("orbits", "spectrum"):
        # the database path must follow --out
        default_db = os.path.join(cfg.output_dir(), "orbits.jsonl")
        db_path = os.path.join(out, "orbits.jsonl")
        for j in pl.jobs:
            if j.params["database"] == default_db:
                j.params["database"] = db_path
        db_path = pl.jobs[0].params["database"] if pl.jobs else db_path
    results = run_jobs(cfg, pl.jobs, workers)
    if command in ("verify-identities", "commutators"):
        oc = _reduce_identities(command, results, tol)
    elif command == "jacobi-check":
        oc = _reduce_jacobi(results, tol)
    elif command == "lyapunov":
        oc = _reduce_lyapunov(results, tol)
    elif command in ("orbits", "spectrum"):
        oc = _reduce_orbits(command, results, tol, db_path)
    elif command == "deform":
        oc = _reduce_deform(results, tol)
    elif command == "index-form":
        oc = _reduce_index_form(results, tol)
    else:
        oc = _reduce_action_variation(results, tol)
    report = {"command": command, "passed": not oc.failures, "failures": oc.failures,
              "tolerances": tol, "seed": cfg.seed, "config_sha256": cfg.digest(),
              "jobs": [j.id for j in pl.jobs]}
    report.update(oc.report)
    files = dict(oc.files)
    files[f"{command}.json"] = _dumps(report)
    for name, text in files.items():
        with open(os.path.join(out, name), "w") as fh:
            fh.write(text)
    meta = {"command": command, "started": time.strftime("%Y-%m-%dT%H:%M:%S%z",
                                                         time.localtime(started)),
            "elapsed_s": round(time.time() - started, 3), "workers": workers,
            "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "files": sorted(files)}
    with open(os.path.join(out, f"{command}.metadata.json"), "w") as fh:
        fh.write(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if oc.table:
        print(oc.table, file=stream)
    status = "PASS" if not oc.failures else "FAIL"
    print(f"{command}: {status} ({len(pl.jobs)} jobs) -> {out}", file=stream)
    for f in oc.failures:
        print(f"  failed: {f}", file=sys.stderr)
    return (0 if not oc.failures else 1), report


def build_parser():
    parser = argparse.ArgumentParser(prog="magflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        sp.add_argument("--dry-run", action="store_true",
                        help="validate the config and print the job graph")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be >= 1")
        cfg = RunConfig.load(args.config)
        if args.dry_run:
            print(plan(args.command, cfg).render())
            return 0
        code, _ = execute(args.command, cfg, args.out, args.jobs)
        return code
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
