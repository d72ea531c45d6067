"""Run configuration for the batch driver.

A run is described by one JSON file::

    {
      "seed": 1234,
      "output_dir": "results",
      "system": {"kind": "hyperbolic", "lambda": 0.5},
      "tolerances": {"closure": 1e-9},
      "orbits": {"words": ["a", "ab"]}
    }

``system`` is either a path to a saved system spec (see
:func:`magflow.surface.save_spec`) or an inline description; each
subcommand reads its own section (named like the subcommand, with ``_``
for ``-``) and falls back to :data:`DEFAULTS`. Unknown keys are errors, so
typos cannot silently select a default.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .fourier import torus_series
from .surface import ConformalTorus, MagneticSystem, load_spec
from . import systems

TOLERANCES = {
    "pointwise": 1e-9,     # pointwise identities and commutators (relative)
    "integrated": 1e-9,    # integrated identities (relative)
    "divergence": 1e-10,   # int A f dmu (absolute)
    "symmetry": 1e-10,     # measure symmetry (absolute)
    "closure": 1e-9,       # closed-orbit closure
    "variational": 1e-6,   # first variation, deformation identity
    "oracle": 1e-6,        # closed-form periods
    "invariance": 1e-8,    # action entries along exact deformations
    "jacobi": 1e-7,        # Jacobi equation residuals
    "floor": 1e-5,         # Jacobi-vs-flow differencing floor
    "lyapunov": 1e-3,
    "riccati": 1e-8,
    "index": 1e-9,         # lower bound -index for the index form
    "integrator": 1e-11,   # DOP853 rtol/atol for orbit integration
}

DEFAULTS = {
    "verify_identities": {
        "n_systems": 10, "n_functions": 5, "n_points": 10, "n_integrated": 1,
        "n_forms": 2, "phi_degree": [2, 2], "margin": 8, "corrupt_frame": None,
    },
    "commutators": {
        "n_systems": 4, "n_functions": 5, "n_points": 5, "corrupt_frame": None,
    },
    "jacobi_check": {
        "n_orbits": 3, "T": 10.0, "t_difference": 5.0, "reversal_T": 1.0,
        "integration_tol": 1e-13,
        "steps": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6],
    },
    "lyapunov": {
        "n_starts": 2, "T_total": 200.0, "interval": 1.0, "riccati_T": 30.0,
        "diagnostic_samples": 200,
    },
    "index_form": {
        "cases": None, "n_functions": 100, "degree": 6, "n": 512, "negative_control": True,
    },
    "orbits": {
        "classes": None, "words": None, "max_word_length": None, "database": None,
    },
    "spectrum": {
        "classes": None, "words": None, "max_word_length": None, "database": None, "n": 256,
    },
    "deform": {
        "classes": None, "families": None,
        "taus": {"start": -0.1, "stop": 0.1, "num": 9}, "n": 256,
    },
    "action_variation": {
        "cases": None, "n_variations": 20, "h": 1e-2, "k": 0.5, "control": True,
        "control_radius_factor": 1.3,
    },
}

# commands whose results depend on random draws (seed mandatory)
RANDOMIZED = {"verify_identities", "commutators", "jacobi_check", "lyapunov", "index_form",
              "action_variation"}

DEFAULT_SYSTEMS = {
    "verify_identities": {"kind": "random_torus"},
    "commutators": {"kind": "random_torus"},
    "jacobi_check": {"kind": "random_torus"},
    "lyapunov": {"kind": "hyperbolic", "lambda": 0.5},
    "orbits": {"kind": "hyperbolic", "lambda": 0.5},
    "spectrum": {"kind": "hyperbolic", "lambda": 0.5},
    "deform": {"kind": "banded_torus", "lambda": 0.2, "u_amp": 0.1},
}

SYSTEM_KEYS = {
    "random_torus": {"u_degree", "lambda_degree", "u_amplitude", "lambda_mean",
                     "lambda_amplitude"},
    "flat_torus": {"lambda"},
    "banded_torus": {"lambda", "u_amp", "lam_wave"},
    "hyperbolic": {"lambda"},
    "file": {"path"},
}


def section_name(command):
    return command.replace("-", "_")


@dataclass
class RunConfig:
    """Validated run configuration.

    Attributes
    ----------
    raw : dict
        The parsed file (kept for hashing and for the workers).
    base_dir : str
        Directory relative paths are resolved against.
    """

    raw: dict
    base_dir: str = "."

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(raw, os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_dict(cls, raw, base_dir="."):
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a JSON object")
        known = {"seed", "output_dir", "system", "tolerances"} | set(DEFAULTS)
        extra = set(raw) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        tol = raw.get("tolerances", {})
        if not isinstance(tol, dict) or set(tol) - set(TOLERANCES):
            raise ConfigurationError(f"unknown tolerance names: {sorted(set(tol) - set(TOLERANCES))}")
        for k, v in tol.items():
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigurationError(f"tolerance {k!r} must be a positive number")
        seed = raw.get("seed")
        if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
            raise ConfigurationError("seed must be a non-negative integer")
        for name in DEFAULTS:
            sec = raw.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigurationError(f"section {name!r} must be an object")
            bad = set(sec) - set(DEFAULTS[name]) - {"system"}
            if bad:
                raise ConfigurationError(f"unknown keys in {name!r}: {sorted(bad)}")
        return cls(copy.deepcopy(raw), base_dir)

    # accessors ----------------------------------------------------------

    @property
    def seed(self):
        return self.raw.get("seed")

    @property
    def tolerances(self):
        out = dict(TOLERANCES)
        out.update(self.raw.get("tolerances", {}))
        return out

    def output_dir(self, override=None):
        out = override or self.raw.get("output_dir", "results")
        return out if os.path.isabs(out) else os.path.join(self.base_dir, out)

    def params(self, command):
        name = section_name(command)
        out = copy.deepcopy(DEFAULTS[name])
        sec = dict(self.raw.get(name, {}))
        sec.pop("system", None)
        out.update(sec)
        return out

    def system_spec(self, command):
        """System description used by ``command`` (section override > global > default)."""
        name = section_name(command)
        spec = self.raw.get(name, {}).get("system", self.raw.get("system"))
        if spec is None:
            spec = DEFAULT_SYSTEMS.get(name)
        if spec is None:
            raise ConfigurationError(f"{command} needs a system")
        return normalize_system_spec(spec)

    def require_seed(self, command):
        if section_name(command) in RANDOMIZED and self.seed is None:
            raise ConfigurationError(f"{command} draws random samples: 'seed' is mandatory")

    def digest(self):
        text = json.dumps(self.raw, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def normalize_system_spec(spec):
    if isinstance(spec, str):
        spec = {"kind": "file", "path": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigurationError("system must be a path or an object with 'kind'")
    kind = spec["kind"]
    if kind not in SYSTEM_KEYS:
        raise ConfigurationError(f"unknown system kind {kind!r}; choose from {sorted(SYSTEM_KEYS)}")
    bad = set(spec) - SYSTEM_KEYS[kind] - {"kind", "c"}
    if bad:
        raise ConfigurationError(f"unknown keys for system {kind!r}: {sorted(bad)}")
    if kind == "file" and "path" not in spec:
        raise ConfigurationError("system file needs 'path'")
    return dict(spec)


def build_system(spec, rng=None, base_dir="."):
    """Construct a :class:`MagneticSystem` from a normalized description.

    ``random_torus`` needs ``rng``; everything else is deterministic.
    """
    spec = normalize_system_spec(spec)
    kind = spec["kind"]
    c = spec.get("c")
    if kind == "random_torus":
        if rng is None:
            raise ConfigurationError("random_torus needs a seed")
        kw = {k: spec[k] for k in SYSTEM_KEYS[kind] if k in spec}
        return systems.random_torus(rng, c=c, **kw)
    if kind == "flat_torus":
        return systems.flat_torus(float(spec.get("lambda", 0.0)), c=c)
    if kind == "banded_torus":
        sys_ = systems.banded_torus(float(spec.get("lambda", 0.2)), float(spec.get("u_amp", 0.1)),
                                    float(spec.get("lam_wave", 0.0)))
        return sys_ if c is None else MagneticSystem(sys_.surface, sys_.lam, c=c, label=sys_.label,
                                                     spec=sys_.spec)
    if kind == "hyperbolic":
        lam = float(spec.get("lambda", 0.5))
        if abs(lam) >= 1.0:
            raise ConfigurationError("hyperbolic systems need |lambda| < 1")
        return systems.hyperbolic(lam, c=c)
    path = spec["path"]
    path = path if os.path.isabs(path) else os.path.join(base_dir, path)
    try:
        return MagneticSystem.from_spec(load_spec(path), c=c, label=os.path.basename(path))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"system spec not found: {path}") from exc


def is_torus(system):
    return isinstance(system.surface, ConformalTorus)


def lambda_vanishes(system, n=16):
    """``lambda == 0`` on a sample grid (classical geodesic reduction)."""
    g = (np.arange(n) + 0.5) / n
    p = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    if not is_torus(system):
        p = 0.5 * (p - 0.5)
    return bool(np.max(np.abs(system.lam(p))) == 0.0)


def tau_grid(spec):
    """Uniform grid from ``{"start", "stop", "num"}`` or an explicit list."""
    if isinstance(spec, dict):
        try:
            grid = np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except KeyError as exc:
            raise ConfigurationError(f"tau grid needs start/stop/num: missing {exc}") from exc
    else:
        grid = np.asarray(spec, dtype=float)
    grid = np.round(grid, 12)
    if len(grid) < 5:
        raise ConfigurationError("the tau grid needs at least 5 points")
    if abs(grid).min() > 1e-12:
        raise ConfigurationError("the tau grid must contain 0")
    steps = np.diff(np.sort(grid))
    if np.ptp(steps) > 1e-9:
        raise ConfigurationError("the tau grid must be uniform")
    return [float(t) for t in np.sort(grid)]


def parse_family(doc, rng=None):
    """``BetaFamily`` (linear in tau) from a family description.

    ``{"kind": "exact", "F": [[k1, k2, a, b], ...]}`` gives ``beta = tau dF``
    with ``F = sum a cos(2 pi k.x) + b sin(2 pi k.x)``; ``"closed"`` adds the
    constant ``"a": [a1, a2]``; ``"fourier"`` draws a random non-closed form
    (``degree``, ``amplitude``) from ``rng``.
    """
    from .spectrum import BetaFamily, OneForm

    kind = doc.get("kind")
    terms = [((int(t[0]), int(t[1])), float(t[2]), float(t[3])) for t in doc.get("F", [])]
    F = torus_series(terms) if terms else None
    if kind == "exact":
        if F is None:
            raise ConfigurationError("exact family needs 'F'")
        form = OneForm.exact(F)
    elif kind == "closed":
        a = doc.get("a", [0.0, 0.0])
        form = OneForm.closed(float(a[0]), float(a[1]), F)
    elif kind == "fourier":
        if rng is None:
            raise ConfigurationError("random 'fourier' families need a seed")
        form = OneForm.random(rng, int(doc.get("degree", 2)), float(doc.get("amplitude", 0.05)))
    else:
        raise ConfigurationError(f"unknown family kind {kind!r}")
    return BetaFamily.linear(form)


DEFAULT_FAMILIES = [
    {"name": "exact", "kind": "exact", "F": [[1, 0, 0.05, 0.02], [1, 1, 0.0, 0.03]]},
    {"name": "closed", "kind": "closed", "a": [0.3, 0.1], "F": [[1, 0, 0.05, 0.02]]},
    {"name": "fourier", "kind": "fourier", "degree": 2, "amplitude": 0.05},
]


def family_seed_needed(families):
    return any(f.get("kind") == "fourier" for f in families)


__all__ = ["TOLERANCES", "DEFAULTS", "RunConfig", "build_system", "normalize_system_spec",
           "is_torus", "lambda_vanishes", "tau_grid", "parse_family", "DEFAULT_FAMILIES"]
