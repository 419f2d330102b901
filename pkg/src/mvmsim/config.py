"""Scenario configuration: JSON schema, named libraries, object building.

A scenario is one JSON document holding everything a run needs —
dimension, seminorm weights, semigroup spectrum, coefficients, noise,
grid, Picard controls, and the ensemble (paths, seed).  Every referenced
name resolves in the small libraries below; the builders attach exact
envelope functions and their closed-form integrals, so contraction
constants for library coefficients carry no quadrature error.
"""

import copy
import json

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import spde
from .noise import LevyMeasure, LevyTriplet, MvmSpec
from .semigroup import DiagonalSemigroup
from .space import SeminormFamily, polynomial_weights


class ConfigError(ValueError):
    """Invalid scenario document; carries a JSON pointer when available."""

    def __init__(self, message, pointer=""):
        self.pointer = pointer or "/"
        super().__init__("%s (at %s)" % (message, self.pointer))


_NONNEG = {"type": "number", "minimum": 0}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}

SCENARIO_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "version": {"type": "string"},
        "name": {"type": "string"},
        "dimension": {"type": "integer", "minimum": 1},
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rule": {"enum": ["polynomial"]}},
        },
        "spectrum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["linear", "values"]},
                "offset": {"type": "number"},
                "slope": {"type": "number"},
                "values": _VECTOR,
                "shift": _NONNEG,
            },
            "required": ["kind"],
        },
        "coefficients": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "B": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["zero", "constant", "linear"]},
                        "values": _VECTOR,
                        "kappa": {"oneOf": [{"type": "number"}, _VECTOR]},
                    },
                    "required": ["kind"],
                },
                "F": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["zero", "identity", "constant",
                                           "diagonal-state"]},
                        "sigma": {"type": "number"},
                        "matrix": {"type": "array", "items": _VECTOR},
                    },
                    "required": ["kind"],
                },
                "a": _NONNEG,
                "b": _NONNEG,
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "Q": {
                    "oneOf": [
                        {"enum": ["identity", "zero"]},
                        {"type": "object",
                         "additionalProperties": False,
                         "properties": {"diagonal": _VECTOR},
                         "required": ["diagonal"]},
                        {"type": "array", "items": _VECTOR},
                    ],
                },
                "q_scale": _NONNEG,
                "levy": {
                    "oneOf": [
                        {"type": "null"},
                        {"type": "object",
                         "additionalProperties": False,
                         "properties": {
                             "atoms": {"type": "array", "items": _VECTOR,
                                        "minItems": 1},
                             "rates": {"type": "array", "items": _POS,
                                        "minItems": 1},
                         },
                         "required": ["atoms", "rates"]},
                        {"type": "object",
                         "additionalProperties": False,
                         "properties": {
                             "kind": {"const": "radial-gaussian"},
                             "direction": {"type": "integer", "minimum": 0},
                             "intensity": _POS,
                             "scale": _POS,
                             "n_atoms": {"type": "integer", "minimum": 2},
                         },
                         "required": ["kind"]},
                    ],
                },
                "drift": _VECTOR,
                "ball_levels": {"type": "integer", "minimum": 1},
                "ball_radius": _POS,
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"T": _POS, "steps": {"type": "integer", "minimum": 1}},
        },
        "picard": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": _POS,
                "max_iter": {"type": "integer", "minimum": 1},
                "upsilon": {"oneOf": [{"const": "auto"}, _NONNEG]},
                "norm_level": {"type": "integer", "minimum": 0},
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zero", "constant", "gaussian"]},
                "values": _VECTOR,
                "scale": _NONNEG,
            },
            "required": ["kind"],
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "paths": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}

DEFAULT_CONFIG = {
    "version": "1",
    "name": "default",
    "dimension": 8,
    "weights": {"rule": "polynomial"},
    "spectrum": {"kind": "linear", "offset": 1.0, "slope": 1.0, "shift": 0.0},
    "coefficients": {"B": {"kind": "zero"}, "F": {"kind": "identity",
                                                  "sigma": 1.0}},
    "noise": {"Q": "identity", "q_scale": 1.0, "levy": None,
              "ball_levels": 3, "ball_radius": 1.0},
    "grid": {"T": 1.0, "steps": 256},
    "picard": {"tol": 1e-10, "max_iter": 12, "upsilon": "auto",
               "norm_level": 1},
    "initial": {"kind": "zero"},
    "ensemble": {"paths": 1000, "seed": 7},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) \
                and val.get("kind", out[key].get("kind")) == out[key].get("kind"):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate_config(cfg):
    """Defaults merged in, schema-checked; ConfigError carries the pointer."""
    if not isinstance(cfg, dict):
        raise ConfigError("scenario document must be a JSON object")
    merged = _merge(DEFAULT_CONFIG, cfg)
    if jsonschema is None:  # pragma: no cover
        raise ConfigError("jsonschema is required to validate scenarios")
    try:
        jsonschema.validate(merged, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as err:
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ConfigError(err.message, pointer) from err
    return merged


def _build_spectrum(cfg, d):
    sc = cfg["spectrum"]
    if sc["kind"] == "linear":
        lam = sc.get("offset", 1.0) + sc.get("slope", 1.0) * np.arange(d)
    else:
        lam = np.asarray(sc["values"], dtype=float)
        if lam.shape != (d,):
            raise ConfigError("need %d spectrum values, got %d" % (d, lam.size),
                              "/spectrum/values")
    if np.any(lam < 0):
        raise ConfigError("spectrum must be nonnegative", "/spectrum")
    return DiagonalSemigroup(lam, shift=sc.get("shift", 0.0))


def _build_Q(cfg, d):
    noise = cfg["noise"]
    q = noise.get("Q", "identity")
    scale = float(noise.get("q_scale", 1.0))
    if q == "identity":
        return scale * np.eye(d)
    if q == "zero":
        return np.zeros((d, d))
    if isinstance(q, dict):
        diag = np.asarray(q["diagonal"], dtype=float)
        if diag.shape != (d,):
            raise ConfigError("need %d diagonal entries" % d, "/noise/Q/diagonal")
        return scale * np.diag(diag)
    m = np.asarray(q, dtype=float)
    if m.shape != (d, d):
        raise ConfigError("covariance must be %dx%d" % (d, d), "/noise/Q")
    return scale * m


def _build_levy(cfg, d):
    levy = cfg["noise"].get("levy")
    if levy is None:
        return None
    if levy.get("kind") == "radial-gaussian":
        direction = np.zeros(d)
        direction[int(levy.get("direction", 0))] = 1.0
        return LevyMeasure.from_radial_gaussian(
            direction, intensity=levy.get("intensity", 1.0),
            scale=levy.get("scale", 1.0), n_atoms=levy.get("n_atoms", 8))
    atoms = np.asarray(levy["atoms"], dtype=float)
    rates = np.asarray(levy["rates"], dtype=float)
    if atoms.ndim != 2 or atoms.shape[1] != d:
        raise ConfigError("atoms must be vectors of length %d" % d,
                          "/noise/levy/atoms")
    if rates.shape != (atoms.shape[0],):
        raise ConfigError("one rate per atom", "/noise/levy/rates")
    return LevyMeasure(atoms, rates)


def _const_envelope(value):
    value = float(value)
    return (lambda psi, r: value), (lambda T: value ** 2 * T)


def build_coefficients(cfg, spec, family, norm_level):
    """Library coefficients with exact envelopes certified on the scaled
    basis of the chosen norm level (reductions to closed forms where the
    envelope is constant in time)."""
    cc = cfg["coefficients"]
    basis = spde.scaled_basis(family, norm_level)
    d = spec.dimension

    bk = cc["B"]
    if bk["kind"] == "zero":
        B = lambda r, g: np.zeros(np.shape(g))
        a, a_int = _const_envelope(0.0)
    elif bk["kind"] == "constant":
        v = np.asarray(bk["values"], dtype=float)
        if v.shape != (d,):
            raise ConfigError("drift vector must have length %d" % d,
                              "/coefficients/B/values")
        B = lambda r, g: np.broadcast_to(v, np.shape(g)).copy()
        a = lambda psi, r: abs(float(v @ psi))
        amax = max(abs(float(v @ psi)) for psi in basis)
        a_int = lambda T: amax ** 2 * T
    else:
        kap = bk.get("kappa", 1.0)
        kap = np.full(d, float(kap)) if np.isscalar(kap) else np.asarray(
            kap, dtype=float)
        if kap.shape != (d,):
            raise ConfigError("kappa must be scalar or length %d" % d,
                              "/coefficients/B/kappa")
        B = lambda r, g: kap * g
        a, a_int = _const_envelope(np.abs(kap).max())
    if cc.get("a") is not None:
        a, a_int = _const_envelope(cc["a"])

    fk = cc["F"]
    if fk["kind"] == "zero":
        F = lambda r, u, g: np.zeros((d, d))
        F_apply = lambda r, u, g, v: np.zeros(np.shape(g))
        b, b_int = _const_envelope(0.0)
    elif fk["kind"] == "identity":
        sig = float(fk.get("sigma", 1.0))
        F = lambda r, u, g: sig * np.eye(d)
        F_apply = lambda r, u, g, v: sig * np.broadcast_to(
            np.asarray(v, dtype=float), np.shape(g)).copy()
        b = lambda psi, r: abs(sig) * np.sqrt(spec.mu_quadratic(psi))
        bmax = max(abs(sig) ** 2 * spec.mu_quadratic(psi) for psi in basis)
        b_int = lambda T: bmax * T
    elif fk["kind"] == "constant":
        m = np.asarray(fk["matrix"], dtype=float)
        if m.shape != (d, d):
            raise ConfigError("matrix must be %dx%d" % (d, d),
                              "/coefficients/F/matrix")
        F = lambda r, u, g: m
        F_apply = lambda r, u, g, v: np.broadcast_to(
            np.asarray(v, dtype=float) @ m.T, np.shape(g)).copy()
        b = lambda psi, r: np.sqrt(spec.mu_quadratic(m.T @ psi))
        bmax = max(spec.mu_quadratic(m.T @ psi) for psi in basis)
        b_int = lambda T: bmax * T
    else:  # diagonal-state: F(r, u, g) = sigma diag(g)
        sig = float(fk.get("sigma", 1.0))
        F = lambda r, u, g: sig * np.diag(np.asarray(g, dtype=float))
        F_apply = lambda r, u, g, v: sig * np.asarray(g, dtype=float) * v
        diag_mu = np.diag(spec.Q).copy()
        if spec.n_atoms:
            diag_mu += spec.levy.rates @ spec.levy.atoms ** 2
        b, b_int = _const_envelope(abs(sig) * np.sqrt(diag_mu.max()))
    if cc.get("b") is not None:
        b, b_int = _const_envelope(cc["b"])

    name = "%s/%s" % (bk["kind"], fk["kind"])
    return spde.Coefficients(B, F, a=a, b=b, a_sq_integral=a_int,
                             b_sq_integral=b_int, F_apply=F_apply, name=name)


def _build_initial(cfg, d):
    init = cfg["initial"]
    if init["kind"] == "zero":
        return np.zeros(d)
    if init["kind"] == "constant":
        v = np.asarray(init["values"], dtype=float)
        if v.shape != (d,):
            raise ConfigError("initial vector must have length %d" % d,
                              "/initial/values")
        return v
    scale = float(init.get("scale", 1.0))

    def sample(seed, path_id):
        from . import rng
        return scale * rng.stream(seed, path_id, rng.TAG_INIT).standard_normal(d)
    return sample


class Scenario:
    """Validated configuration resolved into model objects."""

    def __init__(self, cfg=None):
        self.raw = validate_config(cfg or {})
        d = self.raw["dimension"]
        self.dimension = d
        self.name = self.raw["name"]
        self.version = self.raw["version"]
        self.family = SeminormFamily(d, polynomial_weights)
        self.semigroup = _build_spectrum(self.raw, d)
        Q = _build_Q(self.raw, d)
        levy = _build_levy(self.raw, d)
        self.spec = MvmSpec(Q, levy, dimension=d)
        drift = np.asarray(self.raw["noise"].get("drift", np.zeros(d)),
                           dtype=float)
        if drift.shape != (d,):
            raise ConfigError("drift must have length %d" % d, "/noise/drift")
        self.triplet = LevyTriplet(drift, Q, self.spec.levy, self.family,
                                   radius=self.raw["noise"]["ball_radius"])
        self.ball_levels = self.raw["noise"]["ball_levels"]
        self.norm_level = self.raw["picard"]["norm_level"]
        self.coefficients = build_coefficients(self.raw, self.spec, self.family,
                                               self.norm_level)
        self.z0 = _build_initial(self.raw, d)
        gc = self.raw["grid"]
        self.T = float(gc["T"])
        self.steps = int(gc["steps"])
        self.grid = np.linspace(0.0, self.T, self.steps + 1)
        self.tol = self.raw["picard"]["tol"]
        self.max_iter = self.raw["picard"]["max_iter"]
        self.upsilon = self.raw["picard"]["upsilon"]
        self.paths = self.raw["ensemble"]["paths"]
        self.seed = self.raw["ensemble"]["seed"]

    def override(self, overrides):
        """New scenario from this one with a nested-dict override."""
        return Scenario(_merge(self.raw, overrides))

    def halve_grid(self):
        return self.override({"grid": {"steps": max(1, self.steps // 2)}})


def load_scenario(path=None, overrides=None):
    """Scenario from a JSON file (defaults when path is None) + overrides."""
    cfg = {}
    if path is not None:
        with open(path) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError("config is not valid JSON: %s" % err) from err
    if overrides:
        cfg = _merge(cfg, overrides)
    return Scenario(cfg)
