"""Experiment configuration: one YAML file, validated into plain dataclasses.

See ``configs/example.yaml`` for the annotated schema.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError, DegeneracyError, ReebMagError
from .geometry import CATALOG, ChartPoint, FourierTorus, StandardSphere, get_manifold, sphere_points
from .integrate import IntegratorConfig
from .magnetic import MagneticSystem
from .mane import FunctionBasis, OptimizerConfig
from .metric import BundleMetric, example_fourier_bundle_metric, extend_metric, perturbed_metric

DEFAULTS = {
    "manifold": {"key": "t3-standard", "params": {}},
    "bundle_metric": {"kind": "identity"},
    "strength": 1.0,
    "perturbation": 0.0,
    "seed": 0,
    "integrator": {
        "scheme": "rk4",
        "dt": 1e-3,
        "tol": 1e-10,
        "max_time": 1.0,
        "drift_bound": 1e-6,
        "record_every": 1,
        "min_dt": 1e-12,
    },
    "seeds": [],
    "random_seeds": 0,
    "t_max": 2.0,
    "t_values": None,
    "kappas": [0.5, 2.0],
    "closure_tol": 1e-6,
    "flow": {"kind": "reeb", "q0": [0.0, 0.0, 0.0], "chart": 0, "v0": None, "speed": 1.0},
    "mane": {
        "degree": 2,
        "grid": 32,
        "sphere_points_per_chart": 4000,
        "betas": [10.0, 100.0, 1000.0],
        "max_iter": 200,
        "loop_speeds": [0.25, 0.5, 1.0, 2.0],
    },
    "verify": {
        "grid": 20,
        "sphere_points": 500,
        "samples": 100,
        "energy_states": 10,
        "energy_horizon": 10.0,
        "energy_dt": 2e-3,
    },
    "output": "out",
}

# sections merged key by key with the defaults; others are replaced wholesale
_NESTED = ("manifold", "integrator", "flow", "mane", "verify")


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _NESTED:
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a mapping")
            unknown = sorted(set(value) - set(base[key]))
            if unknown:
                raise ConfigError(f"unknown keys in {key}: {unknown}")
            out[key] = {**base[key], **value}
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    # derived objects, built lazily so that validation errors surface as ConfigError

    @property
    def manifold(self):
        if "manifold" not in self._cache:
            spec = self.raw["manifold"]
            try:
                self._cache["manifold"] = get_manifold(spec["key"], **(spec.get("params") or {}))
            except (KeyError, ValueError, DegeneracyError) as exc:
                raise ConfigError(f"manifold: {exc}") from exc
        return self._cache["manifold"]

    @property
    def bundle_metric(self):
        spec = self.raw["bundle_metric"]
        kind = spec.get("kind")
        try:
            if kind == "identity":
                return BundleMetric.identity()
            if kind == "constant":
                return BundleMetric.constant(spec["matrix"])
            if kind == "example-fourier":
                return example_fourier_bundle_metric()
            if kind == "fourier-z":
                if not isinstance(self.manifold, FourierTorus):
                    raise ConfigError("fourier-z bundle metrics need a torus")
                return BundleMetric.fourier_z(spec["base"], spec.get("cos", []), spec.get("sin", []))
        except KeyError as exc:
            raise ConfigError(f"bundle_metric: missing field {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"bundle_metric: {exc}") from exc
        raise ConfigError(f"unknown bundle metric kind {kind!r}")

    @property
    def system(self):
        if "system" not in self._cache:
            m = self.manifold
            bm = self.bundle_metric
            amp = float(self.raw["perturbation"])
            if amp:
                try:
                    metric = perturbed_metric(m, bm, amp)
                except ValueError as exc:
                    raise ConfigError(f"perturbation: {exc}") from exc
            else:
                metric = extend_metric(m, bm)
            self._cache["system"] = MagneticSystem(m, metric, self.raw["strength"])
        return self._cache["system"]

    @property
    def perturbed(self):
        return float(self.raw["perturbation"]) != 0.0

    @property
    def integrator(self):
        try:
            return IntegratorConfig(**self.raw["integrator"])
        except TypeError as exc:
            raise ConfigError(f"integrator: {exc}") from exc

    def seed_points(self):
        """Explicit seeds followed by ``random_seeds`` quasi-random ones."""
        m = self.manifold
        points = []
        for entry in self.raw["seeds"]:
            points.append(_seed_point(m, entry))
        n = int(self.raw["random_seeds"])
        if n:
            if isinstance(m, StandardSphere):
                u, charts = m.from_ambient(sphere_points(n, self.seed))
                points += [ChartPoint(x, int(c)) for x, c in zip(u, charts)]
            else:
                rng = np.random.default_rng(self.seed)
                points += [ChartPoint(x) for x in rng.random((n, 3))]
        return points

    @property
    def basis(self):
        return FunctionBasis.for_manifold(self.manifold, int(self.raw["mane"]["degree"]))

    @property
    def optimizer(self):
        mane = self.raw["mane"]
        return OptimizerConfig(betas=tuple(float(b) for b in mane["betas"]), max_iter=int(mane["max_iter"]))

    def canonical(self):
        return json.dumps({"config": self.raw, "seed": self.seed}, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _seed_point(manifold, entry):
    if isinstance(entry, dict):
        if "ambient" in entry:
            if not isinstance(manifold, StandardSphere):
                raise ConfigError("ambient seeds are only meaningful on the sphere")
            X = np.asarray(entry["ambient"], dtype=float)
            X = X / np.linalg.norm(X)
            u, chart = manifold.from_ambient(X)
            return ChartPoint(u, int(chart))
        return ChartPoint(np.asarray(entry["q"], dtype=float), int(entry.get("chart", 0)))
    return ChartPoint(np.asarray(entry, dtype=float))


def _validate(raw):
    if raw["manifold"].get("key") not in CATALOG:
        raise ConfigError(f"unknown manifold {raw['manifold'].get('key')!r}; choose from {sorted(CATALOG)}")
    if not isinstance(raw["kappas"], list) or not all(float(k) > 0 for k in raw["kappas"]):
        raise ConfigError("kappas must be a list of positive numbers")
    if not float(raw["t_max"]) > 0:
        raise ConfigError("t_max must be positive")
    if int(raw["random_seeds"]) < 0:
        raise ConfigError("random_seeds must be non-negative")
    if raw["flow"]["kind"] not in ("reeb", "magnetic"):
        raise ConfigError("flow.kind must be 'reeb' or 'magnetic'")
    if int(raw["mane"]["degree"]) < 0 or int(raw["mane"]["grid"]) < 2:
        raise ConfigError("mane.degree must be >= 0 and mane.grid >= 2")
    for key in ("grid", "sphere_points", "samples", "energy_states"):
        if int(raw["verify"][key]) < 1:
            raise ConfigError(f"verify.{key} must be positive")


def load_config(path=None, seed=None, overrides=None):
    """Read, merge with defaults, validate.  ``seed`` overrides the file."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    if overrides:
        data = {**data, **overrides}
    try:
        raw = _merge(DEFAULTS, data)
        _validate(raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if seed is not None:
        raw["seed"] = int(seed)  # the hash covers the effective seed only
    cfg = ExperimentConfig(raw, seed=int(raw["seed"]))
    try:
        cfg.integrator
        cfg.manifold
        cfg.bundle_metric
    except ReebMagError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
