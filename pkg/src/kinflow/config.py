"""Run configuration: flat ``section.key = value`` TOML with strict validation.

Every key has a declared type and default (or is required). Unknown keys,
type mismatches and constraint violations are errors that name the key path.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .initial import InitialDensity
from .kernels import CutoffForce, ForceModel, MollifiedDrive

REQUIRED = ("density.kind", "run.n_particles", "run.t_final")

# key -> (type tag, default); REQUIRED keys have no default
SCHEMA = {
    "force.profile": ("str", "spring"),
    "force.k_n": ("float", 1.0),
    "force.gamma_n": ("float", 0.5),
    "force.gamma_t": ("float", 1.0),
    "force.R": ("float", 0.25),
    "force.R_tilde": ("float", 0.5),
    "cutoff.theta": ("float", 0.25),
    "drive.kind": ("str", "constant"),
    "drive.value": ("vec2", [0.0, 0.0]),
    "drive.amplitude": ("float", 0.0),
    "drive.center": ("vec2", [0.0, 0.0]),
    "drive.width": ("float", 1.0),
    "drive.quadrature_order": ("int", 24),
    "density.kind": ("str", None),
    "density.mass": ("float", 1.0),
    "density.lo": ("vec4", [0.0, 0.0, -0.5, -0.5]),
    "density.hi": ("vec4", [1.0, 1.0, 0.5, 0.5]),
    "density.mean": ("vec4", None),
    "density.std": ("vec4", None),
    "density.lo2": ("vec4", None),
    "density.hi2": ("vec4", None),
    "density.fraction": ("float", 0.5),
    "run.n_particles": ("int", None),
    "run.t_final": ("float", None),
    "run.dt": ("float", 1e-3),
    "run.record_stride": ("int", 10),
    "run.seed": ("int", 0),
    "run.snapshot_times": ("floatlist", []),
    "run.canonical_order": ("str", "index"),
    "grid.bins": ("int", 20),
    "grid.inflate": ("float", 0.05),
    "grid.track_sup_density": ("bool", False),
    "output.dir": ("str", "runs"),
    "stability.shift": ("vec4", [0.0, 0.0, 0.0, 0.0]),
    "converge.sizes": ("intlist", [64, 128, 256, 512]),
    "converge.seeds": ("intlist", [0, 1, 2, 3, 4, 5, 6, 7]),
    "converge.subsamples": ("int", 16),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, path + "."))
        else:
            out[path] = v
    return out


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _coerce(key: str, tag: str, value):
    bad = ConfigError(f"{key}: expected {tag}, got {type(value).__name__} {value!r}")
    if tag == "str":
        if not isinstance(value, str):
            raise bad
        return value
    if tag == "bool":
        if not isinstance(value, bool):
            raise bad
        return value
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad
        return value
    if tag == "float":
        if not _is_num(value):
            raise bad
        return float(value)
    if tag in ("vec2", "vec4", "floatlist", "intlist"):
        if not isinstance(value, list):
            raise bad
        if tag == "intlist":
            if not all(isinstance(a, int) and not isinstance(a, bool) for a in value):
                raise bad
            return list(value)
        if not all(_is_num(a) for a in value):
            raise bad
        n = {"vec2": 2, "vec4": 4}.get(tag)
        if n is not None and len(value) != n:
            raise ConfigError(f"{key}: expected {n} components, got {len(value)}")
        return [float(a) for a in value]
    raise AssertionError(tag)


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; ``values`` maps every schema key to its value."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    # -- model objects -----------------------------------------------------

    def force_model(self) -> ForceModel:
        v = self.values
        return ForceModel(k_n=v["force.k_n"], gamma_n=v["force.gamma_n"],
                          gamma_t=v["force.gamma_t"], R=v["force.R"],
                          R_tilde=v["force.R_tilde"], profile_kind=v["force.profile"])

    def cutoff_force(self, n: int | None = None) -> CutoffForce:
        return CutoffForce(self.force_model(), n or self.values["run.n_particles"],
                           self.values["cutoff.theta"])

    def drive(self, n: int | None = None) -> MollifiedDrive:
        v = self.values
        return MollifiedDrive.for_particles(
            n or v["run.n_particles"], kind=v["drive.kind"], value=tuple(v["drive.value"]),
            amplitude=v["drive.amplitude"], center=tuple(v["drive.center"]),
            width=v["drive.width"], quadrature_order=v["drive.quadrature_order"])

    def density(self) -> InitialDensity:
        v = self.values
        return InitialDensity(v["density.kind"], tuple(v["density.lo"]), tuple(v["density.hi"]),
                              v["density.mass"], v["density.mean"], v["density.std"],
                              v["density.lo2"], v["density.hi2"], v["density.fraction"])

    def with_overrides(self, **flat) -> "RunConfig":
        vals = dict(self.values)
        vals.update({k.replace("__", "."): v for k, v in flat.items()})
        return validate(vals)

    def digest(self) -> str:
        """Hash of the physics and run parameters (output location excluded)."""
        keyed = {k: v for k, v in sorted(self.values.items()) if not k.startswith("output.")}
        return hashlib.sha256(json.dumps(keyed, sort_keys=True).encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return dict(sorted(self.values.items()))


def validate(values: dict) -> RunConfig:
    """Check types and constraints on a flat key -> value mapping, filling defaults."""
    unknown = sorted(set(values) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    missing = [k for k in REQUIRED if values.get(k) is None]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    v = {}
    for key, (tag, default) in SCHEMA.items():
        raw = values.get(key, default)
        v[key] = None if raw is None else _coerce(key, tag, raw)

    def need(key, ok, what):
        if not ok:
            raise ConfigError(f"{key}: {what}, got {v[key]!r}")

    need("force.profile", v["force.profile"] in ("spring", "morse"), "must be 'spring' or 'morse'")
    for k in ("force.k_n", "force.gamma_n", "force.gamma_t"):
        need(k, v[k] >= 0, "must be nonnegative")
    for k in ("force.R", "force.R_tilde", "cutoff.theta", "drive.width", "run.dt",
              "density.mass"):
        need(k, v[k] > 0, "must be positive")
    need("drive.kind", v["drive.kind"] in ("constant", "gaussian-well", "lane"),
         "must be one of constant, gaussian-well, lane")
    need("drive.amplitude", v["drive.amplitude"] >= 0, "must be nonnegative")
    need("drive.quadrature_order", v["drive.quadrature_order"] >= 2, "must be at least 2")
    need("density.kind", v["density.kind"] in ("product-uniform-box", "truncated-gaussian",
                                               "two-bump"),
         "must be product-uniform-box, truncated-gaussian or two-bump")
    need("run.n_particles", v["run.n_particles"] >= 1, "must be at least 1")
    need("run.t_final", v["run.t_final"] >= 0, "must be nonnegative")
    need("run.record_stride", v["run.record_stride"] >= 1, "must be at least 1")
    need("run.canonical_order", v["run.canonical_order"] in ("index", "state"),
         "must be 'index' or 'state'")
    need("grid.bins", v["grid.bins"] >= 2, "must be at least 2")
    need("grid.inflate", v["grid.inflate"] >= 0, "must be nonnegative")
    need("converge.subsamples", v["converge.subsamples"] >= 1, "must be at least 1")
    sizes = v["converge.sizes"]
    need("converge.sizes", len(sizes) >= 2 and sizes == sorted(set(sizes)) and sizes[0] >= 1,
         "must be a strictly increasing list of at least two positive sizes")
    try:
        cfg = RunConfig(v)
        cfg.density()
    except ValueError as exc:
        raise ConfigError(f"density: {exc}") from None
    return cfg


def parse_config(source) -> RunConfig:
    """Parse a config from a path or from inline TOML text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and "=" not in source):
        text = Path(source).read_text()
    else:
        text = source
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    return validate(_flatten(raw))
