"""Run configuration: INI-style files, validation, manifests.

A run is fully described by a sectioned key = value file; every command
resolves it against defaults, echoes the resolved form into a JSON manifest
next to the outputs, and derives all randomness from the single master
seed, so re-running a manifest reproduces every result row byte for byte.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .errors import ConfigurationError
from .potentials import (
    ConstantDrift,
    PowerPotential,
    QuadraticPotential,
    ResolventPotential,
    SignDrift,
    TanhDrift,
    ZeroDrift,
)
from .spectral import build_dirichlet_model

__all__ = ["RunConfig", "parse_config", "make_model", "make_potential", "make_drift", "write_manifest"]

DEFAULTS = {
    "model": {"n_modes": "8", "grid_points": ""},
    "potential": {
        "kind": "power",
        "m": "3.0",
        "omega_shift": "0.0",
        "resolvent_lambda": "4.0",
        "resolvent_samples": "4096",
    },
    "drift": {"kind": "sign", "b": "1.0", "vector": ""},
    "dynamics": {"t_final": "1.0", "n_steps_log2": "10", "scheme": "split-implicit", "alpha": ""},
    "experiment": {
        "kind": "simulate",
        "ensemble": "1",
        "levels": "9 10 11 12",
        "n_alpha": "8",
        "lambda_override": "",
        "series_depth": "1",
        "resolvent_paths": "32",
        "steps_per_draw": "8",
        "transform_enabled": "true",
        "a_nodes": "9",
    },
    "run": {"seed": "12345", "out_dir": "runs/out", "workers": "1"},
}

_POTENTIAL_KINDS = ("zero", "quadratic", "power", "resolvent")
_DRIFT_KINDS = ("zero", "constant", "sign", "tanh")
_SCHEMES = ("split-implicit", "yosida-explicit")
_EXPERIMENTS = ("simulate", "uniqueness", "transform", "resolvent", "invariants", "acceptance", "model")


@dataclass(frozen=True)
class RunConfig:
    """Resolved, validated configuration for one run."""

    sections: dict

    def get(self, section: str, key: str) -> str:
        return self.sections[section][key]

    # typed accessors -----------------------------------------------------
    def _fail(self, section, key, msg, raw):
        raise ConfigurationError(f"[{section}] {key}: {msg} (got {raw!r})")

    def get_int(self, section, key, minimum=None):
        raw = self.get(section, key)
        try:
            val = int(raw)
        except ValueError:
            self._fail(section, key, "expected an integer", raw)
        if minimum is not None and val < minimum:
            self._fail(section, key, f"must be >= {minimum}", raw)
        return val

    def get_float(self, section, key, minimum=None, positive=False):
        raw = self.get(section, key)
        try:
            val = float(raw)
        except ValueError:
            self._fail(section, key, "expected a number", raw)
        if positive and not val > 0:
            self._fail(section, key, "must be positive", raw)
        if minimum is not None and val < minimum:
            self._fail(section, key, f"must be >= {minimum}", raw)
        return val

    def get_bool(self, section, key):
        raw = self.get(section, key).strip().lower()
        if raw in ("true", "1", "yes", "on"):
            return True
        if raw in ("false", "0", "no", "off"):
            return False
        self._fail(section, key, "expected a boolean", raw)

    def get_choice(self, section, key, choices):
        raw = self.get(section, key)
        if raw not in choices:
            self._fail(section, key, f"expected one of {', '.join(choices)}", raw)
        return raw

    def get_levels(self):
        raw = self.get("experiment", "levels")
        try:
            levels = sorted(int(tok) for tok in raw.split())
        except ValueError:
            self._fail("experiment", "levels", "expected space-separated integers", raw)
        if not levels:
            self._fail("experiment", "levels", "expected at least one level", raw)
        return levels

    @property
    def seed(self) -> int:
        return self.get_int("run", "seed", minimum=0)

    @property
    def out_dir(self) -> FsPath:
        return FsPath(self.get("run", "out_dir"))

    @property
    def workers(self) -> int:
        return self.get_int("run", "workers", minimum=1)

    def to_dict(self) -> dict:
        return {s: dict(sorted(kv.items())) for s, kv in sorted(self.sections.items())}

    def sha256(self) -> str:
        canon = "\n".join(
            f"{s}.{k}={v}" for s, kv in sorted(self.sections.items()) for k, v in sorted(kv.items())
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def parse_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Resolve defaults, an optional INI file, and CLI overrides.

    Unknown sections or keys are configuration errors, reported by name.
    """
    sections = {s: dict(kv) for s, kv in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            read = parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        if not read:
            raise ConfigurationError(f"config file not found: {path}")
        for sec in parser.sections():
            if sec not in sections:
                raise ConfigurationError(f"{path}: unknown section [{sec}]")
            for key, val in parser.items(sec):
                if key not in sections[sec]:
                    raise ConfigurationError(f"{path}: unknown key [{sec}] {key}")
                sections[sec][key] = val
    for dotted, val in (overrides or {}).items():
        sec, key = dotted.split(".", 1)
        if sec not in sections or key not in sections[sec]:
            raise ConfigurationError(f"unknown override {dotted}")
        sections[sec][key] = str(val)
    cfg = RunConfig(sections=sections)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    n_modes = cfg.get_int("model", "n_modes", minimum=1)
    raw_grid = cfg.get("model", "grid_points")
    if raw_grid:
        grid = cfg.get_int("model", "grid_points", minimum=2)
        if grid < 2 * n_modes:
            raise ConfigurationError(
                f"[model] grid_points: must be >= 2 * n_modes = {2 * n_modes} (got {grid!r})"
            )
    kind = cfg.get_choice("potential", "kind", _POTENTIAL_KINDS)
    if kind in ("power", "resolvent"):
        cfg.get_float("potential", "m", minimum=1.0)
    cfg.get_float("potential", "omega_shift", minimum=0.0)
    cfg.get_choice("drift", "kind", _DRIFT_KINDS)
    cfg.get_float("drift", "b")
    cfg.get_float("dynamics", "t_final", positive=True)
    cfg.get_int("dynamics", "n_steps_log2", minimum=0)
    cfg.get_choice("dynamics", "scheme", _SCHEMES)
    if cfg.get("dynamics", "alpha"):
        cfg.get_float("dynamics", "alpha", positive=True)
    cfg.get_choice("experiment", "kind", _EXPERIMENTS)
    cfg.get_int("experiment", "ensemble", minimum=1)
    cfg.get_levels()
    cfg.get_int("experiment", "n_alpha", minimum=1)
    if cfg.get("experiment", "lambda_override"):
        cfg.get_float("experiment", "lambda_override", positive=True)
    cfg.get_int("experiment", "series_depth", minimum=0)
    cfg.get_int("experiment", "resolvent_paths", minimum=2)
    cfg.get_int("experiment", "steps_per_draw", minimum=1)
    cfg.get_bool("experiment", "transform_enabled")
    cfg.get_int("experiment", "a_nodes", minimum=2)
    cfg.get_int("run", "seed", minimum=0)
    cfg.get_int("run", "workers", minimum=1)


def make_model(cfg: RunConfig):
    n_modes = cfg.get_int("model", "n_modes", minimum=1)
    raw_grid = cfg.get("model", "grid_points")
    grid = cfg.get_int("model", "grid_points") if raw_grid else None
    return build_dirichlet_model(n_modes, grid)


def make_potential(cfg: RunConfig, model):
    kind = cfg.get_choice("potential", "kind", _POTENTIAL_KINDS)
    omega = cfg.get_float("potential", "omega_shift", minimum=0.0)
    if kind == "zero":
        return QuadraticPotential(0.0)
    if kind == "quadratic":
        return QuadraticPotential(omega if omega > 0 else 1.0)
    if kind == "power":
        return PowerPotential(model, cfg.get_float("potential", "m", minimum=1.0), omega)
    base = PowerPotential(model, cfg.get_float("potential", "m", minimum=1.0), 0.0)
    return ResolventPotential(
        model,
        base,
        cfg.get_float("potential", "resolvent_lambda", positive=True),
        n_samples=cfg.get_int("potential", "resolvent_samples", minimum=2),
        seed=cfg.seed,
        omega_shift=omega,
    )


def make_drift(cfg: RunConfig, model):
    kind = cfg.get_choice("drift", "kind", _DRIFT_KINDS)
    b = cfg.get_float("drift", "b")
    if kind == "zero":
        return ZeroDrift()
    if kind == "constant":
        raw = cfg.get("drift", "vector")
        if raw:
            vec = np.array([float(tok) for tok in raw.split()], dtype=float)
            if vec.shape[0] != model.n_modes:
                raise ConfigurationError(
                    f"[drift] vector: expected {model.n_modes} entries (got {raw!r})"
                )
        else:
            vec = np.zeros(model.n_modes)
            vec[0] = b
        return ConstantDrift(vec)
    if kind == "sign":
        return SignDrift(b)
    return TanhDrift(b)


def write_manifest(cfg: RunConfig, out_dir: FsPath, outputs, extra: dict | None = None) -> FsPath:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema": 1,
        "config": cfg.to_dict(),
        "config_sha256": cfg.sha256(),
        "seed": cfg.seed,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "package_version": _package_version(),
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        manifest.update(extra)
    dest = out_dir / "manifest.json"
    dest.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return dest


def _package_version() -> str:
    from . import __version__

    return __version__
