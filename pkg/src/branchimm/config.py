"""Run configuration: a YAML file with sections ``rates``, ``space``,
``kernel``, ``environment``, and ``simulation`` (replicas, horizon, seed,
output grid), plus optional ``tolerances`` overrides.

Schema violations raise ConfigError, which the CLI maps to exit code 2.
Environment variables prefixed BRANCHIMM_ and command-line flags override
file values (flag beats variable beats file).
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .models import (EnvironmentSpec, LatticeKernel, RateParams, SingleSite,
                     SiteSpace, Torus, environment_from_dict, space_from_dict,
                     validate)

ENV_PREFIX = "BRANCHIMM_"

KNOWN_SECTIONS = {"rates", "space", "kernel", "environment", "simulation",
                  "tolerances"}
KNOWN_SIMULATION_KEYS = {"replicas", "horizon", "seed", "env_seed", "grid",
                         "n0", "jobs", "k_scale", "t", "walkers", "n_terms",
                         "oracle_bias", "quick"}


class ConfigError(ValueError):
    """The configuration file violates the documented schema."""


def _require_mapping(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    return obj


@dataclass
class RunConfig:
    """Parsed configuration plus provenance (path, content hash)."""

    raw: dict
    path: Optional[Path] = None
    config_hash: str = ""
    overrides: dict = field(default_factory=dict)

    # -- section accessors ---------------------------------------------------

    def rates(self) -> RateParams:
        if "rates" not in self.raw:
            raise ConfigError("missing required section 'rates'")
        d = _require_mapping(self.raw["rates"], "rates")
        for key in ("beta", "mu", "k"):
            if key not in d:
                raise ConfigError(f"rates section missing {key!r}")
        try:
            return RateParams.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad rates section: {exc}") from exc

    def space(self) -> SiteSpace:
        d = self.raw.get("space")
        if d is None:
            return SingleSite()
        d = dict(_require_mapping(d, "space"))
        if d.get("variant") == "torus" and "kernel" not in d:
            d["kernel"] = self.kernel_dict()
        try:
            return space_from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad space section: {exc}") from exc

    def kernel_dict(self) -> dict:
        if "kernel" not in self.raw:
            raise ConfigError("missing required section 'kernel'")
        return _require_mapping(self.raw["kernel"], "kernel")

    def kernel(self) -> LatticeKernel:
        d = self.kernel_dict()
        try:
            kern = LatticeKernel.from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad kernel section: {exc}") from exc
        problems = kern.problems()
        if problems:
            raise ConfigError("invalid kernel: " + "; ".join(problems))
        return kern

    def environment(self) -> EnvironmentSpec:
        if "environment" not in self.raw:
            raise ConfigError("missing required section 'environment'")
        d = _require_mapping(self.raw["environment"], "environment")
        try:
            env = environment_from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad environment section: {exc}") from exc
        problems = env.problems()
        if problems:
            raise ConfigError("invalid environment: " + "; ".join(problems))
        return env

    # -- simulation keys with override chain ---------------------------------

    def _sim(self) -> dict:
        return _require_mapping(self.raw.get("simulation", {}), "simulation")

    def sim_value(self, key: str, default=None, cast=None):
        if key in self.overrides and self.overrides[key] is not None:
            val = self.overrides[key]
        else:
            env_val = os.environ.get(ENV_PREFIX + key.upper())
            if env_val is not None:
                val = env_val
            else:
                val = self._sim().get(key, default)
        if val is None:
            return None
        if cast is not None:
            try:
                return cast(val)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"simulation.{key}: {exc}") from exc
        return val

    @property
    def seed(self) -> int:
        return self.sim_value("seed", default=0, cast=int)

    @property
    def env_seed(self) -> int:
        v = self.sim_value("env_seed", default=None, cast=int)
        return self.seed if v is None else v

    @property
    def replicas(self) -> int:
        r = self.sim_value("replicas", default=1000, cast=int)
        if r < 1:
            raise ConfigError("simulation.replicas must be >= 1")
        return r

    @property
    def jobs(self) -> int:
        j = self.sim_value("jobs", default=1, cast=int)
        if j < 1:
            raise ConfigError("simulation.jobs must be >= 1")
        return j

    @property
    def n0(self) -> int:
        return self.sim_value("n0", default=1, cast=int)

    @property
    def oracle_bias(self) -> float:
        """Multiplier applied to analytic targets inside --check gates; a
        test fixture for exercising the failure path (1.0 in normal use)."""
        return self.sim_value("oracle_bias", default=1.0, cast=float)

    def grid(self) -> np.ndarray:
        g = self.sim_value("grid", default=None)
        if g is None:
            raise ConfigError("simulation.grid is required for this command")
        if isinstance(g, dict):
            try:
                arr = np.linspace(float(g["start"]), float(g["stop"]),
                                  int(g["num"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"simulation.grid: {exc}") from exc
        else:
            if isinstance(g, str):
                g = [part for part in g.split(",") if part]
            try:
                arr = np.asarray([float(v) for v in g], dtype=float)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"simulation.grid: {exc}") from exc
        if arr.size == 0 or np.any(np.diff(arr) <= 0) or arr[0] < 0:
            raise ConfigError("simulation.grid must be increasing and nonnegative")
        return arr

    @property
    def horizon(self) -> float:
        h = self.sim_value("horizon", default=None, cast=float)
        if h is None:
            h = float(self.grid()[-1])
        if h < float(self.grid()[-1]):
            raise ConfigError("simulation.horizon must cover the grid")
        return h

    def tolerance(self, name: str, default: float) -> float:
        tol = _require_mapping(self.raw.get("tolerances", {}), "tolerances")
        try:
            return float(tol.get(name, default))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"tolerances.{name}: {exc}") from exc

    def validated_model(self) -> tuple[RateParams, SiteSpace]:
        params = self.rates()
        space = self.space()
        report = validate(params, space)
        if not report.ok:
            raise ConfigError(f"model fails validation: {report}")
        return params, space


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    data = path.read_bytes()
    try:
        raw = yaml.safe_load(data.decode("utf-8"))
    except (UnicodeDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - KNOWN_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sim = raw.get("simulation", {})
    if isinstance(sim, dict):
        unknown_keys = set(sim) - KNOWN_SIMULATION_KEYS
        if unknown_keys:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown_keys)}")
    digest = hashlib.sha256(data).hexdigest()[:16]
    return RunConfig(raw=raw, path=path, config_hash=digest,
                     overrides=overrides or {})


def dump_model(params: RateParams, space: SiteSpace) -> str:
    """Serialize a model descriptor back to YAML (round-trip partner of the
    loader)."""
    return yaml.safe_dump({"rates": params.to_dict(), "space": space.to_dict()},
                          sort_keys=True)
