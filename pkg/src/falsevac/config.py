"""Strict JSON run configurations for the command-line harness."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

KINDS = ("evolve", "scan", "collapse", "redfield", "tebd", "two-bubble", "sample")
BACKENDS = ("exact", "dense", "mps")

COMMON = {"kind", "params", "schedule", "backend", "observables", "output", "seed", "options"}
PARAM_FIELDS = {"N", "J", "h_x", "h_z"}

# kind -> allowed option keys and their defaults
OPTIONS: dict[str, dict[str, Any]] = {
    "evolve": {"duration": 10.0, "dt": 0.01, "record_every": 0.1, "model": "full", "n": 1,
               "initial": None, "n_max": 6},
    "scan": {"h_z_grid": None, "duration": 200.0, "heatmap_points": 51, "n_max": 6},
    "collapse": {"parameter": "h_x", "values": None, "observable": "M", "exponent": 2.0,
                 "exponent_search": None, "duration": None, "points": 401, "window": None,
                 "flip": None, "pause": 40.0, "dt": 0.02},
    "redfield": {"bath": None, "duration": 100.0, "dt": 0.5, "method": "expm", "secular": True,
                 "threshold": 1e-9, "initial": None},
    "tebd": {"chi": 64, "dt": 0.05, "cutoff": 1e-10, "discard": 2, "duration": 10.0,
             "record_every": 0.5, "initial": None, "order": 4},
    "two-bubble": {"n1": 5, "n2": 6, "duration": 100.0, "record_every": 1.0, "block_width": 50.0},
    "sample": {"count": 1000, "duration": 10.0, "dt": 0.01, "initial": None},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    kind: str
    params: dict
    schedule: dict | None = None
    backend: str = "exact"
    observables: list[str] = field(default_factory=lambda: ["M", "lambda", "Q_B"])
    output: str | None = None
    seed: int = 0
    options: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params,
            "schedule": self.schedule,
            "backend": self.backend,
            "observables": self.observables,
            "output": self.output,
            "seed": self.seed,
            "options": self.options,
        }

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def option(self, key: str):
        return self.options[key]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def parse_config(data: dict, seed_override: int | None = None) -> RunConfig:
    _require(isinstance(data, dict), "config must be a JSON object")
    unknown = set(data) - COMMON
    _require(not unknown, f"unknown config fields {sorted(unknown)}")
    kind = data.get("kind")
    _require(kind in KINDS, f"kind must be one of {KINDS}, got {kind!r}")
    params = data.get("params", {})
    _require(isinstance(params, dict), "params must be an object")
    bad = set(params) - PARAM_FIELDS
    _require(not bad, f"unknown params fields {sorted(bad)}")
    _require("N" in params, "params.N is required")
    _require(isinstance(params["N"], int) and params["N"] >= 3, "params.N must be an integer >= 3")
    for k in ("J", "h_x", "h_z"):
        if k in params:
            _require(isinstance(params[k], (int, float)) and not isinstance(params[k], bool),
                     f"params.{k} must be a number")
    params = {"J": 1.0, "h_x": 0.0, "h_z": 0.0, **params}
    backend = data.get("backend", "exact")
    _require(backend in BACKENDS, f"backend must be one of {BACKENDS}")
    if kind == "tebd":
        backend = "mps"
    _require(not (backend == "mps" and kind != "tebd"), "the mps backend is only available for kind 'tebd'")
    opts_in = data.get("options", {})
    _require(isinstance(opts_in, dict), "options must be an object")
    allowed = OPTIONS[kind]
    bad = set(opts_in) - set(allowed)
    _require(not bad, f"unknown options for kind {kind!r}: {sorted(bad)}")
    options = copy.deepcopy(allowed)
    options.update(opts_in)
    seed = data.get("seed", 0)
    _require(isinstance(seed, int) and seed >= 0, "seed must be a non-negative integer")
    if seed_override is not None:
        seed = int(seed_override)
    obs = data.get("observables", ["M", "lambda", "Q_B"])
    _require(isinstance(obs, list) and all(o in ("M", "lambda", "Q_B", "energy", "interface") for o in obs),
             "observables must be a list drawn from M, lambda, Q_B, energy, interface")
    sched = data.get("schedule")
    if sched is not None:
        from .schedules import DriveSchedule

        try:
            DriveSchedule.from_dict(sched)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid schedule: {exc}") from exc
    output = data.get("output")
    _require(output is None or isinstance(output, str), "output must be a string")

    if kind == "scan":
        _require(options["h_z_grid"] is not None, "scan needs options.h_z_grid")
    if kind == "collapse":
        _require(options["parameter"] in ("h_x", "h_z"), "collapse parameter must be h_x or h_z")
        _require(isinstance(options["values"], list) and len(options["values"]) >= 3,
                 "collapse needs at least 3 options.values")
        _require(options["observable"] in ("M",) or str(options["observable"]).startswith("lambda_"),
                 "collapse observable must be M or lambda_n")
    if kind == "redfield":
        _require(params["N"] <= 6, "redfield runs are limited to N <= 6")
        _require(isinstance(options["bath"], dict), "redfield needs options.bath")
    if kind == "two-bubble":
        _require(options["n1"] + options["n2"] <= params["N"] - 3, "bubbles do not fit on the ring")
    if backend in ("exact", "dense") and kind != "tebd":
        _require(params["N"] <= 24, "exact backend limited to N <= 24")
        if backend == "dense":
            _require(params["N"] <= 14, "dense backend limited to N <= 14")
    return RunConfig(kind, params, sched, backend, obs, output, seed, options)


def load_config(path, seed_override: int | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(data, seed_override)
