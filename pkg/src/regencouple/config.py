"""Experiment configuration: TOML (or JSON) documents into validated settings.

Layout::

    seed = 7
    [model]            # exactly one of: builtin, stopped_sum, birth_death, moments
    builtin = "stopped_sum_lattice"
    [couple]
    horizons = [256, 512, 1024, 2048]
    replicates = 100
    coupler = "dyadic"
    grid_step = 1.0
    [bd]
    ssa_horizon = 1e5
    [verify]
    suite = "acceptance"
    [tolerances]
    exponent_max = 0.15
"""

from __future__ import annotations

import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .rng import MAX_SEED

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUT_ENV = "REGENCOUPLE_OUT"
MODEL_KINDS = ("builtin", "stopped_sum", "birth_death", "moments")
VERIFY_SUITES = ("acceptance", "planted_signal", "planted_null")
TOLERANCE_KEYS = ("exponent_max", "r2_min", "z_max", "mass_tol", "oracle_rtol")
_SECTIONS = ("seed", "threads", "out", "model", "couple", "bd", "verify", "tolerances")


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=dict)
    horizons: list[float] = field(default_factory=lambda: [256.0, 512.0, 1024.0, 2048.0])
    replicates: int = 100
    coupler: str = "dyadic"
    grid_step: float = 1.0
    wtilde: str = "inverse"
    expect: str | None = None
    seed: int = 0
    threads: int = 1
    out: str | None = None
    ssa_horizon: float | None = None
    ssa_init: Any = "zero"
    suite: str = "acceptance"
    criteria: list[int] | None = None
    tolerances: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)

    @property
    def model_kind(self) -> str:
        return next(k for k in MODEL_KINDS if k in self.model)

    def output_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or "regencouple-out")

    def digest_source(self) -> dict:
        """The effective settings that determine results (no output path, no thread count)."""
        return {
            "model": self.model, "horizons": self.horizons, "replicates": self.replicates,
            "coupler": self.coupler, "grid_step": self.grid_step, "wtilde": self.wtilde, "seed": self.seed,
            "ssa_horizon": self.ssa_horizon, "ssa_init": self.ssa_init, "suite": self.suite,
            "criteria": self.criteria, "tolerances": self.tolerances,
        }


def _type(value, kinds, field_path, what):
    if isinstance(value, bool) or not isinstance(value, kinds):
        raise ConfigError(f"must be {what}, got {value!r}", field_path)
    return value


def check_horizons(values, field_path="couple.horizons") -> list[float]:
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigError("must be a non-empty list of numbers", field_path)
    out = []
    for i, v in enumerate(values):
        v = float(_type(v, (int, float), f"{field_path}[{i}]", "a number"))
        if not v >= math.e:
            raise ConfigError(f"horizon {v:g} is below e", f"{field_path}[{i}]")
        out.append(v)
    return out


def check_seed(value, field_path="seed") -> int:
    value = _type(value, int, field_path, "an integer")
    if not 0 <= value <= MAX_SEED:
        raise ConfigError("must be a 64-bit unsigned integer", field_path)
    return value


def check_replicates(value, field_path="couple.replicates") -> int:
    value = _type(value, int, field_path, "an integer")
    if value < 1:
        raise ConfigError("must be at least 1", field_path)
    return value


def _check_model(doc) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("must be a table", "model")
    kinds = [k for k in MODEL_KINDS if k in doc]
    extra = sorted(set(doc) - set(MODEL_KINDS))
    if extra:
        raise ConfigError(f"unknown key {extra[0]!r}; expected one of {list(MODEL_KINDS)}", f"model.{extra[0]}")
    if len(kinds) != 1:
        raise ConfigError(f"exactly one of {list(MODEL_KINDS)} is required", "model")
    return doc


def from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a table")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", unknown[0])
    cfg = ExperimentConfig(source=doc)
    if "model" in doc:
        cfg.model = _check_model(doc["model"])
    if "seed" in doc:
        cfg.seed = check_seed(doc["seed"])
    if "threads" in doc:
        cfg.threads = _type(doc["threads"], int, "threads", "an integer")
    if "out" in doc:
        cfg.out = _type(doc["out"], str, "out", "a string")
    couple = doc.get("couple", {})
    if not isinstance(couple, dict):
        raise ConfigError("must be a table", "couple")
    if "horizons" in couple:
        cfg.horizons = check_horizons(couple["horizons"])
    if "replicates" in couple:
        cfg.replicates = check_replicates(couple["replicates"])
    if "coupler" in couple:
        cfg.coupler = _type(couple["coupler"], str, "couple.coupler", "a string")
        if cfg.coupler not in ("dyadic", "independent"):
            raise ConfigError("must be 'dyadic' or 'independent'", "couple.coupler")
    if "grid_step" in couple:
        cfg.grid_step = float(_type(couple["grid_step"], (int, float), "couple.grid_step", "a number"))
        if not cfg.grid_step > 0:
            raise ConfigError("must be positive", "couple.grid_step")
    if "wtilde" in couple:
        cfg.wtilde = _type(couple["wtilde"], str, "couple.wtilde", "a string")
        if cfg.wtilde not in ("inverse", "proxy"):
            raise ConfigError("must be 'inverse' or 'proxy'", "couple.wtilde")
    if "expect" in couple:
        cfg.expect = _type(couple["expect"], str, "couple.expect", "a string")
    bd = doc.get("bd", {})
    if not isinstance(bd, dict):
        raise ConfigError("must be a table", "bd")
    if "ssa_horizon" in bd:
        cfg.ssa_horizon = float(_type(bd["ssa_horizon"], (int, float), "bd.ssa_horizon", "a number"))
        if not cfg.ssa_horizon > 0:
            raise ConfigError("must be positive", "bd.ssa_horizon")
    if "ssa_init" in bd:
        init = bd["ssa_init"]
        if not (init in ("zero", "stationary") or (isinstance(init, int) and not isinstance(init, bool) and init >= 0)):
            raise ConfigError("must be 'zero', 'stationary' or a non-negative state", "bd.ssa_init")
        cfg.ssa_init = init
    ver = doc.get("verify", {})
    if not isinstance(ver, dict):
        raise ConfigError("must be a table", "verify")
    if "suite" in ver:
        cfg.suite = _type(ver["suite"], str, "verify.suite", "a string")
        if cfg.suite not in VERIFY_SUITES:
            raise ConfigError(f"must be one of {list(VERIFY_SUITES)}", "verify.suite")
    if "criteria" in ver:
        crit = ver["criteria"]
        if not isinstance(crit, list) or not all(isinstance(c, int) and 1 <= c <= 10 for c in crit):
            raise ConfigError("must be a list of integers in 1..10", "verify.criteria")
        cfg.criteria = crit
    tol = doc.get("tolerances", {})
    if not isinstance(tol, dict):
        raise ConfigError("must be a table", "tolerances")
    for k, v in tol.items():
        if k not in TOLERANCE_KEYS:
            raise ConfigError(f"unknown tolerance; expected one of {list(TOLERANCE_KEYS)}", f"tolerances.{k}")
        _type(v, (int, float), f"tolerances.{k}", "a number")
    cfg.tolerances = dict(tol)
    return cfg


def parse_text(text: str, fmt: str = "toml") -> dict:
    """Parse a document, turning syntax errors into ConfigError with a line number."""
    if fmt == "json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from exc


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from exc
    fmt = "json" if path.suffix.lower() == ".json" else "toml"
    return from_dict(parse_text(text, fmt))
