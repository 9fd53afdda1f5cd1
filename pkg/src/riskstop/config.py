"""Run configuration: YAML file plus command-line overrides.

A config has three sections::

    model:
      family: ex3          # ex1 | ex3 | pdmp | custom-atoms
      alpha: 0.5
      c: 0.5
    numeric:
      x0: 5
      tol: 1.0e-8
      seed: 7
    output:
      directory: out
      formats: [csv, text]

Custom kernels are given as ``rows: [[state, [[next, prob], ...]], ...]``
with optional ``running`` and ``terminal`` costs (a number, ``identity`` or
a ``{state: value}`` table).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import InvalidParams
from .markov_model import FiniteChain, MarkovModel, ParetoChain, RandomResetChain
from .pdmp import PdmpParams, embed

FAMILIES = ("ex1", "ex3", "pdmp", "custom-atoms")
COMMANDS = ("solve", "simulate", "diagnose", "example", "dyadic")
FORMATS = ("csv", "text")

NUMERIC_DEFAULTS = {
    "x0": None,
    "tol": 1e-8,
    "max_iter": 500,
    "window_depth": 64,
    "n_traj": 10_000,
    "horizon_cap": 10_000,
    "seed": None,
    "T_grid": None,
    "m": None,
    "eval_states": None,
    "policy": "u-hitting",
    "trace": False,
}

MODEL_DEFAULTS = {
    "ex1": {"c": 0.5, "cutoff": 64},
    "ex3": {"alpha": 0.5, "c": 0.5},
    "pdmp": {"lambda": 2.0, "d": 1.0, "alpha": 0.9},
    "custom-atoms": {},
}


class ConfigError(InvalidParams):
    pass


@dataclass
class RunConfig:
    command: str
    model: dict
    numeric: dict
    output: dict = field(default_factory=lambda: {"directory": "riskstop-out", "formats": list(FORMATS)})

    def canonical(self) -> dict:
        """Everything that affects results; the output directory is left out."""
        return {"command": self.command, "model": self.model, "numeric": self.numeric,
                "formats": sorted(self.output["formats"])}

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def family(self) -> str:
        return self.model["family"]

    @property
    def seed(self):
        return self.numeric["seed"]

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError(f"command {self.command!r} is stochastic and needs a seed")
        return int(self.seed)

    @property
    def out_dir(self) -> Path:
        return Path(self.output["directory"])


def _number(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def _int(value, name, low=None):
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ConfigError(f"{name} must be an integer, got {value!r}")
    if low is not None and value < low:
        raise ConfigError(f"{name} must be >= {low}")
    return value


def _grid(value, name, cast):
    if value is None:
        return None
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    if not isinstance(value, (list, tuple)):
        value = [value]
    try:
        return [cast(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers") from None


def load_yaml(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as err:
        raise ConfigError(f"invalid YAML in {path}: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - {"model", "numeric", "output"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return data


def build_config(command: str, data: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge file contents with overrides and validate types and ranges."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    data = data or {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    model = dict(data.get("model") or {})
    numeric = dict(data.get("numeric") or {})
    output = dict(data.get("output") or {})
    for key in ("family", "alpha", "c", "lambda", "d"):
        if key in overrides:
            model[key] = overrides.pop(key)
    if "out" in overrides:
        output["directory"] = overrides.pop("out")
    numeric.update(overrides)

    family = model.get("family", "pdmp" if command == "dyadic" else "ex3")
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}")
    model = {**MODEL_DEFAULTS[family], **model, "family": family}
    unknown = set(numeric) - set(NUMERIC_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown numeric keys: {sorted(unknown)}")
    numeric = {**NUMERIC_DEFAULTS, **numeric}

    for key in ("alpha", "c", "lambda", "d"):
        if key in model:
            model[key] = _number(model[key], key)
    if "cutoff" in model:
        model["cutoff"] = _int(model["cutoff"], "cutoff", 1)
    if numeric["x0"] is not None:
        numeric["x0"] = _number(numeric["x0"], "x0")
    numeric["tol"] = _number(numeric["tol"], "tol")
    if not numeric["tol"] >= 0:
        raise ConfigError("tol must be non-negative")
    numeric["max_iter"] = _int(numeric["max_iter"], "max_iter", 1)
    numeric["window_depth"] = _int(numeric["window_depth"], "window_depth", 0)
    numeric["n_traj"] = _int(numeric["n_traj"], "n_traj", 2)
    numeric["horizon_cap"] = _int(numeric["horizon_cap"], "horizon_cap", 1)
    if numeric["seed"] is not None:
        numeric["seed"] = _int(numeric["seed"], "seed", 0)
    numeric["T_grid"] = _grid(numeric["T_grid"], "T_grid", float)
    numeric["m"] = _grid(numeric["m"], "m", int)
    numeric["eval_states"] = _grid(numeric["eval_states"], "eval_states", float)
    numeric["trace"] = bool(numeric["trace"])

    output.setdefault("directory", "riskstop-out")
    formats = output.get("formats", list(FORMATS))
    if isinstance(formats, str):
        formats = [formats]
    if not set(formats) <= set(FORMATS):
        raise ConfigError(f"formats must be a subset of {FORMATS}")
    output["formats"] = list(formats)
    output["directory"] = str(output["directory"])

    cfg = RunConfig(command, model, numeric, output)
    make_model(cfg)
    return cfg


def _cost_entry(value, name):
    if value is None:
        return None
    if isinstance(value, dict):
        return {float(k): _number(v, name) for k, v in value.items()}
    if value == "identity":
        return value
    return _number(value, name)


def make_model(cfg: RunConfig) -> MarkovModel:
    """Discrete-time model for the config (the jump-epoch chain for ``pdmp``)."""
    m = cfg.model
    fam = m["family"]
    if fam == "ex3":
        return RandomResetChain(m["alpha"], m["c"])
    if fam == "ex1":
        return ParetoChain(m["c"], cutoff=m.get("cutoff", 64))
    if fam == "pdmp":
        return embed(pdmp_params(cfg))
    rows = m.get("rows")
    if not rows:
        raise ConfigError("custom-atoms needs a non-empty rows list")
    try:
        table = {float(x): [(float(y), float(p)) for y, p in atoms] for x, atoms in rows}
    except (TypeError, ValueError):
        raise ConfigError("rows must look like [[state, [[next, prob], ...]], ...]") from None
    running = _cost_entry(m.get("running", 1.0), "running")
    terminal = _cost_entry(m.get("terminal", "identity"), "terminal")
    return FiniteChain(table, running=running, terminal=terminal)


def pdmp_params(cfg: RunConfig) -> PdmpParams:
    m = cfg.model
    return PdmpParams(m["lambda"], m["d"], m["alpha"])


def default_x0(cfg: RunConfig, model: MarkovModel) -> float:
    if cfg.numeric["x0"] is not None:
        return cfg.numeric["x0"]
    if cfg.family == "ex1":
        return 10.0
    if cfg.family == "custom-atoms":
        return model.states[0]
    return 5.0


def default_eval_states(cfg: RunConfig, model: MarkovModel) -> list[float]:
    if cfg.numeric["eval_states"] is not None:
        return cfg.numeric["eval_states"]
    if cfg.family == "ex1":
        return [float(k) for k in range(1, 31)]
    if cfg.family == "custom-atoms":
        return model.states
    return [k / 2 for k in range(21)]


def finite_or_text(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))
