"""Run configuration: sectioned key-value files plus command-line overrides.

The format is INI (configparser).  Every key must belong to the schema of
its section; unknown sections or keys are hard errors, as are values
outside the documented ranges.  Command-line ``--set section.key=value``
overrides win over the file.
"""

from __future__ import annotations

import configparser
import hashlib
import inspect
from dataclasses import dataclass, field
from typing import Optional

from .exceptions import ConfigError
from .model import BUILTIN_MODELS

__all__ = ["RunConfig", "parse_config", "EXPERIMENTS", "DEFAULTS"]

EXPERIMENTS = ("simulate", "density", "gradient", "lions", "bounds", "identities")

DEFAULTS = {
    "s": 0.0,
    "t": 0.5,
    "dt": 1e-3,
    "n_particles": 10_000,
    "n_mc": 100_000,
    "seed": 42,
    "n_space": 257,
    "n_time": 8,
    "trunc": 2,
    "box_lo": -8.0,
    "box_hi": 8.0,
    "init_kind": "gaussian",
    "outdir": "results",
}

_INIT_KEYS = {
    "dirac": {"point"},
    "gaussian": {"mean", "std"},
    "uniform": {"lo", "hi"},
    "two_point": {"a", "b", "p"},
}

_RUN_KEYS = {"experiment", "s", "t", "dt", "n_particles", "n_mc", "seed"}
_GRID_KEYS = {"box_lo", "box_hi", "n_space", "n_time", "trunc"}
_OUTPUT_KEYS = {"dir"}


@dataclass(frozen=True)
class RunConfig:
    """Validated inputs of one experiment run."""

    experiment: str
    model_name: str
    model_params: dict
    init_kind: str
    init_params: dict
    s: float
    t: float
    dt: float
    n_particles: int
    n_mc: int
    seed: int
    box_lo: float
    box_hi: float
    n_space: int
    n_time: int
    trunc: int
    outdir: str
    source: dict = field(default_factory=dict)

    def content_hash(self) -> str:
        """Stable hash of every field that affects the numerics."""
        items = []
        for key in sorted(self.__dataclass_fields__):
            if key in ("source", "outdir"):
                continue
            val = getattr(self, key)
            if isinstance(val, dict):
                val = sorted(val.items())
            items.append(f"{key}={val!r}")
        return hashlib.sha256(";".join(items).encode()).hexdigest()


def _coerce(raw: str, like):
    try:
        if isinstance(like, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(like, int):
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if isinstance(like, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r}") from None


def _model_param_schema(name: str) -> dict:
    if name not in BUILTIN_MODELS:
        raise ConfigError(
            f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}")
    sig = inspect.signature(BUILTIN_MODELS[name])
    return {k: p.default for k, p in sig.parameters.items()}


def parse_config(path: Optional[str] = None, overrides: Optional[list] = None,
                 experiment: Optional[str] = None) -> RunConfig:
    """Read, override, and validate a run configuration.

    ``overrides`` are strings ``section.key=value`` (bare ``key=value``
    targets the [run] section); they win over the file.  ``experiment``
    (from the CLI positional argument) wins over both.
    """
    parser = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from None

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        section, _, name = key.strip().rpartition(".")
        section = section or "run"
        name = name.strip()
        if not name:
            raise ConfigError(f"override {item!r} has an empty key")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value.strip())

    known_sections = {"run", "model", "init", "grid", "output"}
    for sec in parser.sections():
        if sec not in known_sections:
            raise ConfigError(f"unknown config section [{sec}]")

    def section(name):
        return dict(parser[name]) if parser.has_section(name) else {}

    run = section("run")
    for key in run:
        if key not in _RUN_KEYS:
            raise ConfigError(f"unknown key {key!r} in section [run]")

    model_sec = section("model")
    model_name = model_sec.pop("name", None)
    if model_name is None:
        raise ConfigError("missing required key 'name' in section [model]")
    schema = _model_param_schema(model_name)
    model_params = {}
    for key, raw in model_sec.items():
        if key not in schema:
            raise ConfigError(
                f"unknown key {key!r} in section [model] for model {model_name!r}")
        model_params[key] = _coerce(raw, schema[key])

    init_sec = section("init")
    init_kind = init_sec.pop("kind", DEFAULTS["init_kind"])
    if init_kind not in _INIT_KEYS:
        raise ConfigError(
            f"unknown init kind {init_kind!r}; choose from {sorted(_INIT_KEYS)}")
    init_params = {}
    for key, raw in init_sec.items():
        if key not in _INIT_KEYS[init_kind]:
            raise ConfigError(
                f"unknown key {key!r} in section [init] for kind {init_kind!r}")
        init_params[key] = _coerce(raw, 0.0)

    grid = section("grid")
    for key in grid:
        if key not in _GRID_KEYS:
            raise ConfigError(f"unknown key {key!r} in section [grid]")

    output = section("output")
    for key in output:
        if key not in _OUTPUT_KEYS:
            raise ConfigError(f"unknown key {key!r} in section [output]")

    exp = experiment or run.get("experiment")
    if exp is None:
        raise ConfigError("no experiment named (positional argument or run.experiment)")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose from {EXPERIMENTS}")

    cfg = RunConfig(
        experiment=exp,
        model_name=model_name,
        model_params=model_params,
        init_kind=init_kind,
        init_params=init_params,
        s=_coerce(run.get("s", str(DEFAULTS["s"])), 0.0),
        t=_coerce(run.get("t", str(DEFAULTS["t"])), 0.0),
        dt=_coerce(run.get("dt", str(DEFAULTS["dt"])), 0.0),
        n_particles=_coerce(run.get("n_particles", str(DEFAULTS["n_particles"])), 0),
        n_mc=_coerce(run.get("n_mc", str(DEFAULTS["n_mc"])), 0),
        seed=_coerce(run.get("seed", str(DEFAULTS["seed"])), 0),
        box_lo=_coerce(grid.get("box_lo", str(DEFAULTS["box_lo"])), 0.0),
        box_hi=_coerce(grid.get("box_hi", str(DEFAULTS["box_hi"])), 0.0),
        n_space=_coerce(grid.get("n_space", str(DEFAULTS["n_space"])), 0),
        n_time=_coerce(grid.get("n_time", str(DEFAULTS["n_time"])), 0),
        trunc=_coerce(grid.get("trunc", str(DEFAULTS["trunc"])), 0),
        outdir=output.get("dir", DEFAULTS["outdir"]),
        source={"path": path, "overrides": list(overrides or [])},
    )
    _validate_ranges(cfg)
    return cfg


def _validate_ranges(cfg: RunConfig) -> None:
    if cfg.dt <= 0:
        raise ConfigError("range violation: dt > 0 required")
    if cfg.t <= cfg.s:
        raise ConfigError("range violation: t > s required")
    if cfg.n_particles < 1:
        raise ConfigError("range violation: n_particles >= 1 required")
    if cfg.n_mc < 1:
        raise ConfigError("range violation: n_mc >= 1 required")
    if cfg.n_space < 16:
        raise ConfigError("range violation: n_space >= 16 required")
    if cfg.n_time < 2:
        raise ConfigError("range violation: n_time >= 2 required")
    if cfg.trunc < 0:
        raise ConfigError("range violation: trunc >= 0 required")
    if cfg.box_hi <= cfg.box_lo:
        raise ConfigError("range violation: box_hi > box_lo required")
