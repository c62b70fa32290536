"""Experiment configuration files (YAML).

Every key is optional and has a default (see :data:`DEFAULTS`); unknown
keys are rejected with the offending line number.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import BadValue, ParseError, UnknownKey
from .model import BUILTIN_MODELS, POSITION_CONVENTIONS

KINDS = ("transport", "conductance_sweep", "neass_residual", "torque_scan", "full_suite")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "transport"
    model: str = "haldane"
    model_params: dict = field(default_factory=dict)
    model_file: str | None = None
    mu: float | None = None
    N: int = 48
    L_list: tuple = (12, 16, 20, 24)
    eps_list: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    gamma_max: int = 12
    fd_order: int = 4
    switch_half_width: float = 2.0
    profiles: tuple = ("poly5", "erf")
    margin: float = 3.0
    positions: str = "atomic"
    origin: tuple = (0.0, 0.0)
    output: str = "lab-output"
    seed: int = 0
    source_text: str = field(default="", compare=False, repr=False)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return validate(dataclasses.replace(self, **kw))


DEFAULTS = ExperimentConfig()
FIELDS = [f.name for f in dataclasses.fields(ExperimentConfig) if f.name != "source_text"]


def _bad(key, msg, lines):
    return BadValue(msg, line=lines.get(key), key=key)


def validate(cfg: ExperimentConfig, lines: dict | None = None) -> ExperimentConfig:
    lines = lines or {}
    if cfg.kind not in KINDS:
        raise _bad("kind", f"kind must be one of {KINDS}", lines)
    if cfg.model_file is None and cfg.model not in BUILTIN_MODELS:
        raise _bad("model", f"unknown built-in model {cfg.model!r}", lines)
    if cfg.N < 8:
        raise _bad("N", "N must be >= 8", lines)
    if not cfg.L_list or any(L < 3 for L in cfg.L_list):
        raise _bad("L_list", "every L must be an integer >= 3", lines)
    if not cfg.eps_list or any(e <= 0 for e in cfg.eps_list):
        raise _bad("eps_list", "eps values must be positive", lines)
    if cfg.gamma_max < 1:
        raise _bad("gamma_max", "gamma_max must be >= 1", lines)
    if cfg.fd_order not in (2, 4, 6):
        raise _bad("fd_order", "fd_order must be 2, 4 or 6", lines)
    if cfg.switch_half_width <= 0:
        raise _bad("switch_half_width", "switch_half_width must be positive", lines)
    if cfg.margin < 0:
        raise _bad("margin", "margin must be non-negative", lines)
    if cfg.positions not in POSITION_CONVENTIONS:
        raise _bad("positions", f"positions must be one of {POSITION_CONVENTIONS}", lines)
    if len(cfg.origin) != 2:
        raise _bad("origin", "origin must have two components", lines)
    from .conductance import parse_profile

    for p in cfg.profiles:
        try:
            parse_profile(p, cfg.switch_half_width)
        except ValueError as exc:
            raise _bad("profiles", str(exc), lines) from None
    return cfg


def _coerce(key: str, value, lines: dict):
    try:
        if key in ("N", "gamma_max", "fd_order", "seed"):
            if isinstance(value, bool) or int(value) != value:
                raise ValueError
            return int(value)
        if key in ("L_list",):
            out = tuple(int(v) for v in value)
            if any(isinstance(v, bool) or int(v) != v for v in value):
                raise ValueError
            return out
        if key in ("eps_list", "origin"):
            return tuple(float(v) for v in value)
        if key == "profiles":
            return tuple(str(v) for v in value)
        if key in ("switch_half_width", "margin"):
            return float(value)
        if key == "mu":
            return None if value is None else float(value)
        if key == "model_params":
            if not isinstance(value, dict):
                raise ValueError
            return {str(k): float(v) for k, v in value.items()}
        if key in ("kind", "model", "positions", "output"):
            if not isinstance(value, str):
                raise ValueError
            return value
        if key == "model_file":
            return None if value is None else str(value)
    except (TypeError, ValueError):
        raise BadValue(f"cannot interpret value {value!r}", line=lines.get(key), key=key) from None
    raise UnknownKey("unknown key", line=lines.get(key), key=key)


def parse_experiment_text(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                         line=None if mark is None else mark.line + 1) from None
    if root is None:
        values, lines = {}, {}
    else:
        if not isinstance(root, yaml.MappingNode):
            raise ParseError("top level must be a mapping", line=root.start_mark.line + 1)
        lines = {k.value: k.start_mark.line + 1 for k, _ in root.value}
        values = yaml.safe_load(text) or {}
    for key in values:
        if key not in FIELDS:
            raise UnknownKey("unknown key", line=lines.get(key), key=key)
    kw = {k: _coerce(k, v, lines) for k, v in values.items()}
    if kw.get("model_file") and base_dir is not None:
        path = Path(kw["model_file"])
        kw["model_file"] = str(path if path.is_absolute() else base_dir / path)
    return validate(ExperimentConfig(source_text=text, **kw), lines)


def parse_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_experiment_text(path.read_text(), base_dir=path.parent)
