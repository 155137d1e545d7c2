"""Run configuration: a versioned JSON document of validated parameter sections.

Each section reuses the parameter dataclass of the module it configures.
Values come from, in increasing precedence: defaults, the config file,
``COVERTNAV_<SECTION>__<FIELD>`` environment variables, command-line flags.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .atave import AtaveParams
from .rl.cql import CQLParams
from .rl.dataset import DatasetParams
from .rl.rewards import RewardWeights
from .sim.episode import SimParams
from .sim.scenario import PerceptionParams, PlacementParams
from .worldgen import MIN_EXTENT, SCENARIOS

CONFIG_VERSION = "config.v1"
ENV_PREFIX = "COVERTNAV_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldParams:
    scenario: str = "urban"
    extent: tuple[float, float] = (50.0, 50.0)
    seed: int = 0


@dataclass(frozen=True)
class DatasetRun:
    """Dataset build settings; training worlds are seeded ``world_seed + k``."""

    episodes: int = 450
    augmentations: int = 3
    worlds_per_scenario: int = 3
    world_seed: int = 1000
    seed: int = 0
    behaviour: DatasetParams = field(default_factory=DatasetParams)


@dataclass(frozen=True)
class EvalParams:
    scenarios: tuple[str, ...] = SCENARIOS
    trials: int = 10
    workers: int = 1
    ablation: bool = True
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    world: WorldParams = field(default_factory=WorldParams)
    perception: PerceptionParams = field(default_factory=PerceptionParams)
    placement: PlacementParams = field(default_factory=PlacementParams)
    atave: AtaveParams = field(default_factory=AtaveParams)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    dataset: DatasetRun = field(default_factory=DatasetRun)
    cql: CQLParams = field(default_factory=CQLParams)
    sim: SimParams = field(default_factory=SimParams)
    eval: EvalParams = field(default_factory=EvalParams)


# inclusive (lo, hi) bounds per dotted field path; None leaves a side open
_OPEN = None
RANGES: dict[str, tuple[float | None, float | None]] = {
    "world.extent": (MIN_EXTENT, 1000.0),
    "perception.cell_size": (0.05, 10.0),
    "perception.link_radius": (1e-3, 10.0),
    "perception.min_points": (1, _OPEN),
    "perception.thresholds.h_min": (0.0, _OPEN),
    "perception.thresholds.d_min": (0.0, _OPEN),
    "perception.thresholds.v_min": (0.0, _OPEN),
    "perception.cover_radius": (0, 10),
    "perception.noise_sigma": (0.0, 1.0),
    "placement.goal_range": (0.0, _OPEN),
    "placement.clearance": (0, 10),
    "placement.n_threats": (0, 20),
    "placement.threat_offset": (0.0, _OPEN),
    "placement.threat_keepout": (0.0, _OPEN),
    "placement.threat_watch": (0.0, 1.0),
    "placement.threat_eye_height": (0.0, _OPEN),
    "placement.threat_range": (0.0, _OPEN),
    "placement.safe_radius": (0, 10),
    "placement.retries": (1, _OPEN),
    "atave.eye_height": (0.0, _OPEN),
    "atave.max_range": (0.0, _OPEN),
    "atave.assess_range": (0.0, _OPEN),
    "atave.k": (1, _OPEN),
    "atave.mass_floor": (0.0, 1.0),
    "atave.gamma": (0.0, 1.0),
    "atave.p_detect": (1e-9, 1.0 - 1e-9),
    "atave.p_false_alarm": (1e-9, 1.0 - 1e-9),
    "atave.sensor_range": (0.0, _OPEN),
    "atave.sensor_height": (0.0, _OPEN),
    "rewards.cover": (0.0, _OPEN),
    "rewards.threat": (0.0, _OPEN),
    "rewards.goal": (0.0, _OPEN),
    "rewards.collision": (0.0, _OPEN),
    "dataset.episodes": (0, _OPEN),
    "dataset.augmentations": (0, _OPEN),
    "dataset.worlds_per_scenario": (1, _OPEN),
    "dataset.world_seed": (0, _OPEN),
    "dataset.seed": (0, _OPEN),
    "dataset.behaviour.goal_range": (0.0, _OPEN),
    "dataset.behaviour.max_steps": (1, _OPEN),
    "dataset.behaviour.epsilon": (0.0, 1.0),
    "dataset.behaviour.max_shift": (0, _OPEN),
    "cql.alpha": (0.0, _OPEN),
    "cql.gamma": (0.0, 0.999999),
    "cql.lr": (1e-12, _OPEN),
    "cql.batch": (1, _OPEN),
    "cql.epochs": (1, _OPEN),
    "cql.seed": (0, _OPEN),
    "sim.dt": (1e-3, 10.0),
    "sim.h_max": (0.0, _OPEN),
    "sim.goal_radius": (1e-3, _OPEN),
    "sim.detect_persist": (1, _OPEN),
    "sim.cover_threshold": (0.0, 1.0),
    "sim.replan_every": (1, _OPEN),
    "sim.lookahead": (0.0, _OPEN),
    "sim.timeout_factor": (1.0, _OPEN),
    "sim.min_timeout_steps": (1, _OPEN),
    "sim.cover_bias": (1e-6, _OPEN),
    "sim.threat_weight": (0.0, _OPEN),
    "eval.trials": (1, _OPEN),
    "eval.workers": (1, 256),
    "eval.seed": (0, _OPEN),
}
_ORDERED = {"world.extent", "placement.goal_range", "placement.n_threats", "placement.threat_offset",
            "dataset.behaviour.goal_range"}  # (lo, hi) pairs that must not be reversed


def _coerce(path: str, template: Any, value: Any) -> Any:
    """``value`` converted to the type of ``template``, or ConfigError."""
    if dataclasses.is_dataclass(template):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{path}: expected an object")
        return _build(path, type(template), template, value)
    if isinstance(template, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if isinstance(template, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{path}: expected a finite number, got {value!r}")
        return float(value)
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if isinstance(template, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        if template and len(value) != len(template) and not isinstance(template[0], str):
            raise ConfigError(f"{path}: expected {len(template)} entries")
        proto = template[0] if template else ""
        return tuple(_coerce(f"{path}[{k}]", proto, v) for k, v in enumerate(value))
    raise ConfigError(f"{path}: unsupported field type")


def _build(path: str, cls: type, base: Any, values: Mapping) -> Any:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        cur = getattr(base, f.name)
        sub = f"{path}.{f.name}" if path else f.name
        kwargs[f.name] = _coerce(sub, cur, values[f.name]) if f.name in values else cur
    return cls(**kwargs)


def _check(path: str, value: Any) -> None:
    if dataclasses.is_dataclass(value):
        for f in dataclasses.fields(value):
            _check(f"{path}.{f.name}" if path else f.name, getattr(value, f.name))
        return
    if path in RANGES:
        lo, hi = RANGES[path]
        items = value if isinstance(value, tuple) else (value,)
        for v in items:
            if (lo is not None and v < lo) or (hi is not None and v > hi):
                raise ConfigError(f"{path}: {v!r} outside [{lo}, {hi}]")
        if path in _ORDERED and value[0] > value[1]:
            raise ConfigError(f"{path}: lower bound exceeds upper bound")


def validate(cfg: RunConfig) -> RunConfig:
    _check("", cfg)
    if cfg.world.scenario not in SCENARIOS:
        raise ConfigError(f"world.scenario: expected one of {SCENARIOS}")
    bad = [s for s in cfg.eval.scenarios if s not in SCENARIOS]
    if bad or not cfg.eval.scenarios:
        raise ConfigError(f"eval.scenarios: expected a non-empty subset of {SCENARIOS}")
    return cfg


def from_dict(doc: Mapping, base: RunConfig | None = None) -> RunConfig:
    doc = dict(doc)
    version = doc.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    return validate(_build("", RunConfig, base or RunConfig(), doc))


def to_dict(cfg: RunConfig) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    def walk(obj):
        return {f.name: walk(getattr(obj, f.name)) if dataclasses.is_dataclass(getattr(obj, f.name))
                else plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}

    return {"version": CONFIG_VERSION, **walk(cfg)}


def dumps(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def loads(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return from_dict(doc)


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    """Nested overrides from ``COVERTNAV_SECTION__FIELD[__SUB]=value``.

    Values are parsed as JSON when possible (numbers, booleans, lists) and
    taken as plain strings otherwise.
    """
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        if not parts:
            continue
        raw = environ[key]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: conflicting override")
        node[parts[-1]] = value
    return out


def merge(base: dict, over: Mapping) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = merge(out[k], v) if isinstance(v, Mapping) and isinstance(out.get(k), dict) else v
    return out


def load_config(
    path: str | Path | None = None,
    overrides: Mapping | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Defaults, then the file at ``path``, then environment, then ``overrides``."""
    doc = to_dict(RunConfig())
    if path is not None:
        text = Path(path).read_text()
        try:
            file_doc = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(file_doc, dict):
            raise ConfigError("config must be a JSON object")
        doc = merge(doc, file_doc)
    doc = merge(doc, env_overrides(environ))
    if overrides:
        doc = merge(doc, overrides)
    return from_dict(doc)


def save_config(path: str | Path, cfg: RunConfig) -> None:
    Path(path).write_text(dumps(cfg))
