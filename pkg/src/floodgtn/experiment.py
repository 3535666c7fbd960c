"""Experiment configuration files and the dataset they describe."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import TimeSeriesFrame, WindowSet, load_frame, sliding_windows, split_train_test
from .graph import GraphError, StationGraph, default_topology, load_topology
from .hydrology import BUNDLED_SCENARIOS, ScenarioError, generate, load_scenario
from .models import ARCHITECTURES, DEFAULT_K, DEFAULT_W, ModelConfig
from .training import ARMS, TrainConfig


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


_TOP_KEYS = {"topology", "data", "scenario", "hours", "scenario_seed", "output_dir", "w", "k",
             "split_ratio", "models", "arms", "model", "train", "per_model", "seed"}


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: str
    models: tuple[str, ...]
    data: str | None = None             # CSV path (with its channel manifest alongside)
    scenario: str | None = None         # bundled scenario name or scenario file
    hours: int | None = None
    scenario_seed: int | None = None
    topology: str | None = None
    w: int = DEFAULT_W
    k: int = DEFAULT_K
    split_ratio: float = 0.8
    arms: tuple[str, ...] = ARMS
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    per_model: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if (self.data is None) == (self.scenario is None):
            raise ConfigError("give exactly one of 'data' (CSV path) or 'scenario'")
        if self.data is not None and not Path(self.data).is_file():
            raise ConfigError(f"data file not found: {self.data}")
        if self.topology is not None and not Path(self.topology).is_file():
            raise ConfigError(f"topology file not found: {self.topology}")
        if self.scenario is not None and self.scenario not in BUNDLED_SCENARIOS and not Path(self.scenario).is_file():
            raise ConfigError(f"scenario {self.scenario!r} is neither bundled nor an existing file")
        if not self.models:
            raise ConfigError("model list is empty")
        for name in self.models:
            if name not in ARCHITECTURES:
                raise ConfigError(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("model list has duplicates")
        bad_arms = [a for a in self.arms if a not in ARMS] or ([] if self.arms else ["<none>"])
        if bad_arms:
            raise ConfigError(f"arms must be drawn from {list(ARMS)}, got {list(self.arms)}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        unknown = set(self.per_model) - set(self.models)
        if unknown:
            raise ConfigError(f"per_model entries for models not in the list: {sorted(unknown)}")
        for name in self.models:
            self.model_config(name)
            self.train_config(name)

    def model_config(self, name: str, arm: str = "with") -> ModelConfig:
        extra = (self.per_model.get(name) or {}).get("model", {})
        opts = {**self.model, **extra, "architecture": name, "w": self.w, "k": self.k,
                "seed": self.seed, "use_future_covariates": arm == "with"}
        try:
            return ModelConfig.from_dict(opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model {name}: {exc}") from None

    def train_config(self, name: str) -> TrainConfig:
        extra = (self.per_model.get(name) or {}).get("train", {})
        try:
            return TrainConfig.from_dict({**self.train.to_dict(), **extra, "seed": self.seed})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train settings for {name}: {exc}") from None

    def runs(self) -> list[tuple[str, str]]:
        """(model, arm) pairs; persistence is only ever run in the first arm."""
        out = []
        for name in self.models:
            for arm in self.arms:
                if name == "persistence" and arm != self.arms[0]:
                    continue
                out.append((name, arm))
        return out

    def to_dict(self) -> dict:
        return {
            "output_dir": self.output_dir,
            "models": list(self.models),
            "data": self.data,
            "scenario": self.scenario,
            "hours": self.hours,
            "scenario_seed": self.scenario_seed,
            "topology": self.topology,
            "w": self.w,
            "k": self.k,
            "split_ratio": self.split_ratio,
            "arms": list(self.arms),
            "model": dict(self.model),
            "train": self.train.to_dict(),
            "per_model": {k: dict(v) for k, v in self.per_model.items()},
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _resolve(base: Path, value):
    if value is None:
        return None
    p = Path(str(value))
    return str(p if p.is_absolute() else (base / p).resolve())


def experiment_from_dict(d: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Build a config; relative paths are taken relative to ``base_dir``."""
    if not isinstance(d, dict):
        raise ConfigError("experiment config must be a mapping")
    if "config_hash" in d and "config" in d:     # a run manifest: replay its config
        d = d["config"]
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
    base = base_dir or Path.cwd()
    scenario = d.get("scenario")
    if scenario is not None and str(scenario) not in BUNDLED_SCENARIOS:
        scenario = _resolve(base, scenario)
    try:
        train = TrainConfig.from_dict(d.get("train") or {})
        return ExperimentConfig(
            output_dir=_resolve(base, d.get("output_dir", "runs")),
            models=tuple(d.get("models") or ()),
            data=_resolve(base, d.get("data")),
            scenario=None if scenario is None else str(scenario),
            hours=None if d.get("hours") is None else int(d["hours"]),
            scenario_seed=None if d.get("scenario_seed") is None else int(d["scenario_seed"]),
            topology=_resolve(base, d.get("topology")),
            w=int(d.get("w", DEFAULT_W)),
            k=int(d.get("k", DEFAULT_K)),
            split_ratio=float(d.get("split_ratio", 0.8)),
            arms=tuple(d.get("arms") or ARMS),
            model=dict(d.get("model") or {}),
            train=train,
            per_model={str(k): dict(v or {}) for k, v in (d.get("per_model") or {}).items()},
            seed=int(d.get("seed", 0)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_experiment(path, output_dir: str | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        text = path.read_text()
        d = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from None
    if output_dir is not None and isinstance(d, dict):
        target = d["config"] if "config_hash" in d and "config" in d else d
        target["output_dir"] = str(Path(output_dir).resolve())
    return experiment_from_dict(d, path.parent.resolve())


@dataclass(frozen=True)
class Dataset:
    frame: TimeSeriesFrame
    graph: StationGraph
    windows: WindowSet
    train: WindowSet
    test: WindowSet


def load_dataset(exp: ExperimentConfig) -> Dataset:
    """Load or synthesize the series, window it and split it chronologically."""
    try:
        if exp.scenario is not None:
            scen = load_scenario(exp.scenario, duration=exp.hours, seed=exp.scenario_seed)
            graph = scen.graph if exp.topology is None else load_topology(exp.topology)
            if exp.topology is not None and graph != scen.graph:
                raise ConfigError("topology file differs from the scenario's topology")
            frame = generate(scen)
        else:
            graph = default_topology() if exp.topology is None else load_topology(exp.topology)
            frame = load_frame(exp.data, graph)
    except (GraphError, ScenarioError) as exc:
        raise ConfigError(str(exc)) from None
    if frame.n_hours < exp.w + exp.k + 1:
        raise ConfigError(f"series has {frame.n_hours} hours; need at least w + k + 1 = {exp.w + exp.k + 1}")
    windows = sliding_windows(frame, exp.w, exp.k, graph)
    train, test = split_train_test(windows, exp.split_ratio)
    return Dataset(frame, graph, windows, train, test)
