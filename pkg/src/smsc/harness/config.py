"""Experiment configuration: a sectioned YAML file mapped onto frozen dataclasses.

Layout::

    dataset:    {num_identities: 16, noise_std: 1.0, ...}
    channel:    {rician_factor: 2, slot_duration: 1.0, bandwidth: 1600, ...}
    model:      {hidden: 128, n_features: 64, n_channel: 32, ...}
    train:      {learning_rate: 3.0e-4, epochs_stage1: 30, ...}
    experiment: {snr_grid_db: [-6, -4, ...], methods: [...], num_seeds: 5, ...}

Every section and key is optional; omitted values take the dataclass defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..channel import ChannelConfig
from ..data import DatasetConfig
from ..errors import ConfigError
from ..fir import POLICIES
from ..models import ModelConfig, TaskSpec
from ..training import TrainConfig

DEFAULT_GRID = (-6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0)
MODES = ("mtc", "stc")


@dataclass(frozen=True)
class ModelSection:
    hidden: int = 128
    n_features: int = 64
    n_channel: int = 32
    codec_hidden: int = 64
    head_hidden: int = 32

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigError(f"model.{f.name} must be >= 1")


@dataclass(frozen=True)
class ExperimentSection:
    snr_grid_db: tuple[float, ...] = DEFAULT_GRID
    methods: tuple[str, ...] = POLICIES
    modes: tuple[str, ...] = MODES
    num_seeds: int = 5
    seed: int = 0
    num_realizations: int = 200
    calibration_size: int = 256
    signed_importance: bool = False
    baseline_retrain: bool = False
    stc_shared_budget: bool = True
    workers: int = 1
    output_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in self.snr_grid_db))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.snr_grid_db:
            raise ConfigError("experiment.snr_grid_db must be non-empty")
        if self.num_seeds < 1:
            raise ConfigError("experiment.num_seeds must be >= 1")
        if not self.methods or set(self.methods) - set(POLICIES):
            raise ConfigError(f"experiment.methods must be a non-empty subset of {POLICIES}")
        if not self.modes or set(self.modes) - set(MODES):
            raise ConfigError(f"experiment.modes must be a non-empty subset of {MODES}")
        if self.num_realizations < 1:
            raise ConfigError("experiment.num_realizations must be >= 1")
        if self.calibration_size < 1:
            raise ConfigError("experiment.calibration_size must be >= 1")
        if self.workers < 1:
            raise ConfigError("experiment.workers must be >= 1")

    @property
    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.num_seeds)]


def _experiment_channel() -> ChannelConfig:
    # T*Wb = 1600: B < L below 2 dB on the default grid, B = L from 2 dB up.
    return ChannelConfig(bandwidth=1600.0)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    channel: ChannelConfig = field(default_factory=_experiment_channel)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def model_config(self, mode: str, task: str | None = None) -> ModelConfig:
        """MTC: one pipeline with all three heads. STC: one pipeline per task, weight 1."""
        d, t = self.dataset, self.train
        tasks = {
            "reid": TaskSpec("reid", d.num_identities, t.weight_reid),
            "color": TaskSpec("color", d.num_colors, t.weight_color),
            "type": TaskSpec("type", d.num_types, t.weight_type),
        }
        if mode == "mtc":
            heads = tuple(tasks.values())
        else:
            heads = (dataclasses.replace(tasks[task], weight=1.0),)
        return ModelConfig(input_dim=d.input_dim, tasks=heads, **dataclasses.asdict(self.model))

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            section = dataclasses.asdict(getattr(self, f.name))
            out[f.name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in section.items()}
        return out

    def training_hash(self) -> str:
        """Digest of everything that influences trained weights and importance vectors."""
        d = self.to_dict()
        exp = d["experiment"]
        key = {k: d[k] for k in ("dataset", "channel", "model", "train")}
        key["importance"] = [exp[k] for k in ("calibration_size", "signed_importance", "baseline_retrain",
                                              "stc_shared_budget")]
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:12]

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None,
                       modes: tuple[str, ...] | None = None, methods: tuple[str, ...] | None = None,
                       snr_grid: tuple[float, ...] | None = None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = output_dir
        if modes is not None:
            changes["modes"] = modes
        if methods is not None:
            changes["methods"] = methods
        if snr_grid is not None:
            changes["snr_grid_db"] = snr_grid
        return dataclasses.replace(self, experiment=dataclasses.replace(self.experiment, **changes))


_SECTIONS = {
    "dataset": DatasetConfig,
    "channel": ChannelConfig,
    "model": ModelSection,
    "train": TrainConfig,
    "experiment": ExperimentSection,
}


def _build(section: str, cls, values) -> object:
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    valid = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(values) - set(valid))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in section {section!r}; valid keys: {', '.join(valid)}")
    try:
        if section == "channel":
            merged = {**dataclasses.asdict(_experiment_channel()), **values}
            return cls(**merged)
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping of sections")
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}; valid sections: {', '.join(_SECTIONS)}")
    return ExperimentConfig(**{name: _build(name, cls, raw.get(name)) for name, cls in _SECTIONS.items()})


def load_config(path=None, echo_to: str | Path | None = None) -> ExperimentConfig:
    """Parse ``path`` (None means all defaults) and optionally write the resolved config."""
    raw = None
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    cfg = config_from_dict(raw)
    if echo_to is not None:
        write_config(cfg, echo_to)
    return cfg


def write_config(cfg: ExperimentConfig, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "config.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
    return path
