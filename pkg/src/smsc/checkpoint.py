"""Checkpoint container: named float64 arrays plus a JSON metadata record (npz)."""
from __future__ import annotations

import dataclasses
import json

import numpy as np

from .data import DatasetConfig
from .errors import ContractError
from .models import ModelConfig, Pipeline, TaskSpec

FORMAT_VERSION = 1
_META = "__meta__"


def save_checkpoint(path, pipeline: Pipeline, dataset_cfg: DatasetConfig | None = None, **extra) -> None:
    cfg = dataclasses.asdict(pipeline.cfg)
    meta = {
        "format_version": FORMAT_VERSION,
        "model": cfg,
        "dataset": dataclasses.asdict(dataset_cfg) if dataset_cfg is not None else None,
        "extra": extra,
    }
    arrays = {f"param/{k}": v for k, v in pipeline.params.state_dict().items()}
    arrays[_META] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[Pipeline, DatasetConfig | None, dict]:
    with np.load(path) as npz:
        if _META not in npz.files:
            raise ContractError(f"{path}: not a checkpoint (no metadata record)")
        meta = json.loads(npz[_META].tobytes().decode())
        state = {k[len("param/"):]: npz[k] for k in npz.files if k.startswith("param/")}
    if meta.get("format_version") != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
    model = dict(meta["model"])
    model["tasks"] = tuple(TaskSpec(**t) for t in model["tasks"])
    pipeline = Pipeline(ModelConfig(**model))
    pipeline.params.load_state_dict(state)
    dataset = DatasetConfig(**meta["dataset"]) if meta["dataset"] is not None else None
    return pipeline, dataset, meta["extra"]
