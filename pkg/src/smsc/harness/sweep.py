"""Experiment orchestration: per-(seed, mode) training cells and SNR x method evaluation."""
from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..channel import ChannelConfig, ChannelRealization, feature_budget, sample_rician_many, shared_budget
from ..checkpoint import load_checkpoint, save_checkpoint
from ..data import Dataset, generate_dataset
from ..errors import TrainingDivergedError
from ..fir import (
    ImportanceVector,
    SelectionPattern,
    combine_importance,
    load_importance,
    save_importance,
    select_full,
    select_random,
    select_sequential,
    select_top_b,
    task_sensitivity,
)
from ..metrics import classification_accuracy, rank1_accuracy
from ..models import Pipeline
from ..training import train_stage1, train_stage2
from .config import ExperimentConfig

log = logging.getLogger(__name__)

STC_TASKS = ("reid", "color", "type")
METRIC_FIELDS = ("rank1", "color_acc", "type_acc")


@dataclass(frozen=True)
class ResultRow:
    seed: int
    snr_db: float
    method: str
    mode: str
    budget: int
    rank1: float
    color_acc: float
    type_acc: float
    deep_fades: int

    def sort_key(self):
        return (self.seed, self.mode, self.method, self.snr_db)


@dataclass
class Unit:
    """One trained pipeline plus its importance vector; MTC has one unit, STC three."""

    name: str
    pipeline: Pipeline
    importance: ImportanceVector | None = None
    # method -> pipeline retrained for that method (only with baseline_retrain)
    variants: dict[str, Pipeline] = field(default_factory=dict)
    # (pipelines sharing the slot, this pipeline's position)
    share: tuple[int, int] = (1, 0)

    def for_method(self, method: str) -> Pipeline:
        return self.variants.get(method, self.pipeline)

    def budget(self, channel: ChannelConfig, snr_db: float) -> int:
        users, index = self.share
        return shared_budget(channel, self.pipeline.n_channel, snr_db, users, index)


def unit_names(mode: str) -> tuple[str, ...]:
    return ("mtc",) if mode == "mtc" else tuple(f"stc_{t}" for t in STC_TASKS)


def unit_share(cfg: ExperimentConfig, mode: str, position: int) -> tuple[int, int]:
    if mode == "stc" and cfg.experiment.stc_shared_budget:
        return (len(STC_TASKS), position)
    return (1, 0)


def run_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.experiment.output_dir) / "runs" / f"{cfg.training_hash()}-seed{seed}"


def seeded_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    return generate_dataset(dataclasses.replace(cfg.dataset, seed=cfg.dataset.seed + seed))


def _train_cfg(cfg: ExperimentConfig, seed: int, unit_index: int):
    return dataclasses.replace(cfg.train, seed=cfg.train.seed + 1000 * seed + unit_index)


def new_pipeline(cfg: ExperimentConfig, name: str, seed: int, unit_index: int) -> Pipeline:
    mode = "mtc" if name == "mtc" else "stc"
    task = None if name == "mtc" else name[len("stc_"):]
    return Pipeline(cfg.model_config(mode, task), seed=[cfg.train.seed, seed, unit_index, 17])


def compute_importance(pipeline: Pipeline, dataset: Dataset, calibration_size: int, signed: bool = False) -> ImportanceVector:
    batch = dataset["calibration"].x[:calibration_size]
    sens = [task_sensitivity(pipeline, batch, i, signed=signed) for i in range(len(pipeline.tasks))]
    return combine_importance(sens, [t.weight for t in pipeline.tasks])


def _copy(pipeline: Pipeline) -> Pipeline:
    clone = Pipeline(pipeline.cfg)
    clone.params.load_state_dict(pipeline.params.state_dict())
    return clone


def baseline_policy(method: str, n: int, seed):
    if method == "sequential":
        return lambda b: select_sequential(b, n)
    rng = np.random.default_rng(seed)
    return lambda b: select_random(n, b, rng)


def train_cell(cfg: ExperimentConfig, seed: int, mode: str, directory: Path | None = None) -> list[Unit]:
    """Stage 1, importance ranking and stage 2 for every unit of one (seed, mode)."""
    dataset = seeded_dataset(cfg, seed)
    exp = cfg.experiment
    units = []
    for position, name in enumerate(unit_names(mode)):
        index = unit_index(name)
        tcfg = _train_cfg(cfg, seed, index)
        pipeline = new_pipeline(cfg, name, seed, index)
        unit = Unit(name, pipeline, share=unit_share(cfg, mode, position))
        budget = lambda snr: unit.budget(cfg.channel, snr)  # noqa: E731
        logs = directory is not None
        train_stage1(pipeline, dataset, tcfg, cfg.channel, directory / f"{name}_stage1_log.csv" if logs else None)
        importance = compute_importance(pipeline, dataset, exp.calibration_size, exp.signed_importance)
        variants = {}
        if exp.baseline_retrain:
            for method in ("random", "sequential"):
                clone = _copy(pipeline)
                policy = baseline_policy(method, clone.n_channel, [tcfg.seed, 5, len(method)])
                train_stage2(clone, dataset, tcfg, cfg.channel, policy=policy, budget=budget)
                variants[method] = clone
        if directory is not None:
            save_checkpoint(directory / f"{name}_stage1.npz", pipeline, dataset.config)
            save_importance(directory / f"{name}_importance.txt", importance)
        train_stage2(pipeline, dataset, tcfg, cfg.channel, importance,
                     directory / f"{name}_stage2_log.csv" if logs else None, budget=budget)
        if directory is not None:
            save_checkpoint(directory / f"{name}_stage2.npz", pipeline, dataset.config)
            for method, clone in variants.items():
                save_checkpoint(directory / f"{name}_stage2_{method}.npz", clone, dataset.config)
        unit.importance, unit.variants = importance, variants
        units.append(unit)
    return units


def unit_index(name: str) -> int:
    return 0 if name == "mtc" else STC_TASKS.index(name[len("stc_"):]) + 1


def load_units(cfg: ExperimentConfig, directory: Path, mode: str, stage: int = 2) -> list[Unit]:
    units = []
    for position, name in enumerate(unit_names(mode)):
        path = directory / f"{name}_stage{stage}.npz"
        if stage == 2 and not path.exists():
            path = directory / f"{name}_stage1.npz"
        pipeline, _, _ = load_checkpoint(path)
        imp_path = directory / f"{name}_importance.txt"
        importance = load_importance(imp_path) if imp_path.exists() else None
        variants = {}
        for method in ("random", "sequential"):
            vpath = directory / f"{name}_stage2_{method}.npz"
            if vpath.exists():
                variants[method] = load_checkpoint(vpath)[0]
        units.append(Unit(name, pipeline, importance, variants, unit_share(cfg, mode, position)))
    return units


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalChannel:
    """Common random numbers: realization r uses the same h and unit noise at every SNR and method."""

    h: np.ndarray  # [R] complex
    unit_noise: np.ndarray  # [R, rows, 2L]
    deep_fades: int


def eval_channel(cfg: ChannelConfig, rows: int, n: int, realizations: int, seed: int) -> EvalChannel:
    h = np.empty(realizations, dtype=np.complex128)
    fades = 0
    for r in range(realizations):
        attempt = 0
        while True:
            value = sample_rician_many(cfg.rician_factor, 1, np.random.default_rng([seed, 3, r, attempt]))[0]
            if abs(value) > 1e-9:
                break
            fades += 1
            attempt += 1
        h[r] = value
    noise = np.random.default_rng([seed, 4]).standard_normal((realizations, rows, 2 * n))
    return EvalChannel(h, noise, fades)


def _pattern(method: str, b: int, n: int, importance: ImportanceVector | None, seed, r: int) -> SelectionPattern:
    if method == "full":
        return select_full(n)
    if method == "sequential":
        return select_sequential(b, n)
    if method == "random":
        return select_random(n, b, [seed, 6, r])
    if importance is None:
        raise ValueError("method 'fir' needs an importance vector")
    return select_top_b(importance, b)


def evaluate_unit(unit: Unit, dataset: Dataset, channel: ChannelConfig, snr_db: float, method: str,
                  chan: EvalChannel, seed: int) -> dict[str, float]:
    """Average task metrics of one unit over all channel realizations."""
    pipeline = unit.for_method(method)
    n = pipeline.n_channel
    b = unit.budget(channel, snr_db)
    if method == "full":
        b_sent = n
    elif b == 0:
        return {pipeline.tasks[i].kind: 0.0 for i in range(len(pipeline.tasks))}
    else:
        b_sent = b
    test = dataset.test
    n_query = len(dataset["query"])
    rows = len(test)
    realizations = len(chan.h)
    std = math.sqrt(channel.avg_power / 10 ** (snr_db / 10) / 2)
    with ad.no_grad():
        f = pipeline.encode_to_f(test.x)
        if method == "random":
            outs = []
            for r in range(realizations):
                pattern = _pattern(method, b_sent, n, unit.importance, seed, r)
                real = ChannelRealization(chan.h[r], chan.unit_noise[r][:, : 2 * b_sent] * std)
                ehat = pipeline.receive(f, pattern, real, channel.avg_power)
                outs.append((ehat.data, [p.data for p in pipeline.task_heads(ehat)]))
        else:
            pattern = _pattern(method, b_sent, n, unit.importance, seed, 0)
            h = np.repeat(chan.h, rows)
            noise = chan.unit_noise[:, :, : 2 * b_sent].reshape(realizations * rows, -1) * std
            ehat = pipeline.receive(np.tile(f, (realizations, 1)), pattern, ChannelRealization(h, noise), channel.avg_power)
            probs = [p.data for p in pipeline.task_heads(ehat)]
            outs = [
                (ehat.data[r * rows:(r + 1) * rows], [p[r * rows:(r + 1) * rows] for p in probs])
                for r in range(realizations)
            ]
    scores: dict[str, list[float]] = {t.kind: [] for t in pipeline.tasks}
    for ehat_r, probs_r in outs:
        for task, p in zip(pipeline.tasks, probs_r):
            if task.kind == "reid":
                q, g = ehat_r[:n_query], ehat_r[n_query:]
                scores["reid"].append(rank1_accuracy(q, g, test.ids[:n_query], test.ids[n_query:]))
            else:
                scores[task.kind].append(classification_accuracy(p, test.labels(task.kind)))
    return {k: float(np.mean(v)) for k, v in scores.items()}


def evaluate_cell(cfg: ExperimentConfig, seed: int, mode: str, units: list[Unit], dataset: Dataset | None = None,
                  snr_grid=None, methods=None) -> list[ResultRow]:
    dataset = dataset if dataset is not None else seeded_dataset(cfg, seed)
    exp = cfg.experiment
    n = units[0].pipeline.n_channel
    chan = eval_channel(cfg.channel, len(dataset.test), n, exp.num_realizations, seed)
    rows = []
    for snr in (snr_grid if snr_grid is not None else exp.snr_grid_db):
        for method in (methods if methods is not None else exp.methods):
            metrics: dict[str, float] = {}
            for unit in units:
                metrics.update(evaluate_unit(unit, dataset, cfg.channel, snr, method, chan, seed))
            rows.append(ResultRow(
                seed=seed, snr_db=float(snr), method=method, mode=mode,
                budget=feature_budget(cfg.channel, n, snr),
                rank1=metrics.get("reid", float("nan")),
                color_acc=metrics.get("color", float("nan")),
                type_acc=metrics.get("type", float("nan")),
                deep_fades=chan.deep_fades,
            ))
    return rows


def failed_rows(cfg: ExperimentConfig, seed: int, mode: str) -> list[ResultRow]:
    n = cfg.model.n_channel
    nan = float("nan")
    return [
        ResultRow(seed, float(snr), method, mode, feature_budget(cfg.channel, n, snr), nan, nan, nan, 0)
        for snr in cfg.experiment.snr_grid_db
        for method in cfg.experiment.methods
    ]


def run_cell(cfg: ExperimentConfig, seed: int, mode: str, persist: bool = True) -> list[ResultRow]:
    directory = run_dir(cfg, seed) if persist else None
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
    try:
        units = train_cell(cfg, seed, mode, directory)
    except TrainingDivergedError as exc:
        log.error("seed %d mode %s diverged: %s", seed, mode, exc)
        if directory is not None:
            (directory / f"{mode}_failure.txt").write_text(f"{exc}\n")
        return failed_rows(cfg, seed, mode)
    return evaluate_cell(cfg, seed, mode, units)


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(cfg: ExperimentConfig, persist: bool = True) -> list[ResultRow]:
    exp = cfg.experiment
    jobs = [(cfg, seed, mode, persist) for seed in exp.seeds for mode in exp.modes]
    if exp.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=exp.workers) as pool:
            chunks = list(pool.map(_run_cell_args, jobs))
    else:
        chunks = [_run_cell_args(job) for job in jobs]
    return sorted((row for chunk in chunks for row in chunk), key=ResultRow.sort_key)
