"""Losses and the two-stage end-to-end training loop."""
from __future__ import annotations

import csv
import dataclasses
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channel import ChannelConfig, draw_realization, feature_budget
from .data import Dataset, Split, pk_batches
from .errors import ConfigError, ContractError, ShapeError, TrainingDivergedError
from .fir import ImportanceVector, SelectionPattern, select_full, select_top_b
from .models import LinkOutput, Pipeline

PROB_EPS = 1e-7
LOSS_KINDS = ("reid", "color", "type")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 32
    ids_per_batch: int = 8
    epochs_stage1: int = 30
    epochs_stage2: int = 20
    triplet_margin: float = 0.3
    weight_reid: float = 1.0
    weight_color: float = 0.125
    weight_type: float = 0.125
    snr_min_db: float = -6.0
    snr_max_db: float = 8.0
    lr_decay: float = 0.5
    ce_variant: str = "binary"
    mode: str = "mtc"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.ids_per_batch < 2 or self.batch_size % self.ids_per_batch:
            raise ConfigError("batch_size must be a multiple of ids_per_batch (>= 2)")
        if self.views_per_batch < 2:
            raise ConfigError("each batch needs >= 2 views per identity for triplet mining")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.triplet_margin <= 0:
            raise ConfigError("triplet_margin must be > 0")
        if min(self.weight_reid, self.weight_color, self.weight_type) < 0:
            raise ConfigError("task weights must be >= 0")
        if self.snr_min_db > self.snr_max_db:
            raise ConfigError("snr_min_db must not exceed snr_max_db")
        if self.ce_variant not in ("binary", "categorical"):
            raise ConfigError("ce_variant must be 'binary' or 'categorical'")
        if self.mode not in ("mtc", "stc"):
            raise ConfigError("mode must be 'mtc' or 'stc'")

    @property
    def views_per_batch(self) -> int:
        return self.batch_size // self.ids_per_batch

    @property
    def task_weights(self) -> dict[str, float]:
        return {"reid": self.weight_reid, "color": self.weight_color, "type": self.weight_type}


# -------------------------------------------------------------------- losses


def cross_entropy(probs, labels, num_classes: int, variant: str = "binary") -> Tensor:
    """Mean over rows of -sum_k [y_k log p_k + (1 - y_k) log(1 - p_k)] for one-hot y.

    ``variant="categorical"`` keeps only the y_k log p_k term.
    """
    probs = ad.as_tensor(probs)
    labels = np.asarray(labels)
    if probs.data.ndim != 2 or probs.shape[1] != num_classes or len(labels) != probs.shape[0]:
        raise ShapeError(f"probabilities {probs.shape} vs {len(labels)} labels over {num_classes} classes")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError(f"label out of range [0, {num_classes})")
    y = np.eye(num_classes)[labels]
    p = ad.clamp(probs, PROB_EPS, 1 - PROB_EPS)
    ll = ad.mul(ad.log(p), y)
    if variant == "binary":
        ll = ad.add(ll, ad.mul(ad.log(ad.add(ad.neg(p), 1.0)), 1.0 - y))
    elif variant != "categorical":
        raise ContractError(f"unknown cross-entropy variant {variant!r}")
    return ad.neg(ad.mean(ad.sum(ll, axis=1)))


def _check_mining(ids: np.ndarray) -> None:
    uniq, counts = np.unique(ids, return_counts=True)
    if len(uniq) < 2 or counts.min() < 2:
        raise ContractError("hard triplet mining needs >= 2 identities with >= 2 samples each")


def hard_triplet(features, ids, margin: float) -> Tensor:
    """Batch-hard triplet loss: mean over anchors of max(max d_ap - min d_an + margin, 0)."""
    features = ad.as_tensor(features)
    ids = np.asarray(ids)
    if features.data.ndim != 2 or features.shape[0] != len(ids):
        raise ShapeError(f"features {features.shape} vs {len(ids)} labels")
    _check_mining(ids)
    x = features.data
    dist = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1))
    same = ids[:, None] == ids[None, :]
    pos_mask = same & ~np.eye(len(ids), dtype=bool)
    hardest_pos = np.argmax(np.where(pos_mask, dist, -np.inf), axis=1)
    hardest_neg = np.argmin(np.where(~same, dist, np.inf), axis=1)
    anchors = np.arange(len(ids))

    def distance(other):
        return ad.norm(ad.add(ad.take_rows(features, anchors), ad.neg(ad.take_rows(features, other))), axis=1)

    hinge = ad.relu(ad.add(ad.add(distance(hardest_pos), ad.neg(distance(hardest_neg))), margin))
    return ad.mean(hinge)


def channel_loss(e, ehat) -> Tensor:
    e, ehat = ad.as_tensor(e), ad.as_tensor(ehat)
    if e.shape != ehat.shape:
        raise ShapeError(f"channel_loss shape mismatch: {e.shape} vs {ehat.shape}")
    return ad.mean(ad.square(ad.add(e, ad.neg(ehat))))


@dataclass(frozen=True)
class LossReport:
    e2e: float
    task: float
    channel: float
    reid: float
    color: float
    type: float
    weights: tuple[float, float, float]
    graph_total: float

    def identity_errors(self) -> tuple[float, float, float]:
        """Residuals of L_E2E = L_T + L_CH, L_T = sum(lambda * L), and graph vs ledger."""
        lr, lc, lt = self.weights
        return (
            abs(self.e2e - (self.task + self.channel)),
            abs(self.task - (lr * self.reid + lc * self.color + lt * self.type)),
            abs(self.graph_total - self.e2e),
        )


def total_loss(out: LinkOutput, split: Split, tasks, margin: float, ce_variant: str = "binary",
               weights: dict[str, float] | None = None) -> tuple[Tensor, LossReport]:
    """Compose the end-to-end loss for whichever heads the pipeline carries.

    Weights default to each head's TaskSpec weight; kinds without a head weigh 0.
    """
    terms: dict[str, Tensor] = {}
    used = {k: 0.0 for k in LOSS_KINDS}
    for task, probs in zip(tasks, out.probs):
        labels = split.labels(task.kind)
        ce = cross_entropy(probs, labels, task.num_classes, ce_variant)
        terms[task.kind] = ad.add(hard_triplet(out.ehat, labels, margin), ce) if task.kind == "reid" else ce
        used[task.kind] = task.weight if weights is None else weights[task.kind]
    l_ch = channel_loss(out.e, out.ehat)
    total = l_ch
    for kind, term in terms.items():
        total = ad.add(total, ad.mul(term, used[kind]))
    values = {k: (terms[k].item() if k in terms else 0.0) for k in LOSS_KINDS}
    w = tuple(used[k] for k in LOSS_KINDS)
    task_value = w[0] * values["reid"] + w[1] * values["color"] + w[2] * values["type"]
    report = LossReport(
        e2e=task_value + l_ch.item(),
        task=task_value,
        channel=l_ch.item(),
        reid=values["reid"],
        color=values["color"],
        type=values["type"],
        weights=w,
        graph_total=total.item(),
    )
    return total, report


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    pipeline: Pipeline
    history: list[LossReport] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    skipped_slots: int = 0
    deep_fades: int = 0


def first_nonfinite_op(root: Tensor) -> str | None:
    for node in ad.nodes(root):
        if not np.all(np.isfinite(node.data)):
            return node.op
    return None


class _Slots:
    """Per-batch SNR draws and channel realizations for one training stage."""

    def __init__(self, pipeline: Pipeline, channel: ChannelConfig, cfg: TrainConfig, stage: int,
                 pattern_for_budget: Callable[[int], SelectionPattern], budget: Callable[[float], int] | None):
        self.rng = np.random.default_rng([cfg.seed, stage, 0])
        self.pipeline, self.channel, self.cfg, self.stage = pipeline, channel, cfg, stage
        self.pattern_for_budget, self.budget = pattern_for_budget, budget
        self.skipped = 0
        self.deep_fades = 0

    def draw(self, rows: int, step: int):
        n = self.pipeline.n_channel
        while True:
            snr = float(self.rng.uniform(self.cfg.snr_min_db, self.cfg.snr_max_db))
            b = n if self.budget is None else self.budget(snr)
            if b > 0:
                break
            self.skipped += 1
        cfg = dataclasses.replace(self.channel, snr_db=snr)
        attempt = 0
        while True:
            real = draw_realization(rows, b, cfg, seed=[self.cfg.seed, self.stage, step, attempt, 1])
            if abs(real.h) > 1e-9:
                return self.pattern_for_budget(b), real
            self.deep_fades += 1
            attempt += 1


def _forward_loss(pipeline, dataset, cfg, channel, batch_idx, pattern, realization):
    split = dataset["train"].subset(batch_idx)
    out = pipeline.forward(split.x, pattern, realization, channel.avg_power)
    return total_loss(out, split, pipeline.tasks, cfg.triplet_margin, cfg.ce_variant)


def probe_loss(pipeline: Pipeline, dataset: Dataset, cfg: TrainConfig, channel: ChannelConfig,
               pattern_for_budget: Callable[[int], SelectionPattern], budget=None, n_batches: int = 4) -> float:
    """Mean L_E2E on a fixed set of training batches and channel draws (no update)."""
    slots = _Slots(pipeline, channel, dataclasses.replace(cfg, seed=cfg.seed + 7919), 99, pattern_for_budget, budget)
    rng = np.random.default_rng([cfg.seed, 99, 1])
    batches = pk_batches(dataset["train"].ids, cfg.ids_per_batch, cfg.views_per_batch, rng)[:n_batches]
    total = 0.0
    with ad.no_grad():
        for step, idx in enumerate(batches):
            pattern, real = slots.draw(len(idx), step)
            total += _forward_loss(pipeline, dataset, cfg, channel, idx, pattern, real)[1].e2e
    return total / len(batches)


def _train(pipeline: Pipeline, dataset: Dataset, cfg: TrainConfig, channel: ChannelConfig, epochs: int,
           stage: int, pattern_for_budget, budget, log_path=None) -> TrainResult:
    result = TrainResult(pipeline)
    result.initial_loss = probe_loss(pipeline, dataset, cfg, channel, pattern_for_budget, budget)
    slots = _Slots(pipeline, channel, cfg, stage, pattern_for_budget, budget)
    batch_rng = np.random.default_rng([cfg.seed, stage, 2])
    decay_every = max(1, math.ceil(epochs / 3))
    step = 0
    for epoch in range(epochs):
        lr = cfg.learning_rate * cfg.lr_decay ** (epoch // decay_every)
        start = time.perf_counter()
        reports = []
        for idx in pk_batches(dataset["train"].ids, cfg.ids_per_batch, cfg.views_per_batch, batch_rng):
            pattern, real = slots.draw(len(idx), step)
            pipeline.params.zero_grad()
            loss, report = _forward_loss(pipeline, dataset, cfg, channel, idx, pattern, real)
            if not math.isfinite(loss.item()):
                op = first_nonfinite_op(loss)
                raise TrainingDivergedError(f"stage {stage} epoch {epoch}: non-finite loss, first produced by {op!r}", op)
            ad.backward(loss)
            ad.adam_step(pipeline.params, pipeline.params.grads(), lr)
            reports.append(report)
            step += 1
        result.history.extend(reports)
        result.epochs.append(_epoch_row(stage, epoch, lr, reports, time.perf_counter() - start, slots.skipped))
    result.skipped_slots, result.deep_fades = slots.skipped, slots.deep_fades
    result.final_loss = probe_loss(pipeline, dataset, cfg, channel, pattern_for_budget, budget)
    if log_path is not None:
        write_epoch_log(log_path, result.epochs)
    return result


EPOCH_FIELDS = ("stage", "epoch", "lr", "l_e2e", "l_task", "l_channel", "l_reid", "l_color", "l_type",
                "wall_time", "skipped_slots")


def _epoch_row(stage, epoch, lr, reports: list[LossReport], wall: float, skipped: int) -> dict:
    def avg(attr):
        return float(np.mean([getattr(r, attr) for r in reports]))

    return {
        "stage": stage, "epoch": epoch + 1, "lr": lr,
        "l_e2e": avg("e2e"), "l_task": avg("task"), "l_channel": avg("channel"),
        "l_reid": avg("reid"), "l_color": avg("color"), "l_type": avg("type"),
        "wall_time": wall, "skipped_slots": skipped,
    }


def write_epoch_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EPOCH_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def train_stage1(pipeline: Pipeline, dataset: Dataset, cfg: TrainConfig, channel: ChannelConfig,
                 log_path=None) -> TrainResult:
    """Train with every feature transmitted (B = L) over a random-SNR channel."""
    full = select_full(pipeline.n_channel)
    return _train(pipeline, dataset, cfg, channel, cfg.epochs_stage1, 1, lambda b: full, None, log_path)


def train_stage2(pipeline: Pipeline, dataset: Dataset, cfg: TrainConfig, channel: ChannelConfig,
                 importance: ImportanceVector | None = None, log_path=None,
                 policy: Callable[[int], SelectionPattern] | None = None,
                 budget: Callable[[float], int] | None = None) -> TrainResult:
    """Retrain under the SNR-dependent budget, sending the top-B features by importance.

    ``policy`` overrides the budget-to-pattern rule (used to retrain the baselines);
    ``budget`` overrides the SNR-to-B mapping (default :func:`feature_budget`).
    """
    if policy is None:
        if importance is None:
            raise ContractError("stage 2 needs an importance vector or an explicit policy")
        if len(importance) != pipeline.n_channel:
            raise ShapeError(f"importance has {len(importance)} entries, pipeline sends {pipeline.n_channel}")
        policy = lambda b: select_top_b(importance, b)  # noqa: E731
    if budget is None:
        budget = lambda snr: feature_budget(channel, pipeline.n_channel, snr)  # noqa: E731
    return _train(pipeline, dataset, cfg, channel, cfg.epochs_stage2, 2, policy, budget, log_path)

