"""Toy multi-task transceiver: semantic encoder, JSC encoder/decoder, task heads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .channel import ChannelRealization, equalize, power_normalize, transmit
from .errors import ConfigError, ShapeError
from .fir import SelectionPattern, apply_selection, scatter_received, select_full

TASK_KINDS = ("reid", "color", "type")


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    num_classes: int
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if self.num_classes < 2:
            raise ConfigError("a task needs at least 2 classes")
        if self.weight < 0:
            raise ConfigError("task weight must be >= 0")

    @property
    def metric(self) -> str:
        return "rank1" if self.kind == "reid" else "accuracy"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 256
    hidden: int = 128
    n_features: int = 64  # N, width of e and ê
    n_channel: int = 32  # L, complex symbols in f
    codec_hidden: int = 64
    head_hidden: int = 32
    tasks: tuple[TaskSpec, ...] = field(
        default=(TaskSpec("reid", 16, 1.0), TaskSpec("color", 4, 0.125), TaskSpec("type", 4, 0.125))
    )

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError("at least one task head is required")


def _dense(store: ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator) -> None:
    bound = np.sqrt(6.0 / (n_in + n_out))
    store.add(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
    store.add(f"{name}.b", np.zeros(n_out))


def _mlp(store: ParamStore, name: str, x: Tensor) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, store[f"{name}.0.w"]), store[f"{name}.0.b"]))
    return ad.add(ad.matmul(h, store[f"{name}.1.w"]), store[f"{name}.1.b"])


class Pipeline:
    """Parameters and forward pieces of one transceiver (shared encoder, K heads)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params = ParamStore()
        layers = [
            ("sem", cfg.input_dim, cfg.hidden, cfg.n_features),
            ("jsc_enc", cfg.n_features, cfg.codec_hidden, 2 * cfg.n_channel),
            ("jsc_dec", 2 * cfg.n_channel, cfg.codec_hidden, cfg.n_features),
        ]
        layers += [(f"head{i}", cfg.n_features, cfg.head_hidden, t.num_classes) for i, t in enumerate(cfg.tasks)]
        for name, n_in, n_hid, n_out in layers:
            _dense(self.params, f"{name}.0", n_in, n_hid, rng)
            _dense(self.params, f"{name}.1", n_hid, n_out, rng)

    @property
    def tasks(self) -> tuple[TaskSpec, ...]:
        return self.cfg.tasks

    @property
    def n_channel(self) -> int:
        return self.cfg.n_channel

    def task_index(self, kind: str) -> int:
        for i, t in enumerate(self.tasks):
            if t.kind == kind:
                return i
        raise KeyError(kind)

    def _check(self, x: Tensor, width: int, where: str) -> Tensor:
        x = ad.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != width:
            raise ShapeError(f"{where}: expected [batch, {width}], got {x.shape}")
        return x

    def semantic_encode(self, x) -> Tensor:
        return _mlp(self.params, "sem", self._check(x, self.cfg.input_dim, "semantic_encode"))

    def jsc_encode(self, e) -> Tensor:
        return _mlp(self.params, "jsc_enc", self._check(e, self.cfg.n_features, "jsc_encode"))

    def jsc_decode(self, z) -> Tensor:
        return _mlp(self.params, "jsc_dec", self._check(z, 2 * self.cfg.n_channel, "jsc_decode"))

    def head_logits(self, ehat, i: int) -> Tensor:
        return _mlp(self.params, f"head{i}", self._check(ehat, self.cfg.n_features, "task_heads"))

    def task_heads(self, ehat) -> list[Tensor]:
        return [ad.softmax(self.head_logits(ehat, i)) for i in range(len(self.tasks))]

    # ------------------------------------------------------------ link

    def encode_to_f(self, x) -> np.ndarray:
        return self.jsc_encode(self.semantic_encode(x)).data

    def receive(self, f, pattern: SelectionPattern | None = None, realization: ChannelRealization | None = None,
                avg_power: float = 1.0) -> Tensor:
        """Selection, power control, channel, equalization, scatter, JSC decoding.

        ``realization=None`` is the noiseless identity channel (h = 1, n = 0).
        """
        if pattern is None:
            pattern = select_full(self.n_channel)
        z = power_normalize(apply_selection(f, pattern), avg_power)
        if realization is not None:
            z = equalize(transmit(z, realization), realization.h)
        return self.jsc_decode(scatter_received(z, pattern, self.n_channel))

    def forward(self, x, pattern: SelectionPattern | None = None,
                realization: ChannelRealization | None = None, avg_power: float = 1.0) -> LinkOutput:
        e = self.semantic_encode(x)
        f = self.jsc_encode(e)
        ehat = self.receive(f, pattern, realization, avg_power)
        return LinkOutput(e, f, ehat, self.task_heads(ehat))

    def probabilities_from_f(self, f: Tensor, task_index: int) -> Tensor:
        return ad.softmax(self.head_logits(self.receive(f), task_index))


@dataclass
class LinkOutput:
    e: Tensor
    f: Tensor
    ehat: Tensor
    probs: list[Tensor]
