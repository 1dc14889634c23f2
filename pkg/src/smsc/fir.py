"""Gradient-based feature importance ranking and scalable feature selection."""
from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError

POLICIES = ("fir", "random", "sequential", "full")


class SensitivityModel(Protocol):
    def encode_to_f(self, x: np.ndarray) -> np.ndarray: ...

    def probabilities_from_f(self, f: Tensor, task_index: int) -> Tensor: ...


@dataclass(frozen=True)
class SensitivityVector:
    values: np.ndarray
    task_id: int


@dataclass(frozen=True)
class ImportanceVector:
    values: np.ndarray
    weights: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SelectionPattern:
    indices: tuple[int, ...]
    policy: str

    def __post_init__(self):
        if list(self.indices) != sorted(set(self.indices)):
            raise ContractError("selection indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def columns(self) -> np.ndarray:
        """Interleaved real columns (2j, 2j+1) of each selected complex feature."""
        idx = np.asarray(self.indices, dtype=np.intp)
        return np.stack([2 * idx, 2 * idx + 1], axis=1).reshape(-1)


def task_sensitivity(model: SensitivityModel, batch: np.ndarray, task_index: int, signed: bool = False) -> SensitivityVector:
    """Average per-feature |d g_l / d f| over a calibration batch, l = predicted class.

    ``signed=True`` averages the raw gradients first and takes the magnitude
    afterwards, so opposing per-sample gradients cancel.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if len(batch) == 0:
        raise ContractError("empty calibration batch")
    with ad.no_grad():
        f0 = np.asarray(model.encode_to_f(batch), dtype=np.float64)
    if not np.all(np.isfinite(f0)):
        raise ContractError("model produced non-finite features; is it trained?")
    f = Tensor(f0, requires_grad=True, op="f")
    g = model.probabilities_from_f(f, task_index)
    if not np.all(np.isfinite(g.data)):
        raise ContractError("model produced non-finite probabilities; is it trained?")
    predicted = np.argmax(g.data, axis=1)
    # Rows are independent, so one backward of the summed picks yields per-row gradients.
    ad.backward(ad.sum(ad.take(g, np.arange(len(batch)), predicted)))
    grad = f.grad if f.grad is not None else np.zeros_like(f0)
    if signed:
        mean = grad.mean(axis=0)
        values = np.hypot(mean[0::2], mean[1::2])
    else:
        values = np.hypot(grad[:, 0::2], grad[:, 1::2]).mean(axis=0)
    return SensitivityVector(values=values, task_id=task_index)


def combine_importance(sensitivities: Sequence[SensitivityVector], weights: Sequence[float]) -> ImportanceVector:
    if len(sensitivities) != len(weights):
        raise ContractError(f"{len(sensitivities)} sensitivity vectors but {len(weights)} weights")
    if not sensitivities:
        raise ContractError("need at least one sensitivity vector")
    n = len(sensitivities[0].values)
    if any(len(s.values) != n for s in sensitivities):
        raise ShapeError("sensitivity vectors differ in length")
    s = np.zeros(n)
    for vec, w in zip(sensitivities, weights):
        s = s + w * np.asarray(vec.values, dtype=np.float64)
    return ImportanceVector(values=s, weights=tuple(float(w) for w in weights))


def _check_budget(b: int, n: int) -> None:
    if not 1 <= b <= n:
        raise ContractError(f"budget B={b} outside [1, {n}]")


def select_top_b(s: ImportanceVector | np.ndarray, b: int) -> SelectionPattern:
    values = np.asarray(s.values if isinstance(s, ImportanceVector) else s, dtype=np.float64)
    _check_budget(b, len(values))
    if not np.any(values):
        warnings.warn("importance vector is all zero; falling back to sequential selection", stacklevel=2)
        return select_sequential(b, len(values))
    order = np.argsort(-values, kind="stable")
    return SelectionPattern(tuple(sorted(int(i) for i in order[:b])), "fir")


def select_random(n: int, b: int, seed) -> SelectionPattern:
    _check_budget(b, n)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return SelectionPattern(tuple(sorted(int(i) for i in rng.choice(n, size=b, replace=False))), "random")


def select_sequential(b: int, n: int | None = None) -> SelectionPattern:
    _check_budget(b, b if n is None else n)
    return SelectionPattern(tuple(range(b)), "sequential")


def select_full(n: int) -> SelectionPattern:
    return SelectionPattern(tuple(range(n)), "full")


def apply_selection(f, pattern: SelectionPattern) -> Tensor:
    """Gather the selected complex features from interleaved rows ``[batch, 2L]``."""
    return ad.gather_cols(f, pattern.columns)


def scatter_received(z_eq, pattern: SelectionPattern, n: int) -> Tensor:
    """Zero-filled ``[batch, 2L]`` rows with received symbols at their original slots."""
    z_eq = ad.as_tensor(z_eq)
    if z_eq.data.ndim != 2 or z_eq.shape[1] != 2 * len(pattern):
        raise ShapeError(f"received rows {z_eq.shape} do not match a pattern of {len(pattern)} features")
    return ad.scatter_cols(z_eq, pattern.columns, 2 * n)


def save_importance(path, s: ImportanceVector) -> None:
    lines = [f"# L={len(s.values)}", "# weights=" + ",".join(repr(float(w)) for w in s.weights)]
    lines += [repr(float(v)) for v in s.values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_importance(path) -> ImportanceVector:
    header: dict[str, str] = {}
    values: list[float] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                header[key] = val
            else:
                values.append(float(line))
    if "L" not in header or int(header["L"]) != len(values):
        raise ContractError(f"{path}: header L does not match {len(values)} values")
    weights = tuple(float(w) for w in header.get("weights", "").split(",") if w)
    return ImportanceVector(np.array(values), weights)
