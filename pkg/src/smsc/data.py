"""Synthetic multi-attribute image dataset.

Every image is the sum of an identity prototype, a color prototype and a type
prototype plus pixel noise. Each identity owns a fixed (color, type) pair, so
attribute labels are a function of identity, as they are for real vehicles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SPLITS = ("train", "query", "gallery", "calibration")


@dataclass(frozen=True)
class DatasetConfig:
    num_identities: int = 16
    num_colors: int = 4
    num_types: int = 4
    views_per_identity: int = 40
    width: int = 16
    height: int = 16
    noise_std: float = 1.0
    identity_scale: float = 0.5
    query_views: int = 4
    gallery_views: int = 4
    calibration_views: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("num_identities", "num_colors", "num_types", "width", "height"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name} must be >= 2")
        if self.views_per_identity < 2:
            raise ConfigError("views_per_identity must be >= 2 (triplet mining needs two views)")
        if self.noise_std < 0 or self.identity_scale < 0:
            raise ConfigError("noise_std and identity_scale must be >= 0")
        if self.query_views < 1 or self.gallery_views < 1 or self.calibration_views < 0:
            raise ConfigError("need >= 1 query view and >= 1 gallery view per identity")
        if self.train_views < 2:
            raise ConfigError(
                f"views_per_identity={self.views_per_identity} leaves {self.train_views} training "
                "views per identity after query/gallery hold-out; need >= 2"
            )

    @property
    def train_views(self) -> int:
        return self.views_per_identity - self.query_views - self.gallery_views

    @property
    def input_dim(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class SyntheticSample:
    image: np.ndarray
    identity_label: int
    color_label: int
    type_label: int


@dataclass
class Split:
    x: np.ndarray
    ids: np.ndarray
    colors: np.ndarray
    types: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def labels(self, task: str) -> np.ndarray:
        return {"reid": self.ids, "color": self.colors, "type": self.types}[task]

    def subset(self, index) -> "Split":
        return Split(self.x[index], self.ids[index], self.colors[index], self.types[index])

    def samples(self, width: int, height: int):
        for i in range(len(self)):
            yield SyntheticSample(
                self.x[i].reshape(width, height), int(self.ids[i]), int(self.colors[i]), int(self.types[i])
            )


@dataclass
class Dataset:
    config: DatasetConfig
    color_of: np.ndarray
    type_of: np.ndarray
    splits: dict[str, Split] = field(default_factory=dict)

    def __getitem__(self, split: str) -> Split:
        return self.splits[split]

    @property
    def test(self) -> Split:
        """Query followed by gallery: the samples classification metrics run on."""
        q, g = self.splits["query"], self.splits["gallery"]
        return Split(
            np.concatenate([q.x, g.x]),
            np.concatenate([q.ids, g.ids]),
            np.concatenate([q.colors, g.colors]),
            np.concatenate([q.types, g.types]),
        )


def _balanced(n: int, classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.resize(np.arange(classes), n))


def generate_dataset(cfg: DatasetConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    d = cfg.input_dim
    ident = rng.normal(0.0, cfg.identity_scale, size=(cfg.num_identities, d))
    color = rng.normal(0.0, 1.0, size=(cfg.num_colors, d))
    kind = rng.normal(0.0, 1.0, size=(cfg.num_types, d))
    color_of = _balanced(cfg.num_identities, cfg.num_colors, rng)
    type_of = _balanced(cfg.num_identities, cfg.num_types, rng)

    def render(ids: np.ndarray) -> Split:
        clean = ident[ids] + color[color_of[ids]] + kind[type_of[ids]]
        noise = rng.normal(0.0, 1.0, size=clean.shape) * cfg.noise_std
        return Split(clean + noise, ids, color_of[ids], type_of[ids])

    per_view = np.arange(cfg.num_identities)
    counts = {
        "query": cfg.query_views,
        "gallery": cfg.gallery_views,
        "train": cfg.train_views,
        "calibration": cfg.calibration_views,
    }
    splits = {name: render(np.repeat(per_view, n)) for name, n in counts.items()}
    return Dataset(cfg, color_of, type_of, splits)


def pk_batches(ids: np.ndarray, p: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of P-identities x K-views index batches.

    An epoch has ``len(ids) // (p * k)`` batches; each draws ``p`` distinct
    identities and ``k`` distinct samples of each.
    """
    by_id = {int(i): np.flatnonzero(ids == i) for i in np.unique(ids)}
    pool = np.array(sorted(by_id))
    if len(pool) < p or min(len(v) for v in by_id.values()) < k:
        raise ValueError(f"cannot draw {p} identities x {k} views from this split")
    batches = []
    for _ in range(max(1, len(ids) // (p * k))):
        chosen = rng.choice(pool, size=p, replace=False)
        batches.append(np.concatenate([rng.choice(by_id[int(c)], size=k, replace=False) for c in chosen]))
    return batches
