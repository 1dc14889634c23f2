"""Average power control, block Rician fading with AWGN, zero-forcing equalization
and the SNR-to-feature-budget mapping.

Complex vectors travel as interleaved real rows ``[re0, im0, re1, im1, ...]`` so
the autodiff core stays real-valued. One row is one transmission slot of a
single sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DeepFadeError, DegenerateInputError, ShapeError

DEEP_FADE_THRESHOLD = 1e-9


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 0.0
    rician_factor: float = 2.0
    avg_power: float = 1.0
    slot_duration: float = 1.0
    bandwidth: float = 6400.0
    bits_per_feature: int = 64

    def __post_init__(self):
        if self.avg_power <= 0:
            raise ConfigError("avg_power must be > 0")
        if self.rician_factor < 0:
            raise ConfigError("rician_factor must be >= 0")
        if self.slot_duration <= 0 or self.bandwidth <= 0:
            raise ConfigError("slot_duration and bandwidth must be > 0")
        if int(self.bits_per_feature) != self.bits_per_feature or self.bits_per_feature < 1:
            raise ConfigError("bits_per_feature must be a positive integer")

    @property
    def time_bandwidth(self) -> float:
        return self.slot_duration * self.bandwidth


@dataclass(frozen=True)
class ChannelRealization:
    """Fading coefficient(s) and interleaved noise for one or more slots.

    ``h`` is a complex scalar (one slot) or one complex value per row.
    """

    h: complex | np.ndarray
    noise: np.ndarray
    seed: object = None


def to_interleaved(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def to_complex(x) -> np.ndarray:
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.shape[-1] % 2:
        raise ShapeError(f"interleaved width must be even, got {x.shape[-1]}")
    return x[..., 0::2] + 1j * x[..., 1::2]


def _rows(z) -> Tensor:
    z = ad.as_tensor(z)
    if z.data.ndim == 1 and not z.requires_grad:
        z = Tensor(z.data[None, :])
    if z.data.ndim != 2 or z.shape[1] % 2:
        raise ShapeError(f"expected interleaved rows [batch, 2B], got {z.shape}")
    return z


def power_normalize(zt, avg_power: float) -> Tensor:
    """Scale each row to squared norm ``P * B`` where ``B`` is its complex length."""
    zt = _rows(zt)
    if zt.shape[1] == 0:
        raise ContractError("cannot normalize an empty transmission (B = 0)")
    if np.any(np.sqrt((zt.data * zt.data).sum(axis=1)) == 0):
        raise DegenerateInputError("cannot power-normalize a zero vector")
    b = zt.shape[1] // 2
    return ad.mul(ad.mul(zt, ad.reciprocal(ad.norm(zt, axis=1))), math.sqrt(avg_power * b))


def sample_rician(r: float, seed) -> complex:
    """Draw h ~ CN(sqrt(r/(r+1)), 1/(r+1)) deterministically from ``seed``."""
    return complex(sample_rician_many(r, 1, seed)[0])


def sample_rician_many(r: float, n: int, seed) -> np.ndarray:
    if r < 0:
        raise ContractError("Rician factor must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    los = math.sqrt(r / (r + 1))
    scale = math.sqrt(1.0 / (2 * (r + 1)))
    w = rng.normal(0.0, scale, size=(n, 2))
    return los + w[:, 0] + 1j * w[:, 1]


def noise_sigma(snr_db: float, avg_power: float = 1.0) -> float:
    """Total complex noise variance for a given per-symbol SNR."""
    if avg_power <= 0:
        raise ContractError("avg_power must be > 0")
    return avg_power / 10 ** (snr_db / 10)


def sample_noise(shape: tuple[int, int], snr_db: float, avg_power: float, seed) -> np.ndarray:
    """Interleaved AWGN with variance sigma^2/2 per real component."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    std = math.sqrt(noise_sigma(snr_db, avg_power) / 2)
    return rng.normal(0.0, std, size=shape)


def draw_realization(rows: int, b: int, cfg: ChannelConfig, seed, per_row: bool = False) -> ChannelRealization:
    """Block fading: one h for all ``rows`` (or one per row) plus fresh noise."""
    rng = np.random.default_rng(seed)
    h = sample_rician_many(cfg.rician_factor, rows if per_row else 1, rng)
    noise = sample_noise((rows, 2 * b), cfg.snr_db, cfg.avg_power, rng)
    return ChannelRealization(h=h if per_row else complex(h[0]), noise=noise, seed=seed)


def transmit(z, realization: ChannelRealization) -> Tensor:
    """ẑ = h·z + n, differentiable in z with h and n held fixed."""
    z = _rows(z)
    noise = np.asarray(realization.noise, dtype=np.float64).reshape(z.shape[0], -1)
    if noise.shape != z.shape:
        raise ShapeError(f"noise shape {noise.shape} does not match signal {z.shape}")
    return ad.add(ad.complex_scale(z, realization.h), noise)


def equalize(zhat, h) -> Tensor:
    """Zero-forcing with perfect CSI: divide by h."""
    h = np.asarray(h, dtype=np.complex128)
    if np.any(np.abs(h) <= DEEP_FADE_THRESHOLD):
        raise DeepFadeError(f"|h| <= {DEEP_FADE_THRESHOLD}: deep fade")
    return ad.complex_scale(_rows(zhat), 1.0 / h)


def feature_budget(cfg: ChannelConfig, n_features: int, snr_db: float | None = None) -> int:
    """Number of complex features that fit in one slot, capped at ``n_features``."""
    if n_features < 1:
        raise ContractError("L must be >= 1")
    snr = cfg.snr_db if snr_db is None else snr_db
    bits = cfg.time_bandwidth * math.log2(1 + 10 ** (snr / 10))
    return max(0, min(int(math.floor(bits / cfg.bits_per_feature)), n_features))


def shared_budget(cfg: ChannelConfig, n_features: int, snr_db: float, n_users: int, index: int) -> int:
    """Share of one slot's feature budget for pipeline ``index`` of ``n_users`` parallel pipelines.

    The uncapped slot budget floor(V / bits) is split as evenly as possible
    (earlier pipelines take the remainder), then each share is capped at
    ``n_features``. With one user this equals :func:`feature_budget`.
    """
    if not 0 <= index < n_users:
        raise ContractError(f"pipeline index {index} outside [0, {n_users})")
    bits = cfg.time_bandwidth * math.log2(1 + 10 ** (snr_db / 10))
    total = max(0, int(math.floor(bits / cfg.bits_per_feature)))
    share = total // n_users + (1 if index < total % n_users else 0)
    return min(share, n_features)
