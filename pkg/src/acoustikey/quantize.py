"""Windowed multi-level quantization with guard bands and index agreement.

Each non-overlapping window of ``window_size`` samples is standardized and
mapped through the Gaussian CDF, so the ``2**n`` levels are equiprobable
slices of the window's fitted distribution.  A sample survives when it
falls in the ``1 - guard_ratio`` share of its level's mass that lies
farthest from any neighbouring level: middle levels keep a central band,
the two outer levels keep their extreme tails.  The expected dropped
fraction is therefore exactly ``guard_ratio`` and the levels stay
equiprobable after dropping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .bits import BitString, as_bits, gray_bits


@dataclass(frozen=True)
class QuantizerConfig:
    window_size: int = 20
    bits_per_sample: int = 2
    guard_ratio: float = 0.9

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")
        if self.bits_per_sample < 1:
            raise ValueError("bits_per_sample must be >= 1")
        if not 0.0 <= self.guard_ratio <= 1.0:
            raise ValueError("guard_ratio must lie in [0, 1]")

    @property
    def levels(self) -> int:
        return 2**self.bits_per_sample


@dataclass(frozen=True)
class QuantizedBlock:
    bits: BitString
    kept_indices: tuple
    levels: tuple = ()
    bits_per_sample: int = 2

    def __post_init__(self):
        idx = tuple(int(i) for i in self.kept_indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("kept_indices must be strictly increasing")
        if len(self.bits) != self.bits_per_sample * len(idx):
            raise ValueError("bit count does not match kept indices")
        if not isinstance(self.bits, BitString):
            object.__setattr__(self, "bits", BitString(self.bits))
        object.__setattr__(self, "kept_indices", idx)
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))

    def __len__(self) -> int:
        return len(self.kept_indices)


def level_positions(samples, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Level index and within-level position in [0, 1) for each sample.

    A 2-d input is treated as one window per row.
    """
    x = np.asarray(samples, dtype=float)
    mean = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.nan_to_num(ndtr((x - mean) / sd), nan=0.5)
    scaled = np.clip(u * levels, 0.0, np.nextafter(levels, 0))
    level = np.floor(scaled).astype(np.int64)
    return level, scaled - level


def keep_mask(level: np.ndarray, pos: np.ndarray, levels: int, guard_ratio: float) -> np.ndarray:
    keep = 1.0 - guard_ratio
    if keep >= 1.0:
        return np.ones(level.shape, dtype=bool)
    mid = np.abs(pos - 0.5) <= keep / 2
    low_edge = pos <= keep
    high_edge = pos >= 1.0 - keep
    if levels == 1:
        return mid
    out = np.where(level == 0, low_edge, np.where(level == levels - 1, high_edge, mid))
    return out & (keep > 0)


def quantize_window(samples, cfg: QuantizerConfig = QuantizerConfig()) -> QuantizedBlock:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size != cfg.window_size:
        raise ValueError(f"expected {cfg.window_size} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    n = cfg.bits_per_sample
    if np.ptp(x) == 0:
        return QuantizedBlock(BitString(np.zeros(0, np.uint8)), (), (), n)
    level, pos = level_positions(x, cfg.levels)
    kept = np.flatnonzero(keep_mask(level, pos, cfg.levels, cfg.guard_ratio))
    return QuantizedBlock(BitString(gray_bits(level[kept], n)), tuple(kept.tolist()),
                          tuple(level[kept].tolist()), n)


def quantize_windows(values, cfg: QuantizerConfig = QuantizerConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized core: ``(levels, kept)`` arrays of shape ``(n_windows, window_size)``.

    A trailing partial window is discarded; constant windows keep nothing.
    """
    x = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    w = cfg.window_size
    mat = x[: x.size // w * w].reshape(-1, w)
    level, pos = level_positions(mat, cfg.levels)
    kept = keep_mask(level, pos, cfg.levels, cfg.guard_ratio)
    kept &= (np.ptp(mat, axis=1) > 0)[:, None]
    return level, kept


def quantize_stream(values, cfg: QuantizerConfig = QuantizerConfig()) -> list[QuantizedBlock]:
    level, kept = quantize_windows(values, cfg)
    n = cfg.bits_per_sample
    out = []
    for lv, k in zip(level, kept):
        idx = np.flatnonzero(k)
        out.append(QuantizedBlock(BitString(gray_bits(lv[idx], n)), tuple(idx.tolist()),
                                  tuple(lv[idx].tolist()), n))
    return out


def _check_indices(idx, window_size: int | None = None) -> np.ndarray:
    arr = np.asarray(list(idx), dtype=np.int64)
    if arr.ndim != 1 or (arr.size and (arr.min() < 0 or np.any(np.diff(arr) <= 0))):
        raise ValueError("index set must be strictly increasing non-negative integers")
    if window_size is not None and arr.size and arr.max() >= window_size:
        raise ValueError("index outside the window")
    return arr


def agree_indices(mine: QuantizedBlock, theirs_indices, window_size: int | None = None) -> BitString:
    """Bits of ``mine`` at the indices both sides kept, in index order."""
    theirs = _check_indices(theirs_indices, window_size)
    own = _check_indices(mine.kept_indices, window_size)
    n = mine.bits_per_sample
    pos = np.flatnonzero(np.isin(own, theirs))
    bits = as_bits(mine.bits).reshape(-1, n)[pos].ravel() if own.size else np.zeros(0, np.uint8)
    return BitString(bits, "agreed")


def agree_levels(mine: QuantizedBlock, theirs_indices) -> np.ndarray:
    """Level values at the common indices (symbol-level view of agree_indices)."""
    own = np.asarray(mine.kept_indices, dtype=np.int64)
    mask = np.isin(own, np.asarray(list(theirs_indices), dtype=np.int64))
    return np.asarray(mine.levels, dtype=np.int64)[mask]


def stream_agreement(alice_values, bob_values, cfg: QuantizerConfig = QuantizerConfig()):
    """Quantize two streams, exchange indices, and return the agreed material.

    Returns ``(bits_a, bits_b, levels_a, levels_b)`` as flat arrays in stream
    order.  Equivalent to ``agree_indices`` applied window by window.
    """
    la, ka = quantize_windows(alice_values, cfg)
    lb, kb = quantize_windows(bob_values, cfg)
    n = min(la.shape[0], lb.shape[0])
    common = ka[:n] & kb[:n]
    lev_a, lev_b = la[:n][common], lb[:n][common]
    nb = cfg.bits_per_sample
    return gray_bits(lev_a, nb), gray_bits(lev_b, nb), lev_a, lev_b
