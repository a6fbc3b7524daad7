"""Sequence-preserving Bloom projection of 128-bit key segments.

The filter is split into one block per segment position.  Element ``i``
(position ``i`` with bit value ``b``) is serialized as a 16-bit big-endian
position followed by one value byte and hashed by two keyed 64-bit BLAKE2b
instances into block ``i`` only.  Position ``i`` therefore contributes the
same block pattern to two filters exactly when the two segments agree there,
and the mismatch count is the number of differing blocks.  That count is
exact for every pair of segments as long as no position is *degenerate*,
meaning its 0-pattern and 1-pattern coincide; the shipped seeds are checked
against that.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bits import BitString, as_bits

DEFAULT_SEED_A = 0x9E3779B97F4A7C15
DEFAULT_SEED_B = 0xC2B2AE3D27D4EB4F


@dataclass(frozen=True)
class BloomConfig:
    filter_bits: int = 4096
    n_hashes: int = 2
    hash_seed_a: int = DEFAULT_SEED_A
    hash_seed_b: int = DEFAULT_SEED_B
    segment_bits: int = 128

    def __post_init__(self):
        if self.n_hashes != 2:
            raise ValueError("exactly two hash functions are supported")
        if self.segment_bits < 1 or self.segment_bits > 0xFFFF:
            raise ValueError("segment_bits out of range")
        if self.filter_bits < 16 * self.segment_bits:
            raise ValueError("filter_bits must be at least 16x segment_bits")
        if self.filter_bits % self.segment_bits:
            raise ValueError("filter_bits must be a multiple of segment_bits")
        for s in (self.hash_seed_a, self.hash_seed_b):
            if not 0 <= s < 2**64:
                raise ValueError("hash seeds must be 64-bit unsigned integers")

    @property
    def block_bits(self) -> int:
        return self.filter_bits // self.segment_bits


@dataclass(frozen=True)
class EncodedKey:
    filter: np.ndarray
    source_len: int

    def __post_init__(self):
        f = as_bits(self.filter, "filter")
        object.__setattr__(self, "filter", f)

    @property
    def popcount(self) -> int:
        return int(self.filter.sum())


def element_bytes(position: int, value: int) -> bytes:
    return position.to_bytes(2, "big") + bytes([value & 1])


def _hash64(seed: int, data: bytes) -> int:
    h = hashlib.blake2b(data, digest_size=8, key=seed.to_bytes(8, "big"))
    return int.from_bytes(h.digest(), "big")


@lru_cache(maxsize=16)
def _tables(cfg: BloomConfig) -> tuple[np.ndarray, np.ndarray]:
    """Hash values and in-block positions, both shaped ``(segment_bits, 2 values, 2 hashes)``."""
    n, w = cfg.segment_bits, cfg.block_bits
    raw = np.zeros((n, 2, 2), dtype=np.uint64)
    for i in range(n):
        for v in (0, 1):
            e = element_bytes(i, v)
            raw[i, v, 0] = _hash64(cfg.hash_seed_a, e)
            raw[i, v, 1] = _hash64(cfg.hash_seed_b, e)
    offsets = (raw % np.uint64(w)).astype(np.int64) + (np.arange(n) * w)[:, None, None]
    raw.setflags(write=False)
    offsets.setflags(write=False)
    return raw, offsets


def degenerate_positions(cfg: BloomConfig = BloomConfig()) -> list[int]:
    """Positions whose 0- and 1-element light the same set of filter bits."""
    _, off = _tables(cfg)
    return [i for i in range(cfg.segment_bits) if set(off[i, 0]) == set(off[i, 1])]


def collision_free(cfg: BloomConfig = BloomConfig()) -> bool:
    """Certificate that mismatch_count is exact for every segment pair under ``cfg``."""
    return not degenerate_positions(cfg)


def _check_segment(segment, cfg: BloomConfig) -> np.ndarray:
    bits = as_bits(segment, "segment")
    if bits.size != cfg.segment_bits:
        raise ValueError(f"segment must be {cfg.segment_bits} bits, got {bits.size}")
    return bits


def encode(segment, cfg: BloomConfig = BloomConfig()) -> EncodedKey:
    bits = _check_segment(segment, cfg)
    _, off = _tables(cfg)
    filt = np.zeros(cfg.filter_bits, dtype=np.uint8)
    filt[off[np.arange(bits.size), bits].ravel()] = 1
    return EncodedKey(filt, int(bits.size))


def mismatch_count(a: EncodedKey, b: EncodedKey) -> int:
    """Number of positions whose block patterns differ."""
    if a.filter.size != b.filter.size:
        raise ValueError("filters differ in length")
    if a.source_len != b.source_len or a.filter.size % a.source_len:
        raise ValueError("encodings come from different configurations")
    blocks = (a.filter != b.filter).reshape(a.source_len, -1)
    return int(blocks.any(axis=1).sum())


def symmetric_difference_estimate(a: EncodedKey, b: EncodedKey, n_hashes: int = 2) -> float:
    """Popcount of the symmetric difference over ``2k``; a collision-biased estimate."""
    if a.filter.size != b.filter.size:
        raise ValueError("filters differ in length")
    return float(np.count_nonzero(a.filter != b.filter)) / (2 * n_hashes)


def position_mask(cfg: BloomConfig = BloomConfig()) -> np.ndarray:
    """Public per-position mask: 1 where the 1-element hashes below the 0-element."""
    raw, _ = _tables(cfg)
    return (raw[:, 1, 0] < raw[:, 0, 0]).astype(np.uint8)


def slot_key(segment, cfg: BloomConfig = BloomConfig()) -> BitString:
    """One slot per position: which of the position's two elements hashes lower.

    Equals the segment XOR a public mask, so slot disagreements coincide with
    segment disagreements and reconciliation can run on the slots.
    """
    bits = _check_segment(segment, cfg)
    return BitString(bits ^ position_mask(cfg), "agreed")
