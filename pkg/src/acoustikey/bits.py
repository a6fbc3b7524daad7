"""Bit-string helpers shared by every pipeline stage.

Key material is carried around as ``numpy.uint8`` arrays of 0/1 values.
:class:`BitString` wraps such an array with a stage tag for transcripts and
session outcomes; the numerical modules work on the bare arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STAGES = ("quantized", "agreed", "reconciled", "decorrelated", "final")


def as_bits(bits, name: str = "bits") -> np.ndarray:
    """Coerce ``bits`` to a 1-d uint8 array, rejecting anything but 0/1."""
    if isinstance(bits, BitString):
        return bits.bits
    if isinstance(bits, str):
        arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
    else:
        arr = np.asarray(bits)
    arr = arr.astype(np.uint8, copy=False).ravel()
    if arr.size and arr.max() > 1:
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr


def pack(bits) -> bytes:
    """Pack bits MSB-first into bytes (zero padded to a byte boundary)."""
    return np.packbits(as_bits(bits)).tobytes()


def unpack(data: bytes, n_bits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:n_bits]


def to_str(bits) -> str:
    return "".join("1" if b else "0" for b in as_bits(bits))


def gray_code(level: int | np.ndarray) -> int | np.ndarray:
    return level ^ (level >> 1)


def gray_bits(levels: np.ndarray, n_bits: int) -> np.ndarray:
    """Gray-code each level into ``n_bits`` bits, MSB first, flattened."""
    codes = gray_code(np.asarray(levels, dtype=np.int64))
    shifts = np.arange(n_bits - 1, -1, -1)
    return ((codes[:, None] >> shifts) & 1).astype(np.uint8).ravel()


@dataclass(frozen=True)
class BitString:
    """Bits plus the pipeline stage that produced them."""

    bits: np.ndarray
    stage: str = "quantized"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        object.__setattr__(self, "bits", as_bits(self.bits).copy())

    def __len__(self) -> int:
        return int(self.bits.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return self.bits.size == other.bits.size and bool(np.all(self.bits == other.bits))

    def __hash__(self) -> int:
        return hash((self.stage, self.to_bytes(), len(self)))

    def to_bytes(self) -> bytes:
        return pack(self.bits)

    def hex(self) -> str:
        return self.to_bytes().hex()

    def __str__(self) -> str:
        return to_str(self.bits)
