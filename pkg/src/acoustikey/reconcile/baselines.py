"""Reference reconcilers: BCH(15,7) syndrome exchange and interactive parity search."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..bits import as_bits

BCH_N, BCH_K = 15, 7
BCH_GENERATOR = 0b111010001  # x^8 + x^7 + x^6 + x^4 + 1


@dataclass
class BaselineResult:
    key: np.ndarray
    leaked_bits: int
    rounds: int


def _poly_mod(value: int, gen: int = BCH_GENERATOR) -> int:
    glen = gen.bit_length()
    while value.bit_length() >= glen:
        value ^= gen << (value.bit_length() - glen)
    return value


def _block_int(block: np.ndarray) -> int:
    return int("".join(map(str, block.tolist())), 2)


def bch_syndrome(block) -> int:
    b = as_bits(block)
    if b.size != BCH_N:
        raise ValueError("BCH block must be 15 bits")
    return _poly_mod(_block_int(b))


def _syndrome_table() -> dict:
    table = {0: 0}
    for w in (1, 2):
        for pos in combinations(range(BCH_N), w):
            e = sum(1 << p for p in pos)
            table[_poly_mod(e)] = e
    return table


_TABLE = _syndrome_table()


def bch_reconcile(mine, theirs) -> BaselineResult:
    """Correct ``mine`` toward ``theirs`` from ``theirs``' per-block syndromes.

    Blocks with more than two errors are left as decoded (possibly wrong).
    A trailing partial block is zero-padded for the syndrome.
    """
    a, b = as_bits(mine).copy(), as_bits(theirs)
    if a.size != b.size:
        raise ValueError("keys differ in length")
    pad = (-a.size) % BCH_N
    a_p = np.concatenate([a, np.zeros(pad, np.uint8)])
    b_p = np.concatenate([b, np.zeros(pad, np.uint8)])
    for i in range(0, a_p.size, BCH_N):
        syn = bch_syndrome(a_p[i:i + BCH_N]) ^ bch_syndrome(b_p[i:i + BCH_N])
        err = _TABLE.get(syn, 0)
        flips = np.array([(err >> (BCH_N - 1 - k)) & 1 for k in range(BCH_N)], np.uint8)
        a_p[i:i + BCH_N] ^= flips
    return BaselineResult(a_p[:a.size], (a_p.size // BCH_N) * (BCH_N - BCH_K), 1)


def parity_reconcile(mine, theirs, block_size: int = 8, passes: int = 4, seed: int = 0) -> BaselineResult:
    """Interactive binary-search parity correction with public shuffles between passes."""
    a, b = as_bits(mine).copy(), as_bits(theirs)
    if a.size != b.size:
        raise ValueError("keys differ in length")
    rng = np.random.default_rng(seed)
    leaked, rounds = 0, 0
    order = np.arange(a.size)
    for p in range(passes):
        if p:
            order = rng.permutation(a.size)
        size = block_size * 2**p
        for start in range(0, a.size, size):
            idx = order[start:start + size]
            leaked += 1
            rounds += 1
            while a[idx].sum() % 2 != b[idx].sum() % 2:
                if idx.size == 1:
                    a[idx[0]] ^= 1
                    break
                half = idx[: idx.size // 2]
                leaked += 1
                rounds += 1
                idx = half if a[half].sum() % 2 != b[half].sum() % 2 else idx[idx.size // 2:]
    return BaselineResult(a, leaked, rounds)
