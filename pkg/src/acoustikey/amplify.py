"""KLT decorrelation and Toeplitz universal hashing of reconciled key blocks.

Bits enter the eigen-analysis as +-1 values.  The basis is a public
parameter trained offline, so both endpoints project identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .bits import BitString, as_bits


@dataclass(frozen=True)
class KltConfig:
    block_len: int = 128
    n_eigenvectors: int = 80
    n_training_blocks: int = 256

    def __post_init__(self):
        if not 1 <= self.n_eigenvectors <= self.block_len:
            raise ValueError("n_eigenvectors must lie in [1, block_len]")
        if self.n_training_blocks < self.block_len:
            raise ValueError("need at least block_len training blocks")


@dataclass(frozen=True)
class KltBasis:
    phi: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        ev = np.asarray(self.eigenvalues, dtype=float).ravel()
        if phi.ndim != 2 or phi.shape[1] != ev.size:
            raise ValueError("phi must be L x S with S eigenvalues")
        if np.any(np.diff(ev) > 1e-12 * max(1.0, float(np.abs(ev).max(initial=0)))):
            raise ValueError("eigenvalues must be non-increasing")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def block_len(self) -> int:
        return int(self.phi.shape[0])

    @property
    def n_eigenvectors(self) -> int:
        return int(self.phi.shape[1])

    def truncated(self, s: int) -> "KltBasis":
        return KltBasis(self.phi[:, :s], self.eigenvalues[:s])


def _signed(bits) -> np.ndarray:
    return 2.0 * as_bits(bits).astype(float) - 1.0


def estimate_autocorrelation(blocks) -> np.ndarray:
    """``R = mean(k k^T)`` over blocks mapped to +-1."""
    mat = np.array([_signed(b) for b in blocks])
    if mat.ndim != 2 or mat.shape[0] < 2:
        raise ValueError("need at least two equal-length blocks")
    r = mat.T @ mat / mat.shape[0]
    return (r + r.T) / 2


def klt_basis(r, s: int) -> KltBasis:
    """Top-``s`` eigenpairs, descending; each eigenvector's first nonzero entry is positive."""
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("R must be square")
    if not np.allclose(r, r.T, atol=1e-10):
        raise ValueError("R must be symmetric")
    if not 1 <= s <= r.shape[0]:
        raise ValueError("s out of range")
    vals, vecs = eigh(r)
    order = np.argsort(-vals, kind="stable")[:s]
    vals, vecs = vals[order], vecs[:, order]
    for j in range(s):
        nz = np.flatnonzero(np.abs(vecs[:, j]) > 1e-12)
        if nz.size and vecs[nz[0], j] < 0:
            vecs[:, j] = -vecs[:, j]
    return KltBasis(vecs, np.maximum(vals, 0.0))


def train_basis(blocks, cfg: KltConfig = KltConfig()) -> KltBasis:
    blocks = list(blocks)
    if len(blocks) < cfg.n_training_blocks:
        raise ValueError(f"need {cfg.n_training_blocks} training blocks, got {len(blocks)}")
    return klt_basis(estimate_autocorrelation(blocks), cfg.n_eigenvectors)


def project(block, basis: KltBasis) -> np.ndarray:
    k = _signed(block)
    if k.size != basis.block_len:
        raise ValueError(f"block must be {basis.block_len} bits, got {k.size}")
    return basis.phi.T @ k


def decorrelate(block, basis: KltBasis) -> BitString:
    """Sign of each KLT coefficient; ties (exact zero) map to 1."""
    return BitString((project(block, basis) >= 0).astype(np.uint8), "decorrelated")


def toeplitz_seed_bits(n_in: int, out_len: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, n_in, out_len]).integers(0, 2, n_in + out_len - 1, dtype=np.uint8)


def universal_hash(bits, out_len_bits: int, seed: int = 0x70E1, margin: int = 64) -> BitString:
    """Toeplitz-matrix hash over GF(2) with a public seed.

    Row ``i`` of the matrix is the seed window starting at ``out_len - 1 - i``.
    """
    x = as_bits(bits)
    if out_len_bits < 1:
        raise ValueError("out_len_bits must be positive")
    if x.size < out_len_bits + margin:
        raise ValueError(f"need at least {out_len_bits + margin} input bits, got {x.size}")
    t = toeplitz_seed_bits(x.size, out_len_bits, seed)
    idx = (out_len_bits - 1 - np.arange(out_len_bits))[:, None] + np.arange(x.size)[None, :]
    out = (t[idx].astype(np.int64) @ x.astype(np.int64)) & 1
    return BitString(out.astype(np.uint8), "final")


def leakage_budget(input_bits: int, revealed_values: int, bits_per_value: float = 1.0,
                   margin: int = 64) -> int:
    """Largest output length allowed after public reconciliation messages."""
    return max(0, int(np.floor(input_bits - revealed_values * bits_per_value - margin)))


def correlated_blocks(n_blocks: int, block_len: int = 128, latent_dim: int = 80,
                      seed: int = 0, noise: float = 0.05) -> list[np.ndarray]:
    """Synthetic sign-bit blocks driven by ``latent_dim`` smooth Gaussian factors."""
    rng = np.random.default_rng(seed)
    t = np.arange(block_len)
    centers = np.linspace(0, block_len - 1, latent_dim)
    width = block_len / latent_dim
    mix = np.exp(-0.5 * ((t[:, None] - centers[None, :]) / width) ** 2)
    z = rng.normal(size=(n_blocks, latent_dim)) @ mix.T + noise * rng.normal(size=(n_blocks, block_len))
    return list((z >= 0).astype(np.uint8))


def bit_entropy(bits) -> float:
    """Mean binary entropy of the per-position bit frequencies, shape ``(n, width)``."""
    mat = np.atleast_2d(np.asarray(bits, dtype=float))
    p = np.clip(mat.mean(axis=0), 1e-12, 1 - 1e-12)
    return float(np.mean(-p * np.log2(p) - (1 - p) * np.log2(1 - p)))


def decorrelated_entropy(bits) -> float:
    """Per-bit entropy with a Gaussian multi-information correction.

    ``mean h(p_i) + log2(det C) / (2 width)`` where ``C`` is the bit
    correlation matrix; equals the marginal entropy for uncorrelated bits
    and drops as bits become linearly redundant.
    """
    mat = np.atleast_2d(np.asarray(bits, dtype=float))
    h = bit_entropy(mat)
    if mat.shape[1] < 2:
        return h
    c = np.corrcoef(mat, rowvar=False)
    c = np.nan_to_num(c, nan=0.0)
    np.fill_diagonal(c, 1.0)
    sign, logdet = np.linalg.slogdet(c)
    if sign <= 0:
        return 0.0
    return float(max(h + logdet / np.log(2) / (2 * mat.shape[1]), 0.0))


def mean_offdiag_correlation(bits) -> float:
    mat = np.atleast_2d(np.asarray(bits, dtype=float))
    c = np.nan_to_num(np.corrcoef(mat, rowvar=False))
    off = c[~np.eye(c.shape[0], dtype=bool)]
    return float(np.mean(np.abs(off)))


def redundant_blocks(n_blocks: int, block_len: int = 128, independent: int = 80,
                     flip_prob: float = 0.02, seed: int = 0) -> list[np.ndarray]:
    """Blocks of ``independent`` fair bits plus noisy copies filling the rest.

    Copy sources follow a fixed seeded map; each copy flips with
    ``flip_prob``.  Mimics the duplicated bits multi-level quantization can
    emit.
    """
    if not 1 <= independent <= block_len:
        raise ValueError("independent must lie in [1, block_len]")
    rng = np.random.default_rng(seed)
    layout = np.random.default_rng([seed, 0x1A]).permutation(block_len)
    sources = np.random.default_rng([seed, 0x1B]).integers(0, independent, block_len - independent)
    base = rng.integers(0, 2, size=(n_blocks, independent), dtype=np.uint8)
    flips = (rng.random((n_blocks, block_len - independent)) < flip_prob).astype(np.uint8)
    full = np.concatenate([base, base[:, sources] ^ flips], axis=1)
    return list(full[:, layout])
