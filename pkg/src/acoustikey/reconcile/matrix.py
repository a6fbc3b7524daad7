"""Bernoulli sampling matrices: construction, coherence, greedy optimization."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class SamplingMatrix:
    """``M x N`` matrix with entries ``+-1/sqrt(M)``, stored as int8 signs."""

    signs: np.ndarray
    seed: int = 0
    history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        s = np.asarray(self.signs)
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError("signs must be a non-empty 2-d array")
        if not np.all(np.abs(s) == 1):
            raise ValueError("sampling matrix entries must be +-1")
        s = s.astype(np.int8)
        s.setflags(write=False)
        object.__setattr__(self, "signs", s)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SamplingMatrix):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(self.signs, other.signs)

    def __hash__(self) -> int:
        return hash((self.seed, self.matrix_id))

    @property
    def m_rows(self) -> int:
        return int(self.signs.shape[0])

    @property
    def n_cols(self) -> int:
        return int(self.signs.shape[1])

    @property
    def entries(self) -> np.ndarray:
        return self.signs / np.sqrt(self.m_rows)

    @property
    def coherence(self) -> float:
        return mutual_coherence(self)

    @property
    def matrix_id(self) -> str:
        """Content digest; two matrices with equal signs share an id."""
        h = hashlib.sha256(np.asarray(self.signs.shape, ">u4").tobytes() + self.signs.tobytes())
        return h.hexdigest()[:32]


def random_bernoulli(m_rows: int, n_cols: int, rng_seed: int) -> SamplingMatrix:
    if m_rows < 1 or n_cols < 1:
        raise ValueError("matrix dimensions must be positive")
    rng = np.random.default_rng(rng_seed)
    return SamplingMatrix(rng.choice(np.array([-1, 1], np.int8), size=(m_rows, n_cols)), rng_seed)


def _abs_gram(cols: np.ndarray) -> np.ndarray:
    c = cols.astype(float)
    norms = np.linalg.norm(c, axis=0)
    if np.any(norms == 0):
        raise ValueError("zero column")
    g = np.abs(c.T @ c) / np.outer(norms, norms)
    np.fill_diagonal(g, 0.0)
    return g


def mutual_coherence(a) -> float:
    """Largest absolute normalized inner product between distinct columns."""
    mat = a.signs if isinstance(a, SamplingMatrix) else np.asarray(a, dtype=float)
    if mat.ndim != 2 or mat.shape[1] < 2:
        raise ValueError("need at least two columns")
    return float(np.max(_abs_gram(mat)))


def optimize_matrix(search_space_size: int, m_rows: int, n_cols: int, rng_seed: int) -> SamplingMatrix:
    """Greedy low-coherence column selection from a random candidate pool.

    Start from the least coherent pair in the pool, then repeatedly add the
    candidate whose worst coherence against the chosen set is smallest.
    Ties go to the lowest candidate index.  ``history`` records the running
    coherence after each addition.
    """
    if n_cols < 2:
        raise ValueError("need at least two columns")
    if search_space_size < n_cols + 2:
        raise ValueError("search space must hold at least n_cols + 2 candidates")
    rng = np.random.default_rng(rng_seed)
    pool = rng.choice(np.array([-1, 1], np.int8), size=(m_rows, search_space_size))
    g = _abs_gram(pool)
    np.fill_diagonal(g, np.inf)
    i, j = np.unravel_index(int(np.argmin(g)), g.shape)
    chosen = [int(min(i, j)), int(max(i, j))]
    worst = np.maximum(g[chosen[0]], g[chosen[1]])
    available = np.ones(search_space_size, dtype=bool)
    available[chosen] = False
    history = [float(g[i, j])]
    while len(chosen) < n_cols:
        if not available.any():
            raise ValueError("search space exhausted")
        cand = np.where(available, worst, np.inf)
        k = int(np.argmin(cand))
        history.append(max(history[-1], float(cand[k])))
        chosen.append(k)
        available[k] = False
        worst = np.maximum(worst, g[k])
    return SamplingMatrix(pool[:, chosen], rng_seed, tuple(history))
