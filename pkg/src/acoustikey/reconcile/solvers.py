"""Compressive reconciliation: measurement, sparse mismatch recovery, correction.

Bob publishes ``y_Bob = A K_Bob``; Alice forms ``y_A - y_B = A (K_A - K_B)``
and recovers the ternary mismatch vector by l1 minimization.  When Alice
passes her own key, every mismatch entry has a known sign (``+1`` where her
bit is 1, ``-1`` where it is 0), which turns the problem into a bounded
non-negative one.

The ``ternary`` solver exploits that ``y`` is an integer vector on the
wire: it accepts the rounded LP answer only when it reproduces ``y``
exactly, and otherwise searches binary mismatch patterns with a
node-limited branch and bound.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from ..bits import BitString, as_bits
from .matrix import SamplingMatrix


class RecoveryError(RuntimeError):
    """The solver did not converge; the caller should retry with fresh probes."""


SOLVERS = ("lp", "homotopy", "ternary")


@dataclass(frozen=True)
class ReconConfig:
    m_rows: int = 23
    epsilon: float = 1e-3
    round_threshold: float = 0.5
    solver: str = "lp"
    max_iter: int = 1000
    # node cap keeps the integer search deterministic; time cap is only a backstop
    milp_node_limit: int = 50
    milp_time_limit: float = 10.0

    def __post_init__(self):
        if self.m_rows < 1:
            raise ValueError("m_rows must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not 0 < self.round_threshold < 1:
            raise ValueError("round_threshold must lie in (0, 1)")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.milp_node_limit < 1:
            raise ValueError("milp_node_limit must be positive")


@dataclass(frozen=True)
class MismatchVector:
    delta: np.ndarray
    relaxed: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.delta).astype(np.int8).ravel()
        if d.size and np.max(np.abs(d)) > 1:
            raise ValueError("mismatch entries must be in {-1, 0, 1}")
        object.__setattr__(self, "delta", d)

    @property
    def sparsity(self) -> int:
        return int(np.count_nonzero(self.delta))

    def __len__(self) -> int:
        return int(self.delta.size)


def _key_vector(key, n: int) -> np.ndarray:
    bits = as_bits(key, "key")
    if bits.size != n:
        raise ValueError(f"key length {bits.size} does not match matrix width {n}")
    return bits.astype(float)


def compress_counts(a: SamplingMatrix, key) -> np.ndarray:
    """Integer measurement ``signs @ key``; the public payload on the wire."""
    return a.signs.astype(np.int64) @ _key_vector(key, a.n_cols).astype(np.int64)


def compress(a: SamplingMatrix, key) -> np.ndarray:
    return compress_counts(a, key) / np.sqrt(a.m_rows)


def _round(x: np.ndarray, threshold: float) -> np.ndarray:
    return (np.sign(x) * (np.abs(x) >= threshold)).astype(np.int8)


def recover_mismatch(a: SamplingMatrix, y_diff, cfg: ReconConfig = ReconConfig(), *,
                     reference_key=None, weights=None) -> MismatchVector:
    """Sparse ternary mismatch vector consistent with ``y_diff``.

    Solves ``min sum w_i |dx_i|`` subject to ``|dx_i| <= 1`` and
    ``||y_diff - A dx||_inf <= eps * ||y_diff||_2 / sqrt(M)`` (which implies
    the l2 residual bound), then rounds at ``round_threshold``.
    ``reference_key`` fixes the sign of each entry from the solver's own key.
    ``weights`` defaults to all ones.
    """
    y = np.asarray(y_diff, dtype=float).ravel()
    if y.size != a.m_rows:
        raise ValueError(f"y_diff has {y.size} entries, expected {a.m_rows}")
    n = a.n_cols
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.size != n or np.any(w <= 0):
        raise ValueError("weights must be positive, one per column")
    norm = float(np.linalg.norm(y))
    if norm == 0:
        return MismatchVector(np.zeros(n, np.int8), np.zeros(n))
    if cfg.solver == "ternary":
        lp = recover_mismatch(a, y, replace(cfg, solver="lp"), reference_key=reference_key, weights=w)
        counts = _integer_counts(a, y)
        if counts is None or consistent(a, counts, lp):
            return lp
        exact = integer_recover(a, counts, cfg, reference_key=reference_key, weights=w)
        return lp if exact is None else exact
    if cfg.solver == "homotopy":
        if reference_key is not None:
            raise ValueError("homotopy solver does not take sign information")
        x = homotopy_bpdn(a.entries / w, y, cfg.epsilon * norm, cfg.max_iter) / w
        return MismatchVector(_round(x, cfg.round_threshold), x)
    tol = cfg.epsilon * norm / np.sqrt(a.m_rows)
    A = a.entries
    if reference_key is not None:
        d = 2 * _key_vector(reference_key, n) - 1
        ad = A * d
        res = linprog(w, A_ub=np.vstack([ad, -ad]), b_ub=np.concatenate([y + tol, tol - y]),
                      bounds=(0, 1), method="highs", options={"maxiter": cfg.max_iter})
        if res.status != 0:
            raise RecoveryError(res.message)
        x = d * res.x
    else:
        ab = np.hstack([A, -A])
        res = linprog(np.concatenate([w, w]), A_ub=np.vstack([ab, -ab]),
                      b_ub=np.concatenate([y + tol, tol - y]), bounds=(0, 1),
                      method="highs", options={"maxiter": cfg.max_iter})
        if res.status != 0:
            raise RecoveryError(res.message)
        x = res.x[:n] - res.x[n:]
    return MismatchVector(_round(x, cfg.round_threshold), x)


def _integer_counts(a: SamplingMatrix, y: np.ndarray) -> np.ndarray | None:
    """Undo the ``1/sqrt(M)`` scaling; ``None`` when ``y`` is not an integer measurement."""
    counts = y * np.sqrt(a.m_rows)
    r = np.round(counts)
    return r.astype(np.int64) if np.allclose(counts, r, atol=1e-6) else None


def consistent(a: SamplingMatrix, counts, d: MismatchVector) -> bool:
    """True when ``d`` reproduces the integer measurement difference exactly."""
    return bool(np.array_equal(a.signs.astype(np.int64) @ d.delta.astype(np.int64),
                               np.asarray(counts, dtype=np.int64)))


def integer_recover(a: SamplingMatrix, counts, cfg: ReconConfig = ReconConfig(), *,
                    reference_key=None, weights=None) -> MismatchVector | None:
    """Minimum-weight ternary ``d`` with ``signs @ d == counts``, by branch and bound.

    Returns ``None`` when the node budget runs out without a feasible point.
    """
    n = a.n_cols
    counts = np.asarray(counts, dtype=float).ravel()
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).ravel()
    signs = a.signs.astype(float)
    if reference_key is not None:
        d = 2 * _key_vector(reference_key, n) - 1
        mat, cost = signs * d, w
    else:
        mat, cost = np.hstack([signs, -signs]), np.concatenate([w, w])
    res = milp(cost, constraints=[LinearConstraint(mat, counts, counts)],
               integrality=np.ones(cost.size), bounds=Bounds(0, 1),
               options={"node_limit": cfg.milp_node_limit, "time_limit": cfg.milp_time_limit})
    if res.x is None:
        return None
    u = np.round(res.x).astype(np.int8)
    delta = d.astype(np.int8) * u if reference_key is not None else u[:n] - u[n:]
    out = MismatchVector(delta, res.x if reference_key is not None else res.x[:n] - res.x[n:])
    return out if consistent(a, counts.astype(np.int64), out) else None


def _admit(A: np.ndarray, active: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    # keep the active Gram matrix full rank; candidates enter in index order
    out = active.copy()
    rank = np.linalg.matrix_rank(A[:, out]) if out.any() else 0
    for j in np.flatnonzero(candidates & ~out):
        out[j] = True
        new_rank = np.linalg.matrix_rank(A[:, out])
        if new_rank == rank:
            out[j] = False
        else:
            rank = new_rank
    return out


def homotopy_bpdn(A: np.ndarray, y: np.ndarray, eps: float, max_iter: int = 1000) -> np.ndarray:
    """LASSO homotopy path from ``lambda = ||A^T y||_inf`` down until ``||y - A x||_2 <= eps``.

    Piecewise-linear path following with support additions and removals.
    Columns tied at the active correlation level enter together, which
    matters for +-1 matrices where exact ties are common.  A column already
    in the span of the active set is not admitted: duplicate columns would
    otherwise share the weight and leave a non-vertex minimizer that rounds
    to nothing.  The stopping point is interpolated inside the final segment.
    """
    m, n = A.shape
    x = np.zeros(n)
    if np.linalg.norm(y) <= eps:
        return x
    c = A.T @ y
    lam = float(np.max(np.abs(c)))
    tie = 1e-9 * max(lam, 1.0)
    active = _admit(A, np.zeros(n, bool), np.abs(c) >= lam - tie)
    barred = -1
    for _ in range(max_iter):
        r = y - A @ x
        c = A.T @ r
        support = np.flatnonzero(active)
        As = A[:, support]
        signs = np.sign(c[support])
        d_s = np.linalg.lstsq(As.T @ As, signs, rcond=None)[0]
        direction = np.zeros(n)
        direction[support] = d_s
        v = A @ direction
        av = A.T @ v
        gamma_in = lam
        for j in np.flatnonzero(~active):
            if j == barred:
                continue
            for num, den in ((lam - c[j], 1 - av[j]), (lam + c[j], 1 + av[j])):
                if den > 1e-12 and tie < num / den < gamma_in:
                    gamma_in = num / den
        gamma_out, idx_out = np.inf, -1
        for pos, j in enumerate(support):
            if d_s[pos] != 0:
                g = -x[j] / d_s[pos]
                if 1e-12 < g < gamma_out:
                    gamma_out, idx_out = g, int(j)
        gamma = min(gamma_in, gamma_out)
        if np.linalg.norm(r - gamma * v) <= eps:
            a2, b1, c0 = v @ v, -2 * (r @ v), r @ r - eps**2
            t = (-b1 - np.sqrt(max(b1 * b1 - 4 * a2 * c0, 0.0))) / (2 * a2) if a2 > 0 else gamma
            return x + min(max(t, 0.0), gamma) * direction
        x = x + gamma * direction
        lam -= gamma
        if lam <= tie:
            return x
        barred = -1
        if gamma_out < gamma_in:
            active[idx_out] = False
            x[idx_out] = 0.0
            barred = idx_out
        c = A.T @ (y - A @ x)
        grow = (~active) & (np.abs(c) >= lam - tie)
        if barred >= 0:
            grow[barred] = False
        active = _admit(A, active, grow)
        if not active.any():
            return x
    raise RecoveryError("homotopy did not reach the residual target")


def apply_mismatch(key, d: MismatchVector) -> BitString:
    """Flip every bit where ``d`` is nonzero."""
    bits = as_bits(key, "key")
    if bits.size != len(d):
        raise ValueError("key and mismatch vector differ in length")
    return BitString(bits ^ (d.delta != 0).astype(np.uint8), "reconciled")


def mismatch_between(key_a, key_b) -> MismatchVector:
    a, b = as_bits(key_a).astype(np.int8), as_bits(key_b).astype(np.int8)
    if a.size != b.size:
        raise ValueError("keys differ in length")
    return MismatchVector(a - b)
