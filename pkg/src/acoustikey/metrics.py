"""Evaluation metrics and a subset of the NIST SP 800-22 randomness tests.

The test statistics follow SP 800-22 rev 1a.  Each test returns one or more
p-values; a test passes when every p-value exceeds the 0.01 threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, gammaincc
from scipy.stats import norm

from .bits import as_bits

SIGNIFICANCE = 0.01


def agreement_rate(a, b) -> float:
    """Fraction of matching bits."""
    x, y = as_bits(a), as_bits(b)
    if x.size != y.size:
        raise ValueError("bit strings differ in length")
    if x.size == 0:
        raise ValueError("empty bit strings")
    return float(np.mean(x == y))


def symbol_agreement_rate(levels_a, levels_b) -> float:
    """Fraction of matching quantization levels (multi-bit symbols)."""
    x, y = np.asarray(levels_a).ravel(), np.asarray(levels_b).ravel()
    if x.size != y.size:
        raise ValueError("level sequences differ in length")
    if x.size == 0:
        raise ValueError("empty level sequences")
    return float(np.mean(x == y))


def generation_rate(transcript) -> float:
    """Final-key bits per second of model time, first probe to confirmation."""
    if transcript is None or not transcript.probe_times_ms:
        raise ValueError("transcript has no probes")
    span_ms = transcript.end_ms - transcript.probe_times_ms[0]
    if span_ms <= 0:
        raise ValueError("transcript covers no model time")
    return transcript.final_key_bits / (span_ms / 1000.0)


# --- SP 800-22 subset --------------------------------------------------------

def _pm(bits: np.ndarray) -> np.ndarray:
    return 2 * bits.astype(np.int64) - 1


def monobit(bits: np.ndarray) -> float:
    n = bits.size
    s = abs(int(_pm(bits).sum())) / math.sqrt(n)
    return float(erfc(s / math.sqrt(2)))


def block_frequency(bits: np.ndarray, block_len: int = 128) -> float:
    nblocks = bits.size // block_len
    if nblocks < 1:
        raise ValueError("sequence shorter than one block")
    pi = bits[:nblocks * block_len].reshape(nblocks, block_len).mean(axis=1)
    chi2 = 4 * block_len * float(np.sum((pi - 0.5) ** 2))
    return float(gammaincc(nblocks / 2, chi2 / 2))


def runs(bits: np.ndarray) -> float:
    n = bits.size
    pi = bits.mean()
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return 0.0
    v = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    num = abs(v - 2 * n * pi * (1 - pi))
    return float(erfc(num / (2 * math.sqrt(2 * n) * pi * (1 - pi))))


_LONGEST_RUN = (
    # (min n, block length, bucket lower edges, probabilities)
    (750000, 10000, (10, 11, 12, 13, 14, 15, 16),
     (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6272, 128, (4, 5, 6, 7, 8, 9), (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, (1, 2, 3, 4), (0.2148, 0.3672, 0.2305, 0.1875)),
)


def _longest_run_of_ones(block: np.ndarray) -> int:
    padded = np.concatenate([[0], block, [0]])
    edges = np.flatnonzero(np.diff(padded))
    return int((edges[1::2] - edges[::2]).max()) if edges.size else 0


def longest_run(bits: np.ndarray) -> float:
    n = bits.size
    for min_n, m, edges, probs in _LONGEST_RUN:
        if n >= min_n:
            break
    else:
        raise ValueError("longest-run test needs at least 128 bits")
    nblocks = n // m
    longest = np.array([_longest_run_of_ones(bits[i * m:(i + 1) * m]) for i in range(nblocks)])
    bucket = np.clip(np.searchsorted(edges, longest, side="right") - 1, 0, len(edges) - 1)
    counts = np.bincount(bucket, minlength=len(edges))
    probs = np.asarray(probs)
    chi2 = float(np.sum((counts - nblocks * probs) ** 2 / (nblocks * probs)))
    return float(gammaincc((len(edges) - 1) / 2, chi2 / 2))


def cumulative_sums(bits: np.ndarray, reverse: bool = False) -> float:
    x = _pm(bits[::-1] if reverse else bits)
    n = x.size
    z = int(np.max(np.abs(np.cumsum(x))))
    if z == 0:
        return 0.0
    sq = math.sqrt(n)
    k1 = np.arange(int((-n / z + 1) // 4), int((n / z - 1) // 4) + 1)
    k2 = np.arange(int((-n / z - 3) // 4), int((n / z - 1) // 4) + 1)
    t1 = np.sum(norm.cdf((4 * k1 + 1) * z / sq) - norm.cdf((4 * k1 - 1) * z / sq))
    t2 = np.sum(norm.cdf((4 * k2 + 3) * z / sq) - norm.cdf((4 * k2 + 1) * z / sq))
    return float(min(max(1.0 - t1 + t2, 0.0), 1.0))


def _pattern_counts(bits: np.ndarray, m: int) -> np.ndarray:
    """Overlapping m-bit pattern counts with circular wrap."""
    n = bits.size
    if m == 0:
        return np.array([n])
    ext = np.concatenate([bits, bits[:m - 1]]).astype(np.int64)
    codes = np.zeros(n, dtype=np.int64)
    for j in range(m):
        codes = (codes << 1) | ext[j:j + n]
    return np.bincount(codes, minlength=2**m)


def approximate_entropy(bits: np.ndarray, m: int | None = None) -> float:
    n = bits.size
    if m is None:
        m = max(2, int(math.log2(n)) - 6)

    def phi(k):
        c = _pattern_counts(bits, k) / n
        c = c[c > 0]
        return float(np.sum(c * np.log(c)))

    apen = phi(m) - phi(m + 1)
    chi2 = 2 * n * (math.log(2) - apen)
    return float(gammaincc(2 ** (m - 1), chi2 / 2))


def serial(bits: np.ndarray, m: int | None = None) -> tuple[float, float]:
    n = bits.size
    if m is None:
        m = max(3, min(16, int(math.log2(n)) - 3))

    def psi2(k):
        if k <= 0:
            return 0.0
        c = _pattern_counts(bits, k).astype(float)
        return float((2**k / n) * np.sum(c**2) - n)

    p0, p1, p2 = psi2(m), psi2(m - 1), psi2(m - 2)
    d1 = p0 - p1
    d2 = p0 - 2 * p1 + p2
    return float(gammaincc(2 ** (m - 2), d1 / 2)), float(gammaincc(2 ** (m - 3), d2 / 2))


def fft_spectral(bits: np.ndarray) -> float:
    n = bits.size
    mags = np.abs(np.fft.fft(_pm(bits)))[: n // 2]
    threshold = math.sqrt(math.log(1 / 0.05) * n)
    n0 = 0.95 * n / 2
    n1 = float(np.count_nonzero(mags < threshold))
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4)
    return float(erfc(abs(d) / math.sqrt(2)))


def _berlekamp_massey(block: np.ndarray) -> int:
    n = block.size
    c = np.zeros(n + 1, np.uint8)
    b = np.zeros(n + 1, np.uint8)
    c[0] = b[0] = 1
    length, m = 0, -1
    for i in range(n):
        d = int(block[i] ^ (np.dot(c[1:length + 1], block[i - length:i][::-1]) & 1))
        if d:
            t = c.copy()
            shift = i - m
            c[shift:] ^= b[: n + 1 - shift]
            if 2 * length <= i:
                length, m, b = i + 1 - length, i, t
    return length


def linear_complexity(bits: np.ndarray, block_len: int = 500) -> float:
    nblocks = bits.size // block_len
    if nblocks < 1:
        raise ValueError("sequence shorter than one block")
    m = block_len
    mu = m / 2 + (9 + (-1) ** (m + 1)) / 36 - (m / 3 + 2 / 9) / 2**m
    t = np.array([(-1) ** m * (_berlekamp_massey(bits[i * m:(i + 1) * m]) - mu) + 2 / 9
                  for i in range(nblocks)])
    edges = np.array([-2.5, -1.5, -0.5, 0.5, 1.5, 2.5])
    bucket = np.searchsorted(edges, t, side="right")
    counts = np.bincount(bucket, minlength=7)
    probs = np.array([0.010417, 0.03125, 0.125, 0.5, 0.25, 0.0625, 0.020833])
    chi2 = float(np.sum((counts - nblocks * probs) ** 2 / (nblocks * probs)))
    return float(gammaincc(3, chi2 / 2))


def non_overlapping_template(bits: np.ndarray, template=(0, 0, 0, 0, 0, 0, 0, 0, 1),
                             n_blocks: int = 8) -> float:
    tpl = np.asarray(template, dtype=np.uint8)
    m = tpl.size
    block_len = bits.size // n_blocks
    mu = (block_len - m + 1) / 2**m
    var = block_len * (1 / 2**m - (2 * m - 1) / 2 ** (2 * m))
    counts = []
    for j in range(n_blocks):
        blk = bits[j * block_len:(j + 1) * block_len]
        i, w = 0, 0
        while i <= block_len - m:
            if np.array_equal(blk[i:i + m], tpl):
                w += 1
                i += m
            else:
                i += 1
        counts.append(w)
    chi2 = float(np.sum((np.array(counts) - mu) ** 2 / var))
    return float(gammaincc(n_blocks / 2, chi2 / 2))


# tests run at any length >= min_len; the long tests need SP 800-22's recommended volume
CORE_TESTS = ("MonobitFrequency", "BlockFrequency", "Runs", "LongestRun", "CumulativeSums",
              "ApproximateEntropy", "Serial", "FFTSpectral")
LONG_TESTS = {"LinearComplexity": 1_000_000, "NonOverlappingTemplate": 1_000_000}


@dataclass
class RandomnessReport:
    n_bits: int
    p_values: dict = field(default_factory=dict)
    insufficient: dict = field(default_factory=dict)

    @property
    def passed(self) -> dict:
        return {k: all(p > SIGNIFICANCE for p in v) for k, v in self.p_values.items()}

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def rows(self) -> list[dict]:
        out = [{"test": k, "p_value": min(v), "passed": self.passed[k]} for k, v in self.p_values.items()]
        out += [{"test": k, "p_value": None, "passed": None, "note": f"insufficient data (< {n} bits)"}
                for k, n in self.insufficient.items()]
        return out


def randomness_suite(bits, min_len: int = 10_000) -> RandomnessReport:
    x = as_bits(bits)
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} bits, got {x.size}")
    p = {
        "MonobitFrequency": [monobit(x)],
        "BlockFrequency": [block_frequency(x)],
        "Runs": [runs(x)],
        "LongestRun": [longest_run(x)],
        "CumulativeSums": [cumulative_sums(x), cumulative_sums(x, reverse=True)],
        "ApproximateEntropy": [approximate_entropy(x)],
        "Serial": list(serial(x)),
        "FFTSpectral": [fft_spectral(x)],
    }
    report = RandomnessReport(int(x.size), p)
    for name, need in LONG_TESTS.items():
        if x.size < need:
            report.insufficient[name] = need
        elif name == "LinearComplexity":
            report.p_values[name] = [linear_complexity(x)]
        else:
            report.p_values[name] = [non_overlapping_template(x)]
    return report
