"""Measurement-count window between reliable recovery and attacker resistance.

The lower end ``P = s_ab * ln(N / s_ab)`` is the number of measurements the
legitimate pair needs; the upper end ``Q = min(s_bob, s_be)`` is the
sparsity an attacker would have to overcome (Bob's key weight for direct
recovery, Bob-Eve mismatch for reconciling with her own key).
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SecurityBounds:
    p_lower: float
    q_upper: float
    s_ab: float
    s_bob: float
    s_be: float
    m_rows: int

    @property
    def valid(self) -> bool:
        return self.p_lower < self.m_rows < self.q_upper

    def feasible_range(self) -> tuple[int, int]:
        """Smallest and largest integer M strictly inside (P, Q)."""
        return math.floor(self.p_lower) + 1, math.ceil(self.q_upper) - 1


def measurement_floor(s: float, n: int) -> float:
    if s <= 0:
        return 0.0
    return s * math.log(n / s)


def security_bounds(s_ab: float, s_bob: float, s_be: float, n: int, m_rows: int) -> SecurityBounds:
    for name, v in (("s_ab", s_ab), ("s_bob", s_bob), ("s_be", s_be)):
        if not 0 <= v <= n:
            raise ValueError(f"{name} must lie in [0, {n}]")
    return SecurityBounds(measurement_floor(s_ab, n), float(min(s_bob, s_be)),
                          s_ab, s_bob, s_be, m_rows)


def bounds_from_agreement(agreement: float, n: int = 128, m_rows: int = 23,
                          mode: str = "agreement") -> SecurityBounds:
    """Bounds for an idealized session with the given agreement fraction.

    ``mode="agreement"`` feeds ``n * agreement`` into the lower bound, the
    arithmetic behind the default M range of 23 to 50; ``mode="mismatch"`` feeds the
    mismatch count ``n * (1 - agreement)`` as the formula is written.  Bob's
    key weight and the Bob-Eve mismatch both sit at ``n / 2``.
    """
    if mode == "agreement":
        s_ab = n * agreement
    elif mode == "mismatch":
        s_ab = n * (1 - agreement)
    else:
        raise ValueError("mode must be 'agreement' or 'mismatch'")
    return security_bounds(s_ab, n / 2, n / 2, n, m_rows)


def rip_measurement_bound(s: float, n: int, c: float = 1.0) -> float:
    """``c * s * ln(N / s)``: measurements sufficient for RIP-based recovery, ``c`` unknown."""
    return c * measurement_floor(s, n)
