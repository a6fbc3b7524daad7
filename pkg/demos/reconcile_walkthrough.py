"""Reconcile two 128-bit segments that differ in a handful of positions.

Shows the pieces the session composes: the Bloom block filter's mismatch
count, the public slot key, a low-coherence sampling matrix, l1 recovery of
the mismatch vector and the MAC check that tells Alice whether she got it.
"""
import numpy as np

from acoustikey.bloom import encode, mismatch_count, slot_key
from acoustikey.reconcile import (ReconConfig, apply_mismatch, bounds_from_agreement, compress, mac_tag,
                                  mutual_coherence, optimize_matrix, random_bernoulli, recover_mismatch,
                                  verify_tag)

rng = np.random.default_rng(3)
alice = rng.integers(0, 2, 128).astype(np.uint8)
bob = alice.copy()
flipped = np.sort(rng.choice(128, 9, replace=False))
bob[flipped] ^= 1
print(f"segments differ at {flipped.tolist()}")

print(f"Bloom mismatch count: {mismatch_count(encode(alice), encode(bob))}")

slot_a, slot_b = slot_key(alice), slot_key(bob)
print(f"slot keys differ in {int(np.sum(slot_a.bits != slot_b.bits))} positions")

bounds = bounds_from_agreement(0.84)
lo, hi = bounds.feasible_range()
print(f"admissible measurement count at 84% agreement: {lo}..{hi}")

matrix = optimize_matrix(512, 23, 128, 11)
baseline = np.mean([mutual_coherence(random_bernoulli(23, 128, s)) for s in range(30)])
print(f"coherence: optimized {matrix.coherence:.3f}, random mean {baseline:.3f}")

y_bob = compress(matrix, slot_b)
tag = mac_tag(slot_b, y_bob.tobytes())
d = recover_mismatch(matrix, compress(matrix, slot_a) - y_bob, ReconConfig(m_rows=23, solver="ternary"),
                     reference_key=slot_a)
guess = apply_mismatch(slot_a, d)
print(f"recovered {int(np.count_nonzero(d.delta))} mismatches; MAC verifies: "
      f"{verify_tag(guess, y_bob.tobytes(), tag)}")
