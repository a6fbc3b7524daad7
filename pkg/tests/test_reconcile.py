import math
from itertools import combinations, product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import hadamard

from acoustikey.reconcile import (MismatchVector, ReconConfig, RecoveryError, SamplingMatrix, apply_mismatch,
                                  bch_reconcile, bch_syndrome, bounds_from_agreement, compress, compress_counts,
                                  consistent, homotopy_bpdn, integer_recover, mac_tag, mismatch_between,
                                  mutual_coherence, optimize_matrix, parity_reconcile, random_bernoulli,
                                  recover_mismatch, rip_measurement_bound, security_bounds, verify_tag)

keys128 = st.lists(st.integers(0, 1), min_size=128, max_size=128).map(lambda v: np.array(v, np.uint8))


def key_pair(n, s, seed):
    rng = np.random.default_rng(seed)
    ka = rng.integers(0, 2, n).astype(np.uint8)
    kb = ka.copy()
    kb[rng.choice(n, s, replace=False)] ^= 1
    return ka, kb


def brute_force_minimal(signs, counts, max_support):
    """Every ternary vector of minimal support reproducing ``counts``; independent of any solver."""
    n = signs.shape[1]
    for k in range(max_support + 1):
        hits = []
        for support in combinations(range(n), k):
            cols = signs[:, support]
            for vals in product((-1, 1), repeat=k):
                if np.array_equal(cols @ np.array(vals, np.int64), counts):
                    d = np.zeros(n, np.int8)
                    d[list(support)] = vals
                    hits.append(d)
        if hits:
            return hits
    return []


class TestCompress:
    def test_one_hot_picks_column(self):
        a = random_bernoulli(23, 128, 1)
        for j in (0, 64, 127):
            e = np.zeros(128, np.uint8)
            e[j] = 1
            np.testing.assert_allclose(compress(a, e), a.entries[:, j])

    def test_zero_key(self):
        assert not np.any(compress(random_bernoulli(23, 128, 1), np.zeros(128, np.uint8)))

    @given(keys128, keys128)
    def test_linearity_in_difference(self, ka, kb):
        a = random_bernoulli(23, 128, 7)
        diff = ka.astype(int) - kb.astype(int)
        np.testing.assert_allclose(compress(a, ka) - compress(a, kb), a.entries @ diff, atol=1e-12)

    def test_counts_are_integers_and_scaled(self):
        a = random_bernoulli(23, 128, 2)
        k = key_pair(128, 0, 3)[0]
        assert compress_counts(a, k).dtype.kind == "i"
        np.testing.assert_allclose(compress(a, k), compress_counts(a, k) / math.sqrt(23))

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            compress(random_bernoulli(23, 128, 1), np.zeros(64, np.uint8))


class TestRecover:
    def test_zero_measurement_gives_zero(self):
        d = recover_mismatch(random_bernoulli(23, 128, 1), np.zeros(23))
        assert d.sparsity == 0

    def test_wrong_measurement_length(self):
        with pytest.raises(ValueError):
            recover_mismatch(random_bernoulli(23, 128, 1), np.zeros(22))

    def test_bad_weights(self):
        with pytest.raises(ValueError):
            recover_mismatch(random_bernoulli(23, 128, 1), np.ones(23), weights=np.zeros(128))

    def test_homotopy_rejects_sign_information(self):
        a = random_bernoulli(23, 128, 1)
        with pytest.raises(ValueError):
            recover_mismatch(a, np.ones(23), ReconConfig(solver="homotopy"), reference_key=np.zeros(128, np.uint8))

    def test_small_exact_against_brute_force(self):
        # N=32, M=12, s=2: the integer search returns the minimal vector whenever it is unique
        lp_hits = unique = 0
        for seed in range(150):
            a = random_bernoulli(12, 32, seed)
            ka, kb = key_pair(32, 2, seed + 10_000)
            counts = compress_counts(a, ka) - compress_counts(a, kb)
            minimal = brute_force_minimal(a.signs.astype(np.int64), counts, 2)
            assert minimal
            if len(minimal) != 1:
                continue
            unique += 1
            y = counts / math.sqrt(12)
            exact = recover_mismatch(a, y, ReconConfig(m_rows=12, solver="ternary"))
            np.testing.assert_array_equal(exact.delta, minimal[0])
            lp_hits += np.array_equal(recover_mismatch(a, y, ReconConfig(m_rows=12)).delta, minimal[0])
        assert unique >= 130
        assert lp_hits / unique >= 0.85

    @pytest.mark.parametrize("solver", ["lp", "homotopy"])
    def test_dual_routes_agree_with_brute_force(self, solver):
        cfg = ReconConfig(m_rows=20, solver=solver)
        for seed in range(40):
            a = random_bernoulli(20, 32, seed)
            ka, kb = key_pair(32, 1 + seed % 3, seed + 500)
            counts = compress_counts(a, ka) - compress_counts(a, kb)
            minimal = brute_force_minimal(a.signs.astype(np.int64), counts, 3)
            got = recover_mismatch(a, counts / math.sqrt(20), cfg)
            np.testing.assert_array_equal(got.delta, minimal[0])

    def test_heavy_mismatch_detected_by_mac(self):
        # s=19 at M=23 is outside the recoverable regime; the tag comparison must catch it
        a = random_bernoulli(23, 128, 4)
        ka, kb = key_pair(128, 19, 5)
        d = recover_mismatch(a, compress(a, ka) - compress(a, kb), reference_key=ka)
        fixed = apply_mismatch(ka, d)
        assert not np.array_equal(fixed.bits, kb)
        assert not verify_tag(fixed, b"confirm", mac_tag(kb, b"confirm"))

    def test_signed_recovery_at_protocol_point(self):
        a = optimize_matrix(512, 30, 128, 9)
        cfg = ReconConfig(m_rows=30, solver="ternary")
        ok = 0
        for seed in range(30):
            ka, kb = key_pair(128, 1 + seed % 10, seed)
            d = recover_mismatch(a, compress(a, ka) - compress(a, kb), cfg, reference_key=ka)
            ok += np.array_equal(apply_mismatch(ka, d).bits, kb)
        assert ok >= 29

    def test_integer_recover_consistent_or_none(self):
        a = random_bernoulli(23, 128, 6)
        ka, kb = key_pair(128, 8, 7)
        counts = compress_counts(a, ka) - compress_counts(a, kb)
        d = integer_recover(a, counts, reference_key=ka)
        assert d is None or consistent(a, counts, d)

    def test_config_invariants(self):
        for kw in ({"m_rows": 0}, {"epsilon": -1}, {"round_threshold": 1.0}, {"solver": "cvx"},
                   {"milp_node_limit": 0}):
            with pytest.raises(ValueError):
                ReconConfig(**kw)


class TestHomotopy:
    def test_zero_when_residual_already_small(self):
        A = random_bernoulli(10, 20, 1).entries
        assert not np.any(homotopy_bpdn(A, np.full(10, 1e-6), 1.0))

    def test_meets_residual_target(self):
        A = random_bernoulli(20, 32, 2).entries
        x0 = np.zeros(32)
        x0[[3, 17]] = [1, -1]
        y = A @ x0
        x = homotopy_bpdn(A, y, 1e-3 * np.linalg.norm(y))
        assert np.linalg.norm(y - A @ x) <= 1e-3 * np.linalg.norm(y) + 1e-9

    def test_duplicate_columns_give_a_vertex(self):
        A = random_bernoulli(20, 32, 2).entries.copy()
        A[:, 19] = A[:, 5]
        x0 = np.zeros(32)
        x0[[5, 26]] = [-1, 1]
        x = homotopy_bpdn(A, A @ x0, 1e-6)
        # one duplicate carries the full weight instead of a 0.5/0.5 split
        assert sorted(np.abs(x[[5, 19]])) == pytest.approx([0.0, 1.0], abs=1e-4)
        assert x[26] == pytest.approx(1.0, abs=1e-4)


class TestMismatchVector:
    @given(keys128, keys128)
    def test_apply_recovers_other_key(self, ka, kb):
        d = mismatch_between(ka, kb)
        np.testing.assert_array_equal(apply_mismatch(kb, d).bits, ka)
        np.testing.assert_array_equal(apply_mismatch(ka, d).bits, kb)

    @given(keys128, keys128)
    def test_involution(self, ka, kb):
        d = mismatch_between(ka, kb)
        np.testing.assert_array_equal(apply_mismatch(apply_mismatch(ka, d), d).bits, ka)

    def test_entries_bounded(self):
        with pytest.raises(ValueError):
            MismatchVector(np.array([0, 2]))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            apply_mismatch(np.zeros(4, np.uint8), MismatchVector(np.zeros(5)))


class TestMatrix:
    def test_coherence_brute_force(self):
        a = random_bernoulli(12, 20, 3)
        cols = a.signs.astype(float)
        best = max(abs(cols[:, i] @ cols[:, j]) / 12 for i in range(20) for j in range(i + 1, 20))
        assert mutual_coherence(a) == pytest.approx(best, abs=1e-12)

    def test_orthogonal_columns_zero(self):
        assert mutual_coherence(hadamard(16)) == pytest.approx(0.0, abs=1e-12)

    def test_duplicate_column_one(self):
        s = random_bernoulli(8, 6, 1).signs.copy()
        s[:, 5] = -s[:, 2]
        assert mutual_coherence(SamplingMatrix(s)) == pytest.approx(1.0)

    def test_entries_validated(self):
        with pytest.raises(ValueError):
            SamplingMatrix(np.array([[1, 0], [1, 1]]))

    def test_matrix_id_content_addressed(self):
        a, b = random_bernoulli(23, 128, 1), random_bernoulli(23, 128, 1)
        assert a.matrix_id == b.matrix_id and a == b
        assert random_bernoulli(23, 128, 2).matrix_id != a.matrix_id

    def test_optimize_two_columns_takes_best_pair(self):
        pool = np.random.default_rng(5).choice(np.array([-1, 1], np.int8), size=(10, 30)).astype(float)
        best = min(abs(pool[:, i] @ pool[:, j]) / 10 for i in range(30) for j in range(i + 1, 30))
        assert optimize_matrix(30, 10, 2, 5).coherence == pytest.approx(best)

    @settings(max_examples=15)
    @given(st.integers(0, 10_000))
    def test_optimize_history_monotone(self, seed):
        a = optimize_matrix(200, 23, 40, seed)
        h = np.array(a.history)
        assert len(h) == 39 and np.all(np.diff(h) >= 0)
        assert a.coherence == pytest.approx(h[-1])

    def test_optimized_beats_random(self):
        wins = sum(optimize_matrix(512, 23, 128, s).coherence < random_bernoulli(23, 128, s).coherence
                   for s in range(5))
        assert wins == 5

    def test_optimize_guards(self):
        with pytest.raises(ValueError):
            optimize_matrix(129, 23, 128, 0)
        with pytest.raises(ValueError):
            optimize_matrix(10, 23, 1, 0)


class TestBounds:
    def test_agreement_example(self):
        b = bounds_from_agreement(0.84)
        assert b.p_lower == pytest.approx(107.52 * math.log(128 / 107.52))
        assert round(b.p_lower) == 19 and b.q_upper == 64
        assert b.valid
        lo, hi = b.feasible_range()
        assert lo <= 23 and hi >= 50

    def test_mismatch_mode_literal_formula(self):
        # s ln(N/s) peaks at N/e, so the 20-bit mismatch count gives the larger floor
        b = bounds_from_agreement(0.84, mode="mismatch")
        assert b.p_lower == pytest.approx(20.48 * math.log(128 / 20.48))
        assert not b.valid

    def test_invalid_when_m_outside_window(self):
        assert not security_bounds(20, 64, 64, 128, 15).valid
        assert not security_bounds(20, 64, 10, 128, 23).valid

    def test_zero_mismatch_floor(self):
        assert security_bounds(0, 64, 64, 128, 23).p_lower == 0

    def test_out_of_range_inputs(self):
        with pytest.raises(ValueError):
            security_bounds(200, 64, 64, 128, 23)
        with pytest.raises(ValueError):
            bounds_from_agreement(0.8, mode="other")

    def test_rip_scaling(self):
        assert rip_measurement_bound(10, 128, c=2.0) == pytest.approx(2 * 10 * math.log(12.8))


class TestMac:
    def test_rfc4231_case_1(self):
        tag = mac_tag(b"\x0b" * 20, b"Hi There")
        assert tag.hex() == "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"

    def test_rfc4231_case_2(self):
        tag = mac_tag(b"Jefe", b"what do ya want for nothing?")
        assert tag.hex() == "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"

    def test_bit_key_packs_msb_first(self):
        bits = np.unpackbits(np.frombuffer(b"\x0b" * 20, np.uint8))
        assert mac_tag(bits, b"Hi There") == mac_tag(b"\x0b" * 20, b"Hi There")

    def test_verify(self):
        tag = mac_tag(b"k", b"m")
        assert verify_tag(b"k", b"m", tag)
        assert not verify_tag(b"k", b"n", tag)

    def test_empty_key_rejected(self):
        with pytest.raises(ValueError):
            mac_tag(b"", b"m")


class TestBaselines:
    def test_bch_syndrome_zero_on_codewords(self):
        gen = np.array([int(c) for c in format(0b111010001, "015b")], np.uint8)
        assert bch_syndrome(gen) == 0

    def test_bch_corrects_two_errors_per_block(self):
        ka = np.random.default_rng(1).integers(0, 2, 135).astype(np.uint8)
        kb = ka.copy()
        for blk in range(9):
            kb[[blk * 15 + 1, blk * 15 + 9]] ^= 1
        res = bch_reconcile(kb, ka)
        np.testing.assert_array_equal(res.key, ka)
        assert res.leaked_bits == 72 and res.rounds == 1

    def test_bch_leaks_per_padded_block(self):
        ka, kb = key_pair(128, 1, 2)
        assert bch_reconcile(ka, kb).leaked_bits == 9 * 8

    def test_parity_corrects_sparse_errors(self):
        ka, kb = key_pair(128, 3, 3)
        res = parity_reconcile(kb, ka, seed=1)
        np.testing.assert_array_equal(res.key, ka)
        assert res.leaked_bits >= 16 and res.rounds == res.leaked_bits

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bch_reconcile(np.zeros(15, np.uint8), np.zeros(30, np.uint8))
        with pytest.raises(ValueError):
            parity_reconcile(np.zeros(15, np.uint8), np.zeros(30, np.uint8))


def test_recovery_error_is_runtime_error():
    assert issubclass(RecoveryError, RuntimeError)
