import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acoustikey.bits import gray_bits, gray_code
from acoustikey.quantize import (QuantizedBlock, QuantizerConfig, agree_indices, agree_levels, quantize_stream,
                                 quantize_window, quantize_windows, stream_agreement)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
windows = arrays(np.float64, 20, elements=finite)


def correlated_pair(rho, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n)
    return a, rho * a + np.sqrt(1 - rho**2) * rng.normal(size=n)


class TestQuantizeWindow:
    def test_median_split_without_guard(self):
        blk = quantize_window(np.arange(1, 21), QuantizerConfig(bits_per_sample=1, guard_ratio=0.0))
        assert str(blk.bits) == "0" * 10 + "1" * 10
        assert blk.kept_indices == tuple(range(20))

    def test_guard_drop_rate(self):
        rng = np.random.default_rng(0)
        kept = [len(quantize_window(rng.normal(size=20))) for _ in range(1000)]
        assert np.mean(kept) / 20 == pytest.approx(0.10, abs=0.05)

    def test_constant_window_empty(self):
        blk = quantize_window(np.full(20, 3.0))
        assert len(blk) == 0 and len(blk.bits) == 0

    def test_wrong_length_and_nonfinite(self):
        with pytest.raises(ValueError):
            quantize_window(np.ones(19))
        x = np.random.default_rng(1).normal(size=20)
        x[3] = np.nan
        with pytest.raises(ValueError):
            quantize_window(x)

    def test_levels_equiprobable_without_guard(self):
        rng = np.random.default_rng(2)
        cfg = QuantizerConfig(guard_ratio=0.0)
        counts = np.bincount(np.concatenate([quantize_window(rng.normal(size=20), cfg).levels
                                             for _ in range(2000)]), minlength=4)
        np.testing.assert_allclose(counts / counts.sum(), 0.25, atol=0.02)

    @given(windows, st.floats(0, 1), st.integers(1, 3))
    def test_block_invariants(self, x, alpha, n):
        blk = quantize_window(x, QuantizerConfig(bits_per_sample=n, guard_ratio=alpha))
        assert len(blk.bits) == n * len(blk.kept_indices)
        assert all(0 <= i < 20 for i in blk.kept_indices)
        assert list(blk.kept_indices) == sorted(set(blk.kept_indices))

    @given(windows, st.floats(0, 1), st.floats(0, 1))
    def test_kept_set_nested_in_alpha(self, x, a1, a2):
        lo, hi = sorted((a1, a2))
        keep_lo = set(quantize_window(x, QuantizerConfig(guard_ratio=lo)).kept_indices)
        keep_hi = set(quantize_window(x, QuantizerConfig(guard_ratio=hi)).kept_indices)
        assert keep_hi <= keep_lo

    def test_config_invariants(self):
        for kw in ({"window_size": 1}, {"bits_per_sample": 0}, {"guard_ratio": 1.5}):
            with pytest.raises(ValueError):
                QuantizerConfig(**kw)

    def test_block_rejects_unsorted(self):
        with pytest.raises(ValueError):
            QuantizedBlock(gray_bits(np.array([0, 1]), 2), (3, 1))


class TestAgreeIndices:
    def block(self, idx):
        idx = list(idx)
        levels = np.arange(len(idx)) % 4
        return QuantizedBlock(gray_bits(levels, 2), idx, tuple(levels), 2)

    def test_identical_sets(self):
        b = self.block([1, 4, 9])
        np.testing.assert_array_equal(agree_indices(b, [1, 4, 9]).bits, b.bits.bits)

    def test_disjoint_sets(self):
        assert len(agree_indices(self.block([1, 2]), [3, 4])) == 0

    def test_partial_overlap(self):
        b = self.block([1, 3, 5, 7])
        out = agree_indices(b, [3, 5, 9])
        np.testing.assert_array_equal(out.bits, b.bits.bits.reshape(-1, 2)[[1, 2]].ravel())
        np.testing.assert_array_equal(agree_levels(b, [3, 5, 9]), [1, 2])

    @pytest.mark.parametrize("bad", [[3, 1], [-1, 2], [1, 1]])
    def test_malformed(self, bad):
        with pytest.raises(ValueError):
            agree_indices(self.block([1, 2]), bad)

    def test_out_of_window(self):
        with pytest.raises(ValueError):
            agree_indices(self.block([1, 2]), [25], window_size=20)

    @settings(max_examples=60)
    @given(windows, windows, st.floats(0, 1))
    def test_equal_length_both_sides(self, xa, xb, alpha):
        cfg = QuantizerConfig(guard_ratio=alpha)
        ba, bb = quantize_window(xa, cfg), quantize_window(xb, cfg)
        assert len(agree_indices(ba, bb.kept_indices)) == len(agree_indices(bb, ba.kept_indices))


class TestStream:
    def test_vectorized_matches_per_window(self):
        a, b = correlated_pair(0.8, 2000, 3)
        cfg = QuantizerConfig()
        bits_a, bits_b, _, _ = stream_agreement(a, b, cfg)
        ref_a, ref_b = [], []
        for wa, wb in zip(quantize_stream(a, cfg), quantize_stream(b, cfg)):
            ref_a.append(agree_indices(wa, wb.kept_indices).bits)
            ref_b.append(agree_indices(wb, wa.kept_indices).bits)
        np.testing.assert_array_equal(bits_a, np.concatenate(ref_a))
        np.testing.assert_array_equal(bits_b, np.concatenate(ref_b))

    def test_partial_window_discarded(self):
        level, kept = quantize_windows(np.random.default_rng(0).normal(size=45))
        assert level.shape == kept.shape == (2, 20)

    def test_alpha_trend(self):
        alphas = [0.0, 0.3, 0.6, 0.9]
        agree, kept = [], []
        for alpha in alphas:
            cfg = QuantizerConfig(guard_ratio=alpha)
            rates, sizes = [], []
            for seed in range(40):
                a, b = correlated_pair(0.8, 2000, seed)
                ba, bb, _, _ = stream_agreement(a, b, cfg)
                rates.append(np.mean(ba == bb))
                sizes.append(ba.size)
            agree.append(np.mean(rates))
            kept.append(np.mean(sizes))
        assert all(y >= x for x, y in zip(agree, agree[1:]))
        assert all(y <= x for x, y in zip(kept, kept[1:]))


@given(st.integers(0, 2**16 - 2))
def test_gray_adjacent_levels_differ_in_one_bit(level):
    assert bin(gray_code(level) ^ gray_code(level + 1)).count("1") == 1
