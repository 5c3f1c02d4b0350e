import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import swinseg.tensor as T
from swinseg.attention import (MASK_PENALTY, build_attention_mask,
                               cyclic_shift, init_swin_block,
                               init_window_attention,
                               relative_position_index, swin_block_pair,
                               window_partition, window_reverse, wmsa)
from swinseg.tensor import ShapeError, Tensor, backward


def rand(shape, seed=0, dtype=np.float64):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


class TestWindowPartition:
    def test_small_grid_layout(self):
        x = np.arange(1 * 4 * 4 * 3, dtype=np.float32).reshape(1, 4, 4, 3)
        win = window_partition(Tensor(x), 2)
        assert win.shape == (4, 4, 3)
        # token at spatial (0, 1) lands in window 0, position 1
        assert np.array_equal(win.data[0, 1], x[0, 0, 1])

    def test_single_window_is_raster_order(self):
        x = rand((2, 3, 3, 5), 1)
        win = window_partition(Tensor(x), 3)
        assert win.shape == (2, 9, 5)
        assert np.array_equal(win.data, x.reshape(2, 9, 5))

    def test_non_divisible_resolution_rejected(self):
        with pytest.raises(ShapeError):
            window_partition(Tensor(np.zeros((1, 5, 4, 2))), 2)

    @given(st.integers(0, 2 ** 31), st.integers(1, 3), st.integers(1, 3),
           st.integers(1, 3), st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_bit_exact(self, seed, b, hm, wm, m):
        h, w = hm * m, wm * m
        x = np.random.default_rng(seed).standard_normal((b, h, w, 2))
        x = x.astype(np.float32)
        back = window_reverse(window_partition(Tensor(x), m), h, w)
        assert np.array_equal(back.data, x)

    def test_batches_do_not_interleave(self):
        # brute-force index check: batch b windows map back only to batch b
        b, h, w, m = 3, 4, 6, 2
        x = np.zeros((b, h, w, 1), dtype=np.float32)
        for i in range(b):
            x[i] = i
        win = window_partition(Tensor(x), m)
        n_per_batch = (h // m) * (w // m)
        for i in range(b):
            block = win.data[i * n_per_batch:(i + 1) * n_per_batch]
            assert np.all(block == i)
        back = window_reverse(Tensor(win.data), h, w)
        assert np.array_equal(back.data, x)

    def test_reverse_rejects_inconsistent_extents(self):
        with pytest.raises(ShapeError):
            window_reverse(Tensor(np.zeros((3, 4, 2))), 4, 4)


class TestCyclicShift:
    def test_zero_shift_identity(self):
        x = Tensor(rand((1, 3, 3, 2), 2))
        assert cyclic_shift(x, 0) is x

    def test_hand_rolled_2x2(self):
        # [[a,b],[c,d]] rolled by (-1,-1) -> [[d,c],[b,a]]
        grid = np.array([["a", "b"], ["c", "d"]])
        x = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 2, 2, 1)
        out = cyclic_shift(Tensor(x), 1).data[0, :, :, 0]
        assert np.array_equal(out, [[3.0, 2.0], [1.0, 0.0]])
        assert grid[1, 1] == "d"  # sanity of the hand mapping

    @given(st.integers(0, 2 ** 31), st.integers(2, 6), st.integers(0, 5))
    @settings(max_examples=40, deadline=None)
    def test_shift_unshift_bit_exact(self, seed, n, s):
        x = np.random.default_rng(seed).standard_normal((2, n, n, 3))
        x = x.astype(np.float32)
        out = cyclic_shift(cyclic_shift(Tensor(x), s), -s)
        assert np.array_equal(out.data, x)


class TestRelativePositionIndex:
    def test_m1(self):
        assert np.array_equal(relative_position_index(1), [[0]])

    def test_m2_diagonal_and_coverage(self):
        idx = relative_position_index(2)
        assert idx.shape == (4, 4)
        assert np.all(np.diag(idx) == 4)   # center offset (0,0)
        assert len(np.unique(idx)) == 9    # all (dr, dc) pairs realized
        assert idx.min() >= 0 and idx.max() < 9

    def test_matches_brute_force_offsets(self):
        m = 3
        idx = relative_position_index(m)
        coords = [(r, c) for r in range(m) for c in range(m)]
        for i, (ri, ci) in enumerate(coords):
            for j, (rj, cj) in enumerate(coords):
                expected = (ri - rj + m - 1) * (2 * m - 1) + (ci - cj + m - 1)
                assert idx[i, j] == expected

    def test_index_addresses_valid_rows(self):
        for m in (1, 2, 3, 5, 7):
            idx = relative_position_index(m)
            assert idx.min() >= 0
            assert idx.max() < (2 * m - 1) ** 2


def _region_oracle(h, w, m, s):
    """Independent oracle: tokens of a shifted window may attend iff their
    original rows form one contiguous run in rolled order (same for cols)."""

    def axis_runs(extent):
        # run id per rolled coordinate: a new run starts where the original
        # coordinate jumps by more than one
        orig = (np.arange(extent) + s) % extent
        run = np.zeros(extent, dtype=int)
        for i in range(1, extent):
            run[i] = run[i - 1] + (orig[i] != orig[i - 1] + 1)
        return run

    row_run, col_run = axis_runs(h), axis_runs(w)
    masks = []
    for wr in range(h // m):
        for wc in range(w // m):
            tokens = [(row_run[wr * m + a], col_run[wc * m + b])
                      for a in range(m) for b in range(m)]
            mat = np.zeros((m * m, m * m))
            for i, ti in enumerate(tokens):
                for j, tj in enumerate(tokens):
                    if ti != tj:
                        mat[i, j] = -MASK_PENALTY
            masks.append(mat)
    return np.stack(masks)


class TestAttentionMask:
    def test_zero_shift_all_zero(self):
        for h, w, m in ((4, 4, 2), (6, 6, 3), (8, 4, 2)):
            assert not build_attention_mask(h, w, m, 0).any()

    def test_symmetry(self):
        mask = build_attention_mask(6, 6, 3, 1)
        assert np.array_equal(mask, mask.transpose(0, 2, 1))

    def test_4x4_matches_brute_force_region_labels(self):
        got = build_attention_mask(4, 4, 2, 1, dtype=np.float64)
        want = _region_oracle(4, 4, 2, 1)
        assert np.array_equal(got, want)
        # corner (last) window mixes both axis cuts: most masked pairs
        masked_per_window = (got < 0).sum(axis=(1, 2))
        assert masked_per_window[0] == 0
        assert masked_per_window[-1] == masked_per_window.max() > 0

    @pytest.mark.parametrize("h,w,m,s", [(4, 4, 2, 1), (6, 6, 2, 1),
                                         (6, 6, 3, 1), (8, 8, 4, 2),
                                         (4, 8, 2, 1), (7, 7, 7, 3)])
    def test_matches_oracle_on_varied_geometry(self, h, w, m, s):
        got = build_attention_mask(h, w, m, s, dtype=np.float64)
        assert np.array_equal(got, _region_oracle(h, w, m, s))

    def test_masked_pairs_get_negligible_softmax_weight(self):
        rng = np.random.default_rng(7)
        mask = build_attention_mask(4, 4, 2, 1, dtype=np.float64)
        logits = rng.standard_normal(mask.shape)
        probs = T.softmax(Tensor(logits + mask), axis=-1).data
        assert probs[mask < 0].max() < 1e-8
        assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6)


class TestWmsa:
    def test_uniform_attention_is_window_mean(self):
        aw = init_window_attention(4, 2, 2, None, dtype=np.float64)
        aw.wv.data = np.eye(4)
        aw.wo.data = np.eye(4)
        x = rand((3, 4, 4), 8)
        out = wmsa(Tensor(x), aw, 2)
        assert np.allclose(out.data, np.repeat(x.mean(axis=1, keepdims=True),
                                               4, axis=1))

    def test_single_token_weight_is_one(self):
        rng = np.random.default_rng(9)
        aw = init_window_attention(4, 2, 1, rng, dtype=np.float64)
        x = rand((2, 1, 4), 10)
        out = wmsa(Tensor(x), aw, 2)
        expected = x @ aw.wv.data @ aw.wo.data
        assert np.allclose(out.data, expected)

    def test_permutation_equivariance_without_bias(self):
        rng = np.random.default_rng(11)
        aw = init_window_attention(6, 3, 2, rng, dtype=np.float64)
        aw.bias_table.data[...] = 0.0
        x = rand((2, 4, 6), 12)
        perm = np.random.default_rng(13).permutation(4)
        base = wmsa(Tensor(x), aw, 3).data
        permuted = wmsa(Tensor(x[:, perm]), aw, 3).data
        assert np.allclose(permuted, base[:, perm], atol=1e-12)

    def test_rows_sum_to_one_with_mask(self):
        rng = np.random.default_rng(14)
        aw = init_window_attention(4, 2, 2, rng, dtype=np.float64)
        mask = build_attention_mask(4, 4, 2, 1, dtype=np.float64)
        x = Tensor(rand((4, 4, 4), 15), requires_grad=True)
        out = wmsa(x, aw, 2, mask)
        assert np.all(np.isfinite(out.data))

    def test_head_divisibility_enforced(self):
        aw = init_window_attention(4, 2, 2, None)
        with pytest.raises(ShapeError):
            wmsa(Tensor(np.zeros((1, 4, 4))), aw, 3)


def _zero_blocks(c, heads, m):
    blk = init_swin_block(c, heads, m, None, dtype=np.float64)
    for t in blk.named().values():
        t.data = np.zeros_like(t.data)
    return blk


class TestSwinBlockPair:
    def test_zero_weights_pure_residual_identity(self):
        blocks = (_zero_blocks(4, 2, 2), _zero_blocks(4, 2, 2))
        x = rand((2, 16, 4), 16)
        out = swin_block_pair(Tensor(x), 4, 4, 2, 2, blocks)
        assert np.array_equal(out.data, x)

    @pytest.mark.parametrize("h,w,m,heads,c", [(4, 4, 2, 2, 4), (6, 6, 3, 1, 5),
                                               (8, 8, 2, 4, 8), (2, 2, 2, 2, 6)])
    def test_shape_preserved(self, h, w, m, heads, c):
        rng = np.random.default_rng(17)
        blocks = (init_swin_block(c, heads, m, rng, dtype=np.float64),
                  init_swin_block(c, heads, m, rng, dtype=np.float64))
        x = rand((2, h * w, c), 18)
        out = swin_block_pair(Tensor(x), h, w, m, heads, blocks)
        assert out.shape == x.shape
        assert np.all(np.isfinite(out.data))

    def test_all_parameters_receive_gradients(self):
        rng = np.random.default_rng(19)
        blocks = (init_swin_block(4, 2, 2, rng, dtype=np.float64),
                  init_swin_block(4, 2, 2, rng, dtype=np.float64))
        x = Tensor(rand((1, 16, 4), 20), requires_grad=True)
        out = swin_block_pair(x, 4, 4, 2, 2, blocks)
        backward(T.tensor_sum(out * out))
        for j, blk in enumerate(blocks):
            for name, t in blk.named().items():
                assert t.grad is not None and np.any(t.grad), f"blk{j}.{name}"
        assert x.grad is not None

    def test_single_token_window_disables_shift(self):
        rng = np.random.default_rng(21)
        blocks = (init_swin_block(4, 2, 1, rng, dtype=np.float64),
                  init_swin_block(4, 2, 1, rng, dtype=np.float64))
        x = rand((1, 4, 4), 22)
        out = swin_block_pair(Tensor(x), 2, 2, 1, 2, blocks)
        assert out.shape == (1, 4, 4)
