"""Embedding-path identities, attention behavior, interest selection, checkpoints."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simemb import cooc, model
from simemb import numeric as nm
from simemb.numeric import Tensor


def identity_cooc(n_items):
    return cooc.finalize({}, n_items, threshold=1)


def random_cooc(rng, n_items, n_seqs=60, max_len=18):
    seqs = [
        rng.integers(1, n_items + 1, size=rng.integers(2, max_len)).tolist()
        for _ in range(n_seqs)
    ]
    return cooc.build(seqs, n_items, 3)


class TestSimEmbed:
    def test_identity_matrix_degenerates_to_lookup(self):
        params = model.init_params(5, d=4, n_interests=2, seq_len=3, seed=0)
        history = np.array([[1, 4, 0], [5, 5, 2]])
        out = model.sim_embed(identity_cooc(5), params.emb, history)
        np.testing.assert_allclose(out.data, params.emb.data[history], atol=1e-7)

    def test_convex_combination_row(self):
        cm = cooc.finalize({(1, 2): 1.0, (2, 1): 1.0}, 2)
        emb = Tensor(np.array([[0, 0], [2.0, 4.0], [6.0, 8.0]]))
        out = model.sim_embed(cm, emb, np.array([1]))
        np.testing.assert_allclose(out.data, [[4.0, 6.0]])  # (row1 + row2) / 2

    def test_padding_yields_zero_row(self):
        rng = np.random.default_rng(1)
        cm = random_cooc(rng, 8)
        params = model.init_params(8, d=4, n_interests=2, seq_len=4, seed=1)
        out = model.sim_embed(cm, params.emb, np.array([0]))
        np.testing.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-8)

    def test_matches_full_matrix_rows(self):
        rng = np.random.default_rng(2)
        cm = random_cooc(rng, 12)
        params = model.init_params(12, d=6, n_interests=2, seq_len=5, seed=2)
        history = rng.integers(0, 13, size=(7, 5))
        batched = model.sim_embed(cm, params.emb, history)
        atlas = model.full_item_matrix(cm, params.emb)
        np.testing.assert_allclose(batched.data, atlas.matrix[history], atol=1e-6)

    def test_out_of_range_index(self):
        cm = identity_cooc(3)
        params = model.init_params(3, d=2, n_interests=1, seq_len=2, seed=0)
        with pytest.raises(ValueError, match="out of range"):
            model.sim_embed(cm, params.emb, np.array([4]))


class TestFullItemMatrix:
    def test_identity(self):
        params = model.init_params(6, d=3, n_interests=2, seq_len=4, seed=3)
        atlas = model.full_item_matrix(identity_cooc(6), params.emb)
        np.testing.assert_allclose(atlas.matrix, params.emb.data, atol=1e-7)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(4)
        cm = random_cooc(rng, 10)
        params = model.init_params(10, d=5, n_interests=2, seq_len=4, seed=4)
        atlas = model.full_item_matrix(cm, params.emb)
        dense = cm.matrix.toarray() @ params.emb.data.astype(np.float64)
        np.testing.assert_allclose(atlas.matrix, dense, atol=1e-6)

    def test_identical_cooc_rows_give_identical_atlas_rows(self):
        # hand-built CSR where rows 1 and 2 are byte-identical
        matrix = cooc.SparseRowMatrix(
            n_rows=4, n_cols=4,
            row_offsets=np.array([0, 1, 3, 5, 6], dtype=np.int64),
            col_indices=np.array([0, 2, 3, 2, 3, 3], dtype=np.int32),
            values=np.array([1.0, 0.5, 0.5, 0.5, 0.5, 1.0]),
        )
        cm = cooc.CoocMatrix(matrix=matrix, threshold=3, density=1.0)
        params = model.init_params(3, d=4, n_interests=1, seq_len=2, seed=5)
        atlas = model.full_item_matrix(cm, params.emb)
        np.testing.assert_array_equal(atlas.matrix[1], atlas.matrix[2])


class TestEmbedTargets:
    def test_matches_sim_embed(self):
        rng = np.random.default_rng(5)
        cm = random_cooc(rng, 9)
        params = model.init_params(9, d=4, n_interests=2, seq_len=3, seed=5)
        idx = np.array([3, 3, 0, 9])
        a = model.embed_targets(cm, params.emb, idx)
        b = model.sim_embed(cm, params.emb, idx)
        np.testing.assert_allclose(a.data, b.data)

    def test_baseline_lookup(self):
        params = model.init_params(9, d=4, n_interests=2, seq_len=3, seed=5, mode="baseline")
        idx = np.array([1, 7])
        out = model.embed_targets(None, params.emb, idx)
        np.testing.assert_array_equal(out.data, params.emb.data[idx])


class TestExtractInterests:
    def test_single_unmasked_item(self):
        params = model.init_params(6, d=4, n_interests=3, seq_len=5, seed=6)
        h = Tensor(np.random.default_rng(0).normal(size=(5, 4)).astype(np.float32))
        mask = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
        interests = model.extract_interests(h, mask, params.w1, params.w2, params.pos)
        for k in range(3):
            np.testing.assert_allclose(interests.vectors.data[k], h.data[2], atol=1e-6)

    def test_uniform_attention_when_w1_zero(self):
        # tanh(0) = 0 makes every score equal, so attention averages unmasked rows
        rng = np.random.default_rng(1)
        h = Tensor(rng.normal(size=(4, 3)).astype(np.float32))
        w1 = Tensor(np.zeros((12, 3), dtype=np.float32))
        w2 = Tensor(rng.normal(size=(1, 12)).astype(np.float32))
        mask = np.array([1.0, 1.0, 1.0, 0.0])
        interests = model.extract_interests(h, mask, w1, w2, None)
        np.testing.assert_allclose(interests.vectors.data[0], h.data[:3].mean(axis=0), atol=1e-6)

    def test_fully_masked_raises(self):
        params = model.init_params(4, d=2, n_interests=2, seq_len=3, seed=7)
        h = Tensor(np.ones((3, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="masked"):
            model.extract_interests(h, np.zeros(3), params.w1, params.w2, params.pos)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_attention_rows_are_distributions(self, seed):
        rng = np.random.default_rng(seed)
        b, L, d, k = 3, 6, 4, 2
        params = model.init_params(10, d=d, n_interests=k, seq_len=L, seed=seed)
        h = Tensor(rng.normal(size=(b, L, d)).astype(np.float32))
        mask = (rng.random((b, L)) < 0.7).astype(np.float32)
        mask[:, 0] = 1.0
        interests = model.extract_interests(h, mask, params.w1, params.w2, params.pos)
        attn = interests.attention.data
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-5)
        assert (attn[np.broadcast_to(mask[:, None, :] == 0, attn.shape)] == 0).all()


class TestSelectInterest:
    def test_single_interest(self):
        v = Tensor(np.random.default_rng(0).normal(size=(1, 4)).astype(np.float32))
        e = Tensor(np.random.default_rng(1).normal(size=(4,)).astype(np.float32))
        picked, k = model.select_interest(v, e)
        assert k == 0
        np.testing.assert_array_equal(picked.data, v.data[0])

    def test_aligned_target(self):
        v = Tensor(np.eye(4, dtype=np.float32)[:3] * 2.0)   # rows along axes 0..2
        e = Tensor(np.array([0, 0, 1, 0], dtype=np.float32))
        _, k = model.select_interest(v, e)
        assert k == 2

    def test_batched_with_tie_goes_low(self):
        v = Tensor(np.stack([np.ones((3, 2)), np.ones((3, 2))]).astype(np.float32))
        e = Tensor(np.ones((2, 2), dtype=np.float32))
        _, k = model.select_interest(v, e)
        np.testing.assert_array_equal(k, [0, 0])

    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=0.01, max_value=100.0), st.integers(min_value=0, max_value=1000))
    def test_positive_scaling_invariance(self, c, seed):
        rng = np.random.default_rng(seed)
        v = Tensor(rng.normal(size=(4, 3)).astype(np.float32))
        e = rng.normal(size=3).astype(np.float32)
        _, k1 = model.select_interest(v, Tensor(e))
        _, k2 = model.select_interest(v, Tensor(e * c))
        assert k1 == k2


class TestModeEquivalence:
    def test_identity_cooc_equals_baseline_loss(self):
        # with A = I the enhanced path is numerically the ID-embedding path
        from simemb import train as train_mod

        rng = np.random.default_rng(8)
        n_items, L = 10, 4
        histories = rng.integers(0, n_items + 1, size=(3, L))
        masks = (histories != 0).astype(np.float32)
        masks[:, -1] = 1
        histories[:, -1] = rng.integers(1, n_items + 1, size=3)
        targets = rng.integers(1, n_items + 1, size=3)
        negatives = rng.integers(1, n_items + 1, size=6)

        sim = model.init_params(n_items, d=4, n_interests=2, seq_len=L, seed=9, mode="simemb")
        base = model.init_params(n_items, d=4, n_interests=2, seq_len=L, seed=9, mode="baseline")
        l_sim, g_sim = train_mod.batch_loss((histories, masks, targets), negatives, sim,
                                            identity_cooc(n_items))
        l_base, g_base = train_mod.batch_loss((histories, masks, targets), negatives, base, None)
        assert l_sim == pytest.approx(l_base, abs=1e-6)
        for a, b in zip(g_sim, g_base):
            np.testing.assert_allclose(a, b, atol=1e-5)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = model.init_params(7, d=3, n_interests=2, seq_len=4, seed=10)
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(path, params, cooc_path="artifacts/a.cooc")
        loaded, cooc_path = model.load_checkpoint(path)
        assert cooc_path == "artifacts/a.cooc"
        assert loaded.mode == "simemb" and loaded.seq_len == 4
        for a, b in zip(params.trainables(), loaded.trainables()):
            np.testing.assert_allclose(a.data, b.data, atol=1e-7)

    def test_baseline_without_positional(self, tmp_path):
        params = model.init_params(5, d=2, n_interests=2, seq_len=3, seed=11,
                                   mode="baseline", positional=False)
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(path, params)
        loaded, cooc_path = model.load_checkpoint(path)
        assert loaded.mode == "baseline" and loaded.pos is None and cooc_path == ""

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"WHAT" + b"\x00" * 64)
        with pytest.raises(ValueError, match="SIMR"):
            model.load_checkpoint(path)


def test_gradients_flow_through_whole_model():
    rng = np.random.default_rng(12)
    cm = random_cooc(rng, 10)
    params = model.init_params(10, d=4, n_interests=2, seq_len=3, seed=12, dtype=np.float64)
    history = np.array([[2, 3, 4]])
    mask = np.ones((1, 3))
    target = np.array([5])

    def loss_fn():
        h = model.sim_embed(cm, params.emb, history)
        interests = model.extract_interests(h, mask, params.w1, params.w2, params.pos)
        e_t = model.embed_targets(cm, params.emb, target)
        v, _ = model.select_interest(interests.vectors, e_t)
        return nm.mean_all(nm.row_dot(v, e_t))

    err = nm.grad_check(loss_fn, params.trainables(), seed=0)
    assert err <= 1e-4
