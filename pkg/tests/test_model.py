import math

import numpy as np
import pytest

from trendkern import numcore as nc
from trendkern.errors import ConfigError, DataFormatError, ShapeError
from trendkern.gradcheck import REL_TOL, check_model
from trendkern.model import (
    Batch, Features, KernConfig, TripletBatch, decode, encode, forward, init_params,
    load_checkpoint, param_shapes, predict, regression_loss, save_checkpoint, total_loss,
    triplet_loss,
)


def small_config(**kw):
    base = dict(input_len=6, output_len=4, ext_kg=True, int_kg=True, triplet_lambda=0.002,
                sample_range=1, feat_size=3, rnn_hidden_size=5, seed=0)
    base.update(kw)
    return KernConfig(**base)


def feats_for(n, ext_kg=True):
    e = np.arange(n) % 3
    return Features(e, np.arange(n) % 2, e % 2 if ext_kg else None)


def zeroed(params):
    for t in params.values():
        t.data[...] = 0.0
    return params


class TestInit:
    def test_deterministic(self):
        a = init_params(small_config(), 3, 2, 2)
        b = init_params(small_config(), 3, 2, 2)
        assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.values(), b.values()))

    def test_glorot_bounds_and_forget_bias(self):
        cfg = small_config(feat_size=10, rnn_hidden_size=50)
        params = init_params(cfg, 30, 20, 4, seed=3)
        for name, t in params.tensors.items():
            if t.data.ndim == 2:
                bound = math.sqrt(6.0 / sum(t.shape))
                assert np.abs(t.data).max() <= bound
                assert np.abs(t.data).max() > 0.9 * bound
        for side in ("enc", "dec"):
            b = params[f"{side}_b"].data
            np.testing.assert_array_equal(b[50:100], 1.0)
            assert not b[:50].any() and not b[100:].any()
        assert not params["out_b"].data.any()

    def test_input_dim_follows_ext_kg(self):
        on = param_shapes(small_config(feat_size=10), 3, 2, 2)
        off = param_shapes(small_config(feat_size=10, ext_kg=False), 3, 2)
        assert on["enc_wx"] == (31, 20) and off["enc_wx"] == (21, 20)
        assert "parent_emb" in on and "parent_emb" not in off

    def test_ext_kg_needs_categories(self):
        with pytest.raises(ConfigError):
            init_params(small_config(), 3, 2, None)

    @pytest.mark.parametrize("kw", [{"input_len": 0}, {"feat_size": 0}, {"margin": 0.0},
                                    {"triplet_lambda": -1.0}])
    def test_config_invariants(self, kw):
        with pytest.raises(ConfigError):
            small_config(**kw)


class TestForward:
    def test_zero_weights(self):
        params = zeroed(init_params(small_config(), 3, 2, 2))
        params["out_b"].data[:] = 0.25
        x = np.random.default_rng(0).uniform(size=(3, 6))
        state = encode(params, x, feats_for(3))
        assert not state.h.data.any() and not state.c.data.any()
        preds, _ = forward(params, x, feats_for(3), 4)
        np.testing.assert_array_equal(preds.data, 0.25)

    def test_default_hidden_size(self):
        cfg = KernConfig()
        params = init_params(cfg, 2, 2, 2)
        state = encode(params, np.full((1, 52), 0.3), feats_for(1))
        assert state.h.shape == (1, 50)

    def test_hand_single_step_lstm(self):
        cfg = small_config(input_len=1, output_len=1, feat_size=1, rnn_hidden_size=1, ext_kg=False)
        params = init_params(cfg, 1, 1)
        params["element_emb"].data[:] = 0.5
        params["group_emb"].data[:] = -0.25
        # wx rows: value, element, group; columns: i, f, g, o
        params["enc_wx"].data[:] = [[0.1, 0.2, 0.3, 0.4], [0.05, -0.1, 0.2, 0.0], [0.3, 0.1, -0.2, 0.25]]
        params["enc_b"].data[:] = [0.01, 1.0, -0.02, 0.03]
        x = 0.7
        feats = Features(np.array([0]), np.array([0]))
        state = encode(params, np.array([[x]]), feats)

        def sig(z):
            return 1.0 / (1.0 + math.exp(-z))

        pre = [0.1 * x + 0.05 * 0.5 + 0.3 * -0.25 + 0.01,
               0.2 * x - 0.1 * 0.5 + 0.1 * -0.25 + 1.0,
               0.3 * x + 0.2 * 0.5 - 0.2 * -0.25 - 0.02,
               0.4 * x + 0.0 * 0.5 + 0.25 * -0.25 + 0.03]
        c = sig(pre[0]) * math.tanh(pre[2])  # c_prev is zero
        h = sig(pre[3]) * math.tanh(c)
        assert state.c.data[0, 0] == pytest.approx(c, abs=1e-12)
        assert state.h.data[0, 0] == pytest.approx(h, abs=1e-12)

    @pytest.mark.parametrize("output_len", [12, 24])
    def test_forecast_length(self, output_len):
        params = init_params(small_config(), 3, 2, 2)
        preds, _ = forward(params, np.full((2, 6), 0.4), feats_for(2), output_len)
        assert preds.shape == (2, output_len)

    def test_prefix_is_causal(self):
        params = init_params(small_config(), 3, 2, 2, seed=4)
        x = np.random.default_rng(1).uniform(size=(3, 6))
        short = predict(params, x, feats_for(3), 4)
        long = predict(params, x, feats_for(3), 9)
        np.testing.assert_array_equal(long[:, :4], short)

    def test_forward_ignores_targets(self):
        cfg = small_config(int_kg=False)
        params = init_params(cfg, 3, 2, 2)
        x = np.random.default_rng(2).uniform(size=(2, 6))
        t1 = np.zeros((2, 4))
        t2 = t1.copy()
        t2[:, 2:] = 5.0
        parts1, parts2 = {}, {}
        total_loss(Batch(x, t1, feats_for(2)), params, cfg, parts=parts1)
        total_loss(Batch(x, t2, feats_for(2)), params, cfg, parts=parts2)
        preds = predict(params, x, feats_for(2), 4)
        # the later targets change only their own error terms
        assert parts2["regression"] - parts1["regression"] == pytest.approx(
            (np.abs(preds[:, 2:] - 5.0).sum() - np.abs(preds[:, 2:]).sum()) / 8, abs=1e-12)

    def test_predict_chunking_consistent(self):
        params = init_params(small_config(), 3, 2, 2, seed=1)
        x = np.random.default_rng(3).uniform(size=(7, 6))
        # BLAS blocking depends on row count, so agreement is to rounding only
        np.testing.assert_allclose(predict(params, x, feats_for(7), 4, chunk=3),
                                   predict(params, x, feats_for(7), 4), rtol=0, atol=1e-14)

    def test_parent_ids_ignored_without_ext_kg(self):
        cfg = small_config(ext_kg=False, int_kg=False)
        params = init_params(cfg, 3, 2)
        assert "parent_emb" not in params.tensors
        x = np.random.default_rng(4).uniform(size=(2, 6))
        plain = Features(np.array([0, 1]), np.array([0, 1]))
        with_parents = Features(np.array([0, 1]), np.array([0, 1]), np.array([1, 0]))
        np.testing.assert_array_equal(predict(params, x, with_parents, 4), predict(params, x, plain, 4))

    def test_parent_table_feeds_forecast_with_ext_kg(self):
        cfg = small_config(int_kg=False)
        params = init_params(cfg, 3, 2, 2)
        x = np.random.default_rng(4).uniform(size=(2, 6))
        base = predict(params, x, feats_for(2), 4)
        params["parent_emb"].data += 0.5
        assert not np.array_equal(predict(params, x, feats_for(2), 4), base)

    def test_batch_feature_mismatch(self):
        params = init_params(small_config(), 3, 2, 2)
        with pytest.raises(Exception):
            encode(params, np.zeros((3, 6)), feats_for(2))

    def test_decode_from_state(self):
        params = init_params(small_config(), 3, 2, 2, seed=2)
        x = np.random.default_rng(5).uniform(size=(2, 6))
        state = encode(params, x, feats_for(2))
        out = decode(params, state, x[:, -1], feats_for(2), 4)
        np.testing.assert_array_equal(out.data, predict(params, x, feats_for(2), 4))


class TestLosses:
    def test_regression_examples(self):
        assert regression_loss(nc.Tensor([[0.2, 0.4]]), [[0.1, 0.2]]).item() == pytest.approx(0.15, abs=1e-15)
        assert regression_loss(nc.Tensor([[0.2, 0.4]]), [[0.2, 0.4]]).item() == 0.0
        two = regression_loss(nc.Tensor([[0.1, 0.1], [0.3, 0.3]]), np.zeros((2, 2))).item()
        assert two == pytest.approx(0.2, abs=1e-15)

    def test_regression_shape_mismatch(self):
        with pytest.raises(Exception):
            regression_loss(nc.Tensor([[0.1, 0.2]]), [[0.1]])

    @staticmethod
    def on_circle(d_pos, d_neg):
        # unit vectors at chord distances d_pos and d_neg from the anchor
        def at(d):
            theta = 2 * math.asin(d / 2)
            return [math.cos(theta), math.sin(theta)]
        return np.array([[1.0, 0.0]]), np.array([at(d_pos)]), np.array([at(d_neg)])

    @pytest.mark.parametrize("margin,expected", [(0.3, 0.0), (0.5, 0.2)])
    def test_triplet_hinge(self, margin, expected):
        k, p, q = self.on_circle(0.2, 0.5)
        assert triplet_loss(k, p, q, margin).item() == pytest.approx(expected, abs=1e-12)

    def test_triplet_equal_pos_neg_is_margin(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=(4, 5))
        assert triplet_loss(rng.normal(size=(4, 5)), p, p.copy(), 0.7).item() == pytest.approx(0.7, abs=1e-12)

    def test_triplet_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            k, p, q = (rng.normal(size=(3, 4)) for _ in range(3))
            assert 0.0 <= triplet_loss(k, p, q, 0.5).item() <= 2.5

    def test_triplet_zero_norm(self):
        with pytest.raises(ShapeError):
            triplet_loss(np.zeros((1, 2)), np.ones((1, 2)), np.ones((1, 2)), 0.5)


class TestTotalLoss:
    @pytest.fixture
    def setup(self):
        rng = np.random.default_rng(6)
        batch = Batch(rng.uniform(size=(3, 6)), rng.uniform(size=(3, 4)), feats_for(3))
        trip = TripletBatch(rng.uniform(size=(3, 6)), feats_for(3), rng.uniform(size=(3, 6)), feats_for(3))
        return batch, trip

    def test_without_internal_knowledge(self, setup):
        batch, _ = setup
        cfg = small_config(int_kg=False)
        params = init_params(cfg, 3, 2, 2)
        forecast, _ = forward(params, batch.inputs, batch.feats, 4)
        assert total_loss(batch, params, cfg).item() == regression_loss(forecast, batch.targets).item()

    def test_zero_lambda(self, setup):
        batch, trip = setup
        cfg = small_config(triplet_lambda=0.0)
        params = init_params(cfg, 3, 2, 2)
        parts = {}
        total = total_loss(batch, params, cfg, trip, parts=parts)
        assert total.item() == parts["regression"]

    def test_linear_combination(self, setup):
        batch, trip = setup
        cfg = small_config(triplet_lambda=0.002)
        params = init_params(cfg, 3, 2, 2)
        parts = {}
        total = total_loss(batch, params, cfg, trip, parts=parts).item()
        assert total == pytest.approx(parts["regression"] + 0.002 * parts["triplet"], abs=1e-15)
        assert 0.1 + 0.002 * 0.5 == pytest.approx(0.101, abs=1e-15)
        assert total >= 0.0

    def test_internal_knowledge_requires_triplets(self, setup):
        batch, _ = setup
        cfg = small_config()
        with pytest.raises(ConfigError):
            total_loss(batch, init_params(cfg, 3, 2, 2), cfg, None)

    def test_anchor_encoding_unchanged_by_joint_pass(self, setup):
        batch, trip = setup
        cfg = small_config(triplet_lambda=0.0)
        params = init_params(cfg, 3, 2, 2, seed=8)
        parts = {}
        total_loss(batch, params, cfg, trip, parts=parts)
        preds = predict(params, batch.inputs, batch.feats, 4)
        assert parts["regression"] == pytest.approx(np.abs(preds - batch.targets).mean(), abs=1e-14)

    def test_gradient_matches_finite_differences(self):
        results = check_model()
        assert len(results) == 11
        assert max(r.max_rel_error for r in results) < REL_TOL


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        cfg = small_config()
        params = init_params(cfg, 3, 2, 2, seed=5)
        save_checkpoint(tmp_path / "m.ckpt", params, cfg, {"epoch": 3})
        back, cfg2, meta = load_checkpoint(tmp_path / "m.ckpt")
        assert cfg2 == cfg and meta == {"epoch": 3}
        assert back.names() == params.names()
        assert (back.element_vocab, back.group_vocab, back.category_vocab) == (3, 2, 2)
        for a, b in zip(params.values(), back.values()):
            assert a.data.tobytes() == b.data.tobytes()

    def test_bytes_deterministic(self, tmp_path):
        cfg = small_config()
        for name in ("a", "b"):
            save_checkpoint(tmp_path / name, init_params(cfg, 3, 2, 2), cfg)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_rejects_foreign_and_truncated(self, tmp_path):
        (tmp_path / "x").write_bytes(b"hello\n")
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / "x")
        cfg = small_config()
        save_checkpoint(tmp_path / "m", init_params(cfg, 3, 2, 2), cfg)
        (tmp_path / "m").write_bytes((tmp_path / "m").read_bytes() + b"\0" * 8)
        with pytest.raises(DataFormatError, match="trailing"):
            load_checkpoint(tmp_path / "m")
