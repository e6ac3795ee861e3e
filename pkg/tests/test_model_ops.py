from __future__ import annotations

import numpy as np
import pytest

import oracles
from toxens.models.ops import (attention_pool, bidirectional_combine, conv_maxpool,
                               gru_cell, gru_seq_forward, lstm_cell,
                               lstm_seq_forward, sigmoid, spatial_word_dropout)
from toxens.rng import derive_rng

N_INSTANCES = 100
TOL = 1e-12


def rand_params_lstm(rng, d_x, H):
    return {"W": rng.normal(size=(d_x, 4 * H)), "U": rng.normal(size=(H, 4 * H)),
            "b": rng.normal(size=4 * H)}


def rand_params_gru(rng, d_x, H):
    return {"W": rng.normal(size=(d_x, 3 * H)), "U": rng.normal(size=(H, 3 * H)),
            "b": rng.normal(size=3 * H)}


class TestLstmCell:
    def test_scalar_oracle_equivalence(self):
        rng = derive_rng(0, "test", "lstm")
        for _ in range(N_INSTANCES):
            d_x, H = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            p = rand_params_lstm(rng, d_x, H)
            x = rng.normal(size=d_x)
            h0 = rng.normal(size=H)
            c0 = rng.normal(size=H)
            h, c = lstm_cell(x, h0, c0, p)
            h_ref, c_ref = oracles.lstm_cell_scalar(
                x.tolist(), h0.tolist(), c0.tolist(),
                p["W"].tolist(), p["U"].tolist(), p["b"].tolist())
            np.testing.assert_allclose(h, h_ref, atol=TOL, rtol=0)
            np.testing.assert_allclose(c, c_ref, atol=TOL, rtol=0)

    def test_zero_everything(self):
        p = {"W": np.zeros((2, 8)), "U": np.zeros((2, 8)), "b": np.zeros(8)}
        h, c = lstm_cell(np.zeros(2), np.zeros(2), np.zeros(2), p)
        assert np.array_equal(h, np.zeros(2)) and np.array_equal(c, np.zeros(2))

    def test_forget_gate_saturated_open(self):
        # +20 on the forget-gate bias, everything else off: c carries through
        H = 3
        p = {"W": np.zeros((2, 4 * H)), "U": np.zeros((H, 4 * H)),
             "b": np.zeros(4 * H)}
        p["b"][H:2 * H] = 20.0
        c_prev = np.array([0.3, -0.5, 1.2])
        _, c = lstm_cell(np.ones(2), np.zeros(H), c_prev, p)
        np.testing.assert_allclose(c, c_prev, atol=1e-6)


class TestGruCell:
    def test_scalar_oracle_equivalence(self):
        rng = derive_rng(0, "test", "gru")
        for _ in range(N_INSTANCES):
            d_x, H = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            p = rand_params_gru(rng, d_x, H)
            x = rng.normal(size=d_x)
            h0 = rng.normal(size=H)
            h = gru_cell(x, h0, p)
            h_ref = oracles.gru_cell_scalar(
                x.tolist(), h0.tolist(),
                p["W"].tolist(), p["U"].tolist(), p["b"].tolist())
            np.testing.assert_allclose(h, h_ref, atol=TOL, rtol=0)

    def test_update_gate_saturated_keeps_state(self):
        # z ~= 1 when the update-gate bias is +20, so h ~= h_prev
        H = 3
        rng = derive_rng(1, "test", "gru-sat")
        p = rand_params_gru(rng, 2, H)
        p["b"][:H] = 20.0
        h_prev = rng.normal(size=H)
        h = gru_cell(rng.normal(size=2), h_prev, p)
        np.testing.assert_allclose(h, h_prev, atol=1e-6)


class TestAttention:
    def params(self, rng, H, A):
        return {"W": rng.normal(size=(H, A)), "b": rng.normal(size=A),
                "u": rng.normal(size=A)}

    def test_scalar_oracle_equivalence(self):
        rng = derive_rng(0, "test", "att")
        for _ in range(N_INSTANCES):
            B, T, H, A = 1, int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
            p = self.params(rng, H, A)
            Hs = rng.normal(size=(B, T, H))
            mask = np.ones((B, T))
            if T > 1:
                n_masked = int(rng.integers(0, T))
                mask[0, rng.permutation(T)[:n_masked]] = 0.0
            pooled, alpha = attention_pool(Hs, mask, p)
            p_ref, a_ref = oracles.attention_pool_scalar(
                Hs[0].tolist(), mask[0].tolist(),
                p["W"].tolist(), p["b"].tolist(), p["u"].tolist())
            np.testing.assert_allclose(pooled[0], p_ref, atol=TOL, rtol=0)
            np.testing.assert_allclose(alpha[0], a_ref, atol=TOL, rtol=0)

    def test_single_unmasked_position_gets_all_weight(self):
        rng = derive_rng(2, "test", "att-one")
        Hs = rng.normal(size=(1, 4, 3))
        mask = np.array([[0.0, 0.0, 1.0, 0.0]])
        pooled, alpha = attention_pool(Hs, mask, self.params(rng, 3, 2))
        np.testing.assert_allclose(alpha, [[0, 0, 1, 0]], atol=TOL)
        np.testing.assert_allclose(pooled[0], Hs[0, 2], atol=TOL)

    def test_identical_rows_uniform_weights(self):
        rng = derive_rng(3, "test", "att-uni")
        row = rng.normal(size=3)
        Hs = np.tile(row, (1, 5, 1))
        pooled, alpha = attention_pool(Hs, np.ones((1, 5)), self.params(rng, 3, 2))
        np.testing.assert_allclose(alpha, np.full((1, 5), 0.2), atol=TOL)
        np.testing.assert_allclose(pooled[0], row, atol=TOL)

    def test_all_masked_rejected(self):
        rng = derive_rng(4, "test", "att-mask")
        with pytest.raises(ValueError):
            attention_pool(rng.normal(size=(2, 3, 2)),
                           np.array([[1.0, 0, 0], [0.0, 0, 0]]),
                           self.params(rng, 2, 2))

    def test_weights_sum_to_one(self):
        rng = derive_rng(5, "test", "att-sum")
        for _ in range(20):
            Hs = rng.normal(size=(3, 6, 4))
            mask = (rng.random((3, 6)) < 0.7).astype(float)
            mask[:, 0] = 1.0
            _, alpha = attention_pool(Hs, mask, self.params(rng, 4, 3))
            np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=TOL)
            assert (alpha[mask == 0] == 0).all()


class TestConvMaxpool:
    def test_scalar_oracle_equivalence(self):
        rng = derive_rng(0, "test", "conv")
        for _ in range(N_INSTANCES):
            T = int(rng.integers(2, 7))
            d = int(rng.integers(1, 4))
            widths = sorted(set(int(w) for w in rng.integers(1, min(T, 4) + 1, size=2)))
            filters = {w: {"K": rng.normal(size=(int(rng.integers(1, 3)), w, d)),
                           "b": rng.normal(size=0).copy()} for w in widths}
            for w in widths:
                n_f = filters[w]["K"].shape[0]
                filters[w]["b"] = rng.normal(size=n_f)
            length = int(rng.integers(1, T + 1))
            X = rng.normal(size=(1, T, d))
            X[0, length:] = 0.0  # zero padding beyond the true length
            feat = conv_maxpool(X, np.array([length]), filters)
            ref = oracles.conv_maxpool_scalar(
                X[0].tolist(), length,
                [(filters[w]["K"].tolist(), filters[w]["b"].tolist())
                 for w in sorted(filters)])
            np.testing.assert_allclose(feat[0], ref, atol=TOL, rtol=0)

    def test_output_shape(self):
        rng = derive_rng(1, "test", "conv-shape")
        filters = {2: {"K": rng.normal(size=(4, 2, 3)), "b": rng.normal(size=4)},
                   3: {"K": rng.normal(size=(5, 3, 3)), "b": rng.normal(size=5)}}
        X = rng.normal(size=(6, 10, 3))
        lengths = np.array([10, 5, 3, 2, 1, 10])
        assert conv_maxpool(X, lengths, filters).shape == (6, 9)

    def test_relu_floor(self):
        # strongly negative bias drives every activation to the ReLU floor
        filters = {2: {"K": np.zeros((3, 2, 2)), "b": np.full(3, -5.0)}}
        X = np.ones((2, 4, 2))
        feat = conv_maxpool(X, np.array([4, 4]), filters)
        assert np.array_equal(feat, np.zeros((2, 3)))

    def test_padding_invariance(self):
        rng = derive_rng(2, "test", "conv-pad")
        filters = {2: {"K": rng.normal(size=(3, 2, 2)), "b": rng.normal(size=3)},
                   3: {"K": rng.normal(size=(2, 3, 2)), "b": rng.normal(size=2)}}
        body = rng.normal(size=(1, 5, 2))
        short = np.concatenate([body, np.zeros((1, 2, 2))], axis=1)
        long = np.concatenate([body, np.zeros((1, 6, 2))], axis=1)
        f1 = conv_maxpool(short, np.array([5]), filters)
        f2 = conv_maxpool(long, np.array([5]), filters)
        np.testing.assert_allclose(f1, f2, atol=TOL)


class TestSequencePaddingInvariance:
    """Trailing padding must not change any state at real positions."""

    def run_case(self, forward, param_maker):
        rng = derive_rng(7, "test", "seq-pad")
        d_x, H, L = 3, 4, 5
        params = param_maker(rng, d_x, H)
        body = rng.normal(size=(1, L, d_x))
        for extra in (0, 1, 4):
            X = np.concatenate([body, np.zeros((1, extra, d_x))], axis=1)
            mask = np.concatenate([np.ones((1, L)), np.zeros((1, extra))], axis=1)
            Hs, _ = forward(X, mask, params)
            yield Hs[0, :L], Hs[0, L:] if extra else None

    def test_lstm(self):
        outs = list(self.run_case(lstm_seq_forward, rand_params_lstm))
        base = outs[0][0]
        for real, padded in outs[1:]:
            np.testing.assert_allclose(real, base, atol=TOL)
            # carried state repeats unchanged through the padding
            np.testing.assert_allclose(padded, np.tile(base[-1], (len(padded), 1)),
                                       atol=TOL)

    def test_gru(self):
        outs = list(self.run_case(gru_seq_forward, rand_params_gru))
        base = outs[0][0]
        for real, padded in outs[1:]:
            np.testing.assert_allclose(real, base, atol=TOL)
            np.testing.assert_allclose(padded, np.tile(base[-1], (len(padded), 1)),
                                       atol=TOL)

    def test_seq_step_matches_cell(self):
        # the sequence forward at full mask equals repeated single-cell calls
        rng = derive_rng(8, "test", "seq-cell")
        d_x, H, T = 2, 3, 4
        p = rand_params_lstm(rng, d_x, H)
        X = rng.normal(size=(1, T, d_x))
        Hs, _ = lstm_seq_forward(X, np.ones((1, T)), p)
        h = np.zeros(H)
        c = np.zeros(H)
        for t in range(T):
            h, c = lstm_cell(X[0, t], h, c, p)
            np.testing.assert_allclose(Hs[0, t], h, atol=TOL)


class TestBidirectional:
    def test_mean(self):
        a = np.arange(12.0).reshape(1, 4, 3)
        b = np.ones((1, 4, 3))
        np.testing.assert_allclose(bidirectional_combine(a, b), 0.5 * (a + b))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bidirectional_combine(np.zeros((1, 3, 2)), np.zeros((1, 2, 2)))


class TestSpatialWordDropout:
    def test_eval_mode_identity(self):
        ids = np.array([[3, 4, 0, 0]])
        rng = derive_rng(0, "test", "dropout")
        assert np.array_equal(spatial_word_dropout(ids, 0.5, rng, training=False), ids)

    def test_padding_never_dropped(self):
        ids = np.array([[5, 0, 0, 7]] * 50)
        out = spatial_word_dropout(ids, 0.9, derive_rng(1, "test", "dropout"))
        assert (out[:, 1:3] == 0).all()
        assert set(np.unique(out[:, [0, 3]])) <= {1, 5, 7}

    def test_drop_rate_law_of_large_numbers(self):
        ids = np.full((1000, 100), 9)
        out = spatial_word_dropout(ids, 0.1, derive_rng(2, "test", "dropout"))
        rate = (out == 1).mean()
        assert rate == pytest.approx(0.1, abs=0.005)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            spatial_word_dropout(np.zeros((1, 2), dtype=int), 1.5,
                                 derive_rng(3, "test", "dropout"))


class TestSigmoid:
    def test_extremes_stable(self):
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0], atol=1e-12)
