"""Layer behaviour: embeddings, recurrent cells, attention, dropout, cosine."""

import math

import numpy as np
import pytest

from qakb.errors import ShapeMismatch
from qakb.nn import (
    Dense,
    EmbeddingTable,
    GRUCell,
    LSTMCell,
    OOV_TOKEN,
    attention_matrix,
    bidirectional_encode,
    cosine,
    dropout,
    finite_diff_check,
    run_recurrent,
    self_attention,
)
from qakb.nn.tensor import Tensor, param, tsum


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestEmbedding:
    def setup_method(self):
        self.rng = np.random.default_rng(3)
        self.table = EmbeddingTable.random(["red", "green"], 4, self.rng)

    def test_known_token_exact_row(self):
        idx = self.table.vocab["green"]
        got = self.table.embed(["green"])
        np.testing.assert_allclose(got.data[0], self.table.vectors.data[idx])

    def test_unknown_maps_to_oov(self):
        got = self.table.embed(["xyzzy"])
        np.testing.assert_allclose(
            got.data[0], self.table.vectors.data[self.table.oov_index]
        )

    def test_empty_sequence(self):
        assert self.table.embed([]).shape == (0, 4)

    def test_oov_always_present(self):
        assert OOV_TOKEN in self.table.vocab

    def test_gradients_flow_to_rows(self):
        loss = tsum(self.table.embed(["red", "red"]))
        loss.backward()
        grad = self.table.vectors.grad
        np.testing.assert_allclose(grad[self.table.vocab["red"]], 2.0)


class TestDense:
    def test_vector_and_matrix_inputs_agree(self):
        rng = np.random.default_rng(5)
        layer = Dense(3, 2, rng)
        x = rng.normal(size=(4, 3))
        batched = layer(Tensor(x)).data
        single = np.stack([layer(Tensor(x[i])).data for i in range(4)])
        np.testing.assert_allclose(batched, single, atol=1e-12)

    def test_relu_activation(self):
        rng = np.random.default_rng(5)
        layer = Dense(3, 2, rng, activation="relu")
        out = layer(Tensor(np.array([5.0, -5.0, 0.1])))
        assert (out.data >= 0).all()

    def test_dim_mismatch(self):
        layer = Dense(3, 2, np.random.default_rng(0))
        with pytest.raises(ShapeMismatch):
            layer(Tensor(np.ones(4)))

    def test_gradcheck(self):
        rng = np.random.default_rng(9)
        layer = Dense(4, 5, rng)
        x = Tensor(rng.normal(size=(4,)))
        params = list(layer.parameters().values())
        assert finite_diff_check(lambda: tsum(layer(x)), params) < 1e-4


class TestGRU:
    def test_zero_weights_zero_input_zero_states(self):
        cell = GRUCell(2, 3, np.random.default_rng(0))
        for t in cell._p.values():
            t.data[...] = 0.0
        states, last = run_recurrent(cell, Tensor(np.zeros((4, 2))))
        np.testing.assert_allclose(states.data, 0.0)
        np.testing.assert_allclose(last.data, 0.0)

    def test_scalar_hand_oracle(self):
        """One step with 1-d weights against the gate equations by hand."""
        cell = GRUCell(1, 1, np.random.default_rng(0))
        w = {
            "W_z": 0.3, "U_z": -0.2, "b_z": 0.1,
            "W_r": 0.5, "U_r": 0.4, "b_r": -0.3,
            "W_n": 0.7, "U_n": 0.6, "b_n": -0.1,
        }
        for k, v in w.items():
            cell._p[k].data[...] = v
        x = 1.0
        z = _sigmoid(w["W_z"] * x + w["b_z"])
        r = _sigmoid(w["W_r"] * x + w["b_r"])
        n = math.tanh(w["W_n"] * x + r * (w["U_n"] * 0.0) + w["b_n"])
        expected = (1.0 - z) * n
        _, last = run_recurrent(cell, Tensor(np.array([[x]])))
        np.testing.assert_allclose(last.data, [expected], atol=1e-12)

    def test_backward_direction_is_reversed_forward(self):
        rng = np.random.default_rng(11)
        cell = GRUCell(3, 4, rng)
        x = rng.normal(size=(5, 3))
        bwd, last_b = run_recurrent(cell, Tensor(x), "backward")
        fwd_rev, last_f = run_recurrent(cell, Tensor(x[::-1].copy()), "forward")
        np.testing.assert_allclose(bwd.data, fwd_rev.data[::-1], atol=1e-12)
        np.testing.assert_allclose(last_b.data, last_f.data, atol=1e-12)

    def test_empty_sequence_zero_last(self):
        cell = GRUCell(2, 3, np.random.default_rng(0))
        states, last = run_recurrent(cell, Tensor(np.zeros((0, 2))))
        assert states.shape == (0, 3)
        np.testing.assert_allclose(last.data, 0.0)

    def test_gradcheck_through_time(self):
        rng = np.random.default_rng(13)
        cell = GRUCell(2, 3, rng)
        x = Tensor(rng.normal(size=(4, 2)))

        def loss():
            _, last = run_recurrent(cell, x)
            return tsum(last * last)

        assert finite_diff_check(loss, list(cell.parameters().values())) < 1e-4


class TestLSTM:
    def test_scalar_hand_oracle(self):
        cell = LSTMCell(1, 1, np.random.default_rng(0))
        w = {
            "W_i": 0.3, "U_i": 0.2, "b_i": -0.1,
            "W_f": -0.5, "U_f": 0.4, "b_f": 0.3,
            "W_g": 0.7, "U_g": -0.6, "b_g": 0.1,
            "W_o": 0.2, "U_o": 0.1, "b_o": 0.0,
        }
        for k, v in w.items():
            cell._p[k].data[...] = v
        x = 0.8
        i = _sigmoid(w["W_i"] * x + w["b_i"])
        g = math.tanh(w["W_g"] * x + w["b_g"])
        o = _sigmoid(w["W_o"] * x + w["b_o"])
        c1 = i * g
        expected = o * math.tanh(c1)
        _, last = run_recurrent(cell, Tensor(np.array([[x]])))
        np.testing.assert_allclose(last.data, [expected], atol=1e-12)

    def test_gradcheck_through_time(self):
        rng = np.random.default_rng(17)
        cell = LSTMCell(2, 2, rng)
        x = Tensor(rng.normal(size=(3, 2)))

        def loss():
            states, _ = run_recurrent(cell, x)
            return tsum(states)

        assert finite_diff_check(loss, list(cell.parameters().values())) < 1e-4


class TestBidirectional:
    def test_shapes_and_composition(self):
        rng = np.random.default_rng(19)
        f, b = GRUCell(3, 4, rng, "f"), GRUCell(3, 4, rng, "b")
        x = rng.normal(size=(5, 3))
        states, last = bidirectional_encode(f, b, Tensor(x))
        assert states.shape == (5, 8)
        assert last.shape == (8,)
        fwd_states, fwd_last = run_recurrent(f, Tensor(x), "forward")
        np.testing.assert_allclose(states.data[:, :4], fwd_states.data)
        np.testing.assert_allclose(last.data[:4], fwd_last.data)

    def test_empty_input(self):
        rng = np.random.default_rng(19)
        f, b = GRUCell(3, 4, rng, "f"), GRUCell(3, 4, rng, "b")
        states, last = bidirectional_encode(f, b, Tensor(np.zeros((0, 3))))
        assert states.shape == (0, 8)
        np.testing.assert_allclose(last.data, 0.0)


class TestSelfAttention:
    def test_single_row_identity(self):
        x = Tensor(np.array([[1.0, -2.0, 0.5]]))
        np.testing.assert_allclose(self_attention(x).data, x.data, atol=1e-12)

    def test_identical_rows_mean(self):
        row = np.array([0.3, -1.2, 0.7])
        x = Tensor(np.stack([row, row]))
        out = self_attention(x)
        mean = x.data.mean(axis=0)
        np.testing.assert_allclose(out.data[0], mean, atol=1e-12)
        np.testing.assert_allclose(out.data[1], mean, atol=1e-12)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(23)
        a = attention_matrix(Tensor(rng.normal(size=(6, 4))))
        np.testing.assert_allclose(a.sum(axis=1), np.ones(6), atol=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(29)
        x = param(rng.normal(size=(4, 3)))
        w = Tensor(rng.normal(size=(4, 3)))
        assert finite_diff_check(lambda: tsum(self_attention(x) * w), [x]) < 1e-4


class TestDropout:
    def test_p_zero_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert dropout(x, 0.0, "train", np.random.default_rng(0)) is x

    def test_eval_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert dropout(x, 0.9, "eval", None) is x

    def test_mean_preserved(self):
        """Inverted scaling keeps the expected value within 2%."""
        rng = np.random.default_rng(31)
        x = Tensor(np.ones(10_000))
        out = dropout(x, 0.1, "train", rng)
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_survivors_scaled(self):
        rng = np.random.default_rng(37)
        out = dropout(Tensor(np.ones(1000)), 0.2, "train", rng)
        kept = out.data[out.data != 0.0]
        np.testing.assert_allclose(kept, 1.0 / 0.8)

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            dropout(Tensor(np.ones(2)), 1.0, "train", np.random.default_rng(0))


class TestCosine:
    def test_self_similarity(self):
        a = Tensor(np.array([1.0, 2.0, 3.0]))
        assert cosine(a, a).item() == pytest.approx(1.0)

    def test_orthogonal(self):
        a = Tensor(np.array([1.0, 0.0]))
        b = Tensor(np.array([0.0, 1.0]))
        assert cosine(a, b).item() == pytest.approx(0.0)

    def test_hand_value(self):
        a = Tensor(np.array([1.0, 0.0]))
        b = Tensor(np.array([1.0, 1.0]))
        assert cosine(a, b).item() == pytest.approx(math.sqrt(0.5), abs=1e-9)

    def test_zero_norm_returns_zero(self):
        a = Tensor(np.zeros(3))
        b = Tensor(np.ones(3))
        assert cosine(a, b).item() == 0.0

    def test_range(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            a = Tensor(rng.normal(size=5))
            b = Tensor(rng.normal(size=5))
            assert -1.0 - 1e-12 <= cosine(a, b).item() <= 1.0 + 1e-12

    def test_gradcheck(self):
        rng = np.random.default_rng(43)
        a = param(rng.normal(size=4) + 1.0)
        b = param(rng.normal(size=4) - 1.0)
        assert finite_diff_check(lambda: cosine(a, b), [a, b]) < 1e-4
