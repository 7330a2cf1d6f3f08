import numpy as np
import pytest

from negmtl import autodiff as ad
from negmtl.autodiff import Tape, Tensor, backward
from negmtl.layers import (
    EmbeddingTable,
    Linear,
    LstmParams,
    bilstm,
    dropout,
    linear_rows,
    linear_vec,
    lstm_run,
    lstm_step,
    xavier_uniform,
)
from oracles import assert_op_grads, weighted_sum


def rng(seed=0):
    return np.random.default_rng(seed)


class TestInit:
    def test_xavier_bounds(self):
        w = xavier_uniform((8, 2), rng())
        a = np.sqrt(6.0 / 10.0)
        assert w.shape == (8, 2)
        assert np.all(np.abs(w) <= a)
        assert np.abs(w).max() > 0.5 * a  # actually fills the range

    def test_embedding_pad_row_is_zero(self):
        table = EmbeddingTable.init(5, 3, rng())
        np.testing.assert_array_equal(table.weights.data[0], 0.0)
        assert np.all(np.abs(table.weights.data[1:]) <= 0.1)
        assert np.any(table.weights.data[1:] != 0.0)

    def test_lstm_shapes_and_forget_bias(self):
        p = LstmParams.init(3, 4, rng())
        assert p.w.data.shape == (16, 3)
        assert p.u.data.shape == (16, 4)
        assert p.b.data.shape == (16,)
        np.testing.assert_array_equal(p.b.data[4:8], 1.0)
        np.testing.assert_array_equal(p.b.data[:4], 0.0)
        np.testing.assert_array_equal(p.b.data[8:], 0.0)
        assert p.hidden_dim == 4

    def test_same_seed_same_params(self):
        a = LstmParams.init(3, 4, rng(42))
        b = LstmParams.init(3, 4, rng(42))
        assert a.w.data.tobytes() == b.w.data.tobytes()
        assert a.u.data.tobytes() == b.u.data.tobytes()

    def test_linear_zero_bias(self):
        p = Linear.init(4, 2, rng())
        assert p.w.data.shape == (2, 4)
        np.testing.assert_array_equal(p.b.data, 0.0)


class TestEmbedding:
    def test_lookup_gathers_rows(self):
        table = EmbeddingTable.init(5, 3, rng())
        out = table.lookup([2, 4, 2])
        np.testing.assert_array_equal(out.data, table.weights.data[[2, 4, 2]])

    def test_pad_id_embeds_to_zero(self):
        table = EmbeddingTable.init(5, 3, rng())
        np.testing.assert_array_equal(table.lookup([0]).data, np.zeros((1, 3)))

    def test_out_of_range_id_rejected(self):
        table = EmbeddingTable.init(5, 3, rng())
        with pytest.raises(Exception, match="out of range"):
            table.lookup([5])

    def test_gradient_touches_only_looked_up_rows(self):
        table = EmbeddingTable.init(5, 3, rng())
        with Tape():
            backward(ad.sum_all(table.lookup([1, 3])))
        g = table.weights.grad
        np.testing.assert_array_equal(g[[1, 3]], 1.0)
        np.testing.assert_array_equal(g[[0, 2, 4]], 0.0)

    def test_duplicate_ids_accumulate_gradient(self):
        table = EmbeddingTable.init(5, 3, rng())
        with Tape():
            out = table.lookup([2, 2])
            backward(ad.sum_all(out))
        g = table.weights.grad
        np.testing.assert_array_equal(g[2], 2.0)
        np.testing.assert_array_equal(g[1], 0.0)


class TestLstm:
    def test_step_shapes(self):
        p = LstmParams.init(3, 4, rng())
        h, c = lstm_step(p, Tensor(np.ones(3)), Tensor(np.zeros(4)), Tensor(np.zeros(4)))
        assert h.data.shape == (4,)
        assert c.data.shape == (4,)
        assert np.all(np.abs(h.data) < 1.0)  # tanh-squashed

    def test_step_matches_direct_formula(self):
        p = LstmParams.init(2, 2, rng(3))
        x = np.array([0.3, -0.7])
        h0 = np.array([0.1, 0.2])
        c0 = np.array([-0.2, 0.4])
        h, c = lstm_step(p, Tensor(x), Tensor(h0), Tensor(c0))

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        z = p.w.data @ x + p.u.data @ h0 + p.b.data
        i, f, g, o = z[0:2], z[2:4], z[4:6], z[6:8]
        c_ref = sig(f) * c0 + sig(i) * np.tanh(g)
        h_ref = sig(o) * np.tanh(c_ref)
        np.testing.assert_allclose(c.data, c_ref, rtol=1e-12)
        np.testing.assert_allclose(h.data, h_ref, rtol=1e-12)

    def test_all_zero_parameters_keep_zero_state(self):
        zero = lambda *shape: Tensor(np.zeros(shape), requires_grad=True)
        p = LstmParams(zero(8, 3), zero(8, 2), zero(8))
        h, c = lstm_step(p, Tensor(np.ones(3)), Tensor(np.zeros(2)), Tensor(np.zeros(2)))
        np.testing.assert_array_equal(h.data, 0.0)
        np.testing.assert_array_equal(c.data, 0.0)

    def test_saturated_gates_carry_cell_state(self):
        # forget gate pinned open, input gate pinned shut: c passes through
        b = np.zeros(8)
        b[0:2] = -100.0  # input gate -> 0
        b[2:4] = 100.0   # forget gate -> 1
        p = LstmParams(
            Tensor(np.zeros((8, 3))), Tensor(np.zeros((8, 2))), Tensor(b)
        )
        c_prev = np.array([0.7, -1.3])
        _, c = lstm_step(p, Tensor(np.ones(3)), Tensor(np.zeros(2)), Tensor(c_prev))
        np.testing.assert_array_equal(c.data, c_prev)

    def test_step_gradients(self):
        def build(t):
            p = LstmParams(t["w"], t["u"], t["b"])
            h, c = lstm_step(p, t["x"], t["h0"], t["c0"])
            return ad.add(weighted_sum(h), weighted_sum(c, seed=11))

        r = rng(1)
        assert_op_grads(
            build,
            {
                "w": r.normal(size=(8, 3)) * 0.5,
                "u": r.normal(size=(8, 2)) * 0.5,
                "b": r.normal(size=(8,)) * 0.5,
                "x": r.normal(size=(3,)),
                "h0": r.normal(size=(2,)) * 0.5,
                "c0": r.normal(size=(2,)) * 0.5,
            },
            tol=1e-5,
        )

    def test_run_preserves_input_order(self):
        p = LstmParams.init(2, 3, rng(5))
        inputs = Tensor(rng(6).normal(size=(4, 2)))
        fwd = lstm_run(p, inputs)
        assert len(fwd) == 4
        # position 0 of the forward pass sees only token 0
        single = lstm_run(p, ad.rows(inputs, [0]))
        np.testing.assert_allclose(fwd[0].data, single[0].data)

    def test_run_reverse_positions_align_with_input(self):
        p = LstmParams.init(2, 3, rng(5))
        inputs = Tensor(rng(6).normal(size=(4, 2)))
        bwd = lstm_run(p, inputs, reverse=True)
        # last position of the reverse pass sees only the last token
        single = lstm_run(p, ad.rows(inputs, [3]), reverse=True)
        np.testing.assert_allclose(bwd[3].data, single[0].data)


class TestBilstm:
    def test_output_shape(self):
        f = LstmParams.init(3, 2, rng(1))
        b = LstmParams.init(3, 2, rng(2))
        out = bilstm(f, b, Tensor(rng(3).normal(size=(5, 3))))
        assert out.data.shape == (5, 4)

    def test_first_position_sees_last_token(self):
        f = LstmParams.init(2, 2, rng(1))
        b = LstmParams.init(2, 2, rng(2))
        x = rng(3).normal(size=(4, 2))
        base = bilstm(f, b, Tensor(x)).data.copy()
        x2 = x.copy()
        x2[-1] += 1.0
        moved = bilstm(f, b, Tensor(x2)).data
        # backward half of position 0 changes, forward half does not
        assert not np.allclose(base[0, 2:], moved[0, 2:])
        np.testing.assert_allclose(base[0, :2], moved[0, :2])

    def test_reversed_input_with_swapped_directions(self):
        f = LstmParams.init(2, 2, rng(1))
        b = LstmParams.init(2, 2, rng(2))
        x = rng(3).normal(size=(5, 2))
        base = bilstm(f, b, Tensor(x)).data
        flipped = bilstm(b, f, Tensor(x[::-1].copy())).data
        # row t of the flipped run is row T-1-t of the base run, halves swapped
        np.testing.assert_allclose(flipped[::-1, :2], base[:, 2:], rtol=1e-12)
        np.testing.assert_allclose(flipped[::-1, 2:], base[:, :2], rtol=1e-12)

    def test_every_input_row_influences_output(self):
        f = LstmParams.init(2, 2, rng(1))
        b = LstmParams.init(2, 2, rng(2))
        x = rng(3).normal(size=(4, 2))
        base = bilstm(f, b, Tensor(x)).data
        for t in range(4):
            bumped = x.copy()
            bumped[t] += 0.5
            assert not np.allclose(bilstm(f, b, Tensor(bumped)).data, base)

    def test_gradients(self):
        def build(t):
            f = LstmParams(t["wf"], t["uf"], t["bf"])
            b = LstmParams(t["wb"], t["ub"], t["bb"])
            return weighted_sum(bilstm(f, b, t["x"]))

        r = rng(9)
        assert_op_grads(
            build,
            {
                "wf": r.normal(size=(8, 3)) * 0.4,
                "uf": r.normal(size=(8, 2)) * 0.4,
                "bf": r.normal(size=(8,)) * 0.4,
                "wb": r.normal(size=(8, 3)) * 0.4,
                "ub": r.normal(size=(8, 2)) * 0.4,
                "bb": r.normal(size=(8,)) * 0.4,
                "x": r.normal(size=(3, 3)),
            },
            tol=1e-5,
        )


class TestLinear:
    def test_identity_weights_pass_input_through(self):
        p = Linear(Tensor(np.eye(3)), Tensor(np.zeros(3)))
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(linear_vec(p, Tensor(x)).data, x)

    def test_zero_weights_give_bias(self):
        p = Linear(Tensor(np.zeros((2, 3))), Tensor(np.array([0.5, -1.0])))
        np.testing.assert_array_equal(linear_vec(p, Tensor(np.ones(3))).data, [0.5, -1.0])

    def test_vec_matches_numpy(self):
        p = Linear.init(3, 2, rng(4))
        p.b.data[:] = [0.5, -0.5]
        x = np.array([1.0, 2.0, 3.0])
        out = linear_vec(p, Tensor(x))
        np.testing.assert_allclose(out.data, p.w.data @ x + p.b.data)

    def test_rows_matches_per_row_vec(self):
        p = Linear.init(3, 2, rng(4))
        p.b.data[:] = [0.5, -0.5]
        xs = rng(5).normal(size=(4, 3))
        batched = linear_rows(p, Tensor(xs))
        for i in range(4):
            np.testing.assert_allclose(batched.data[i], linear_vec(p, Tensor(xs[i])).data)

    def test_gradients(self):
        def build(t):
            p = Linear(t["w"], t["b"])
            return ad.add(
                weighted_sum(linear_rows(p, t["x"])),
                weighted_sum(linear_vec(p, ad.row(t["x"], 0)), seed=3),
            )

        r = rng(8)
        assert_op_grads(
            build,
            {"w": r.normal(size=(2, 3)), "b": r.normal(size=(2,)), "x": r.normal(size=(4, 3))},
        )


class TestDropout:
    def test_identity_when_eval_or_zero(self):
        x = Tensor(np.ones((3, 2)))
        assert dropout(x, 0.3, rng(), train=False) is x
        assert dropout(x, 0.0, rng(), train=True) is x

    def test_mask_values_are_zero_or_scaled(self):
        x = Tensor(np.ones((50, 20)))
        out = dropout(x, 0.3, rng(0), train=True).data
        vals = np.unique(out)
        np.testing.assert_allclose(sorted(vals), [0.0, 1.0 / 0.7])
        dropped = (out == 0).mean()
        assert 0.2 < dropped < 0.4

    def test_seeded_mask_is_deterministic(self):
        x = Tensor(np.ones((10, 10)))
        a = dropout(x, 0.5, rng(7), train=True).data
        b = dropout(x, 0.5, rng(7), train=True).data
        assert a.tobytes() == b.tobytes()

    def test_expectation_preserved(self):
        # inverted scaling keeps the element mean near the input value
        x = Tensor(np.full(100_000, 2.0))
        out = dropout(x, 0.3, rng(123), train=True).data
        assert abs(out.mean() - 2.0) / 2.0 < 0.02

    def test_invalid_probability(self):
        x = Tensor(np.ones(3))
        with pytest.raises(ValueError):
            dropout(x, 1.0, rng(), train=True)
        with pytest.raises(ValueError):
            dropout(x, -0.1, rng(), train=True)

    def test_gradient_flows_only_through_kept_entries(self):
        x = Tensor(np.ones(1000), requires_grad=True)
        with Tape():
            out = dropout(x, 0.4, rng(1), train=True)
            backward(ad.sum_all(out))
        kept = out.data != 0
        np.testing.assert_allclose(x.grad[kept], 1.0 / 0.6)
        np.testing.assert_allclose(x.grad[~kept], 0.0)
