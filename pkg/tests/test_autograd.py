"""Tests for the reverse-mode autodiff engine.

Derived gradient values are checked against central finite differences
computed here, independently of the engine's own grad_check helper.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satpred import autograd as ag
from satpred.autograd import NonFiniteError, Parameter, Tensor


def fd_grad(f, x, eps=1e-6):
    """Central finite-difference gradient of scalar f at array x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def check_unary(op, x, f, atol=1e-6):
    """Compare analytic grad of sum(op(x)) against finite differences."""
    p = Parameter("x", x.astype(np.float64))
    out = ag.reduce_sum(op(p))
    out.backward()
    numeric = fd_grad(lambda a: f(a).sum(), x.astype(np.float64))
    np.testing.assert_allclose(p.grad, numeric, atol=atol)


class TestElementwiseOps:
    def test_add_broadcast_grads(self):
        a = Parameter("a", np.ones((2, 3)))
        b = Parameter("b", np.ones((3,)))
        ag.reduce_sum(ag.add(a, b)).backward()
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, np.full(3, 2.0))

    def test_mul_grads(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 3))
        check_unary(lambda t: ag.mul(t, t), x, lambda a: a * a)

    def test_div_grads(self):
        a = Parameter("a", np.array([6.0, 8.0]))
        b = Parameter("b", np.array([2.0, 4.0]))
        ag.reduce_sum(ag.div(a, b)).backward()
        np.testing.assert_allclose(a.grad, [0.5, 0.25])
        np.testing.assert_allclose(b.grad, [-1.5, -0.5])

    def test_sigmoid_grad(self):
        x = np.linspace(-3, 3, 7)
        check_unary(ag.sigmoid, x, lambda a: 1 / (1 + np.exp(-a)))

    def test_exp_log_sqrt_grads(self):
        x = np.array([0.5, 1.0, 2.0, 4.0])
        check_unary(ag.exp, x, np.exp)
        check_unary(ag.log, x, np.log)
        check_unary(ag.sqrt, x, np.sqrt)

    def test_gelu_value_and_grad(self):
        # oracle: gelu(x) = x * Phi(x) with the exact normal CDF
        from scipy.stats import norm
        x = np.linspace(-3, 3, 13)
        out = ag.gelu(Tensor(x))
        np.testing.assert_allclose(out.data, x * norm.cdf(x), atol=1e-12)
        check_unary(ag.gelu, x, lambda a: a * norm.cdf(a))

    def test_clip_straight_through(self):
        p = Parameter("x", np.array([-2.0, 0.5, 2.0]))
        ag.reduce_sum(ag.clip(p, -1.0, 1.0)).backward()
        np.testing.assert_array_equal(p.grad, [0.0, 1.0, 0.0])


class TestShapeOps:
    def test_matmul_grads(self):
        rng = np.random.default_rng(1)
        a = Parameter("a", rng.normal(size=(3, 4)))
        b = Parameter("b", rng.normal(size=(4, 2)))
        ag.reduce_sum(ag.matmul(a, b)).backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 2)))

    def test_reshape_transpose_roundtrip_grad(self):
        p = Parameter("x", np.arange(24, dtype=np.float64).reshape(2, 3, 4))
        y = ag.transpose(ag.reshape(p, (6, 4)), (1, 0))
        ag.reduce_sum(ag.mul(y, y)).backward()
        np.testing.assert_allclose(p.grad, 2 * p.data)

    def test_concat_grad_split(self):
        a = Parameter("a", np.ones((2, 2)))
        b = Parameter("b", np.ones((2, 3)))
        out = ag.concat([a, b], axis=1)
        ag.reduce_sum(ag.mul(out, 3.0)).backward()
        np.testing.assert_array_equal(a.grad, np.full((2, 2), 3.0))
        np.testing.assert_array_equal(b.grad, np.full((2, 3), 3.0))

    def test_embedding_gather_and_scatter(self):
        table = Parameter("t", np.arange(12, dtype=np.float64).reshape(4, 3))
        ids = np.array([1, 1, 3])
        out = ag.embedding(table, ids)
        np.testing.assert_array_equal(out.data, table.data[ids])
        ag.reduce_sum(out).backward()
        # duplicate ids accumulate
        np.testing.assert_array_equal(table.grad[1], [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(table.grad[3], [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(table.grad[0], [0.0, 0.0, 0.0])

    def test_embedding_out_of_range(self):
        table = Parameter("t", np.zeros((4, 3)))
        with pytest.raises(IndexError):
            ag.embedding(table, np.array([4]))

    def test_select_position(self):
        p = Parameter("x", np.arange(24, dtype=np.float64).reshape(2, 4, 3))
        out = ag.select_position(p, 2)
        np.testing.assert_array_equal(out.data, p.data[:, 2, :])
        ag.reduce_sum(out).backward()
        expect = np.zeros((2, 4, 3))
        expect[:, 2, :] = 1.0
        np.testing.assert_array_equal(p.grad, expect)


class TestReductions:
    def test_reduce_mean_matches_sum(self):
        p = Parameter("x", np.arange(6, dtype=np.float64).reshape(2, 3))
        ag.reduce_mean(p).backward()
        np.testing.assert_allclose(p.grad, np.full((2, 3), 1 / 6))

    def test_reduce_max_first_argmax_tiebreak(self):
        p = Parameter("x", np.array([[1.0, 3.0, 3.0, 0.0]]))
        out = ag.reduce_max(p, axis=1)
        assert out.data[0] == 3.0
        out.backward()
        np.testing.assert_array_equal(p.grad, [[0.0, 1.0, 0.0, 0.0]])

    def test_reduce_max_mask_excludes(self):
        p = Parameter("x", np.array([[1.0, 9.0, 2.0]]))
        mask = np.array([[True, False, True]])
        out = ag.reduce_max(p, axis=1, mask=mask)
        assert out.data[0] == 2.0

    def test_reduce_max_fully_masked_raises(self):
        p = Parameter("x", np.array([[1.0, 2.0]]))
        with pytest.raises(NonFiniteError):
            ag.reduce_max(p, axis=1, mask=np.array([[False, False]]))

    def test_reduce_max_empty_axis_raises(self):
        with pytest.raises(ValueError):
            ag.reduce_max(Tensor(np.zeros((2, 0))), axis=1)


class TestSoftmaxAndLosses:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(5, 7)))
        y = ag.softmax(x, axis=-1)
        np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(5), atol=1e-12)

    def test_softmax_mask_zeroes_positions(self):
        x = Tensor(np.zeros((1, 4)))
        mask = np.array([[True, True, False, False]])
        y = ag.softmax(x, axis=-1, mask=mask)
        np.testing.assert_allclose(y.data[0, :2], [0.5, 0.5], atol=1e-10)
        assert y.data[0, 2:].max() < 1e-10

    def test_softmax_shift_invariance(self):
        x = np.random.default_rng(3).normal(size=(2, 5))
        a = ag.softmax(Tensor(x)).data
        b = ag.softmax(Tensor(x + 1000.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_softmax_grad_fd(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))  # random linear functional
        p = Parameter("x", x.copy())
        ag.reduce_sum(ag.mul(ag.softmax(p), Tensor(w))).backward()

        def f(a):
            e = np.exp(a - a.max(axis=-1, keepdims=True))
            return (w * e / e.sum(axis=-1, keepdims=True)).sum()

        np.testing.assert_allclose(p.grad, fd_grad(f, x.copy()), atol=1e-6)

    def test_softmax_cross_entropy_value(self):
        # oracle: hand-computed log-sum-exp
        logits = np.array([1.0, 2.0, 3.0])
        out = ag.softmax_cross_entropy(Tensor(logits), 2)
        lse = np.log(np.exp(logits - 3.0).sum()) + 3.0
        assert abs(out.item() - (lse - 3.0)) < 1e-12

    def test_softmax_cross_entropy_grad_is_p_minus_onehot(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(2, 4))
        t = np.array([1, 3])
        p = Parameter("z", z.copy())
        ag.reduce_sum(ag.softmax_cross_entropy(p, t)).backward()
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        probs = e / e.sum(axis=-1, keepdims=True)
        probs[np.arange(2), t] -= 1.0
        np.testing.assert_allclose(p.grad, probs, atol=1e-12)

    def test_softmax_cross_entropy_target_out_of_range(self):
        with pytest.raises(IndexError):
            ag.softmax_cross_entropy(Tensor(np.zeros(3)), 3)

    def test_binary_cross_entropy_value(self):
        p = Tensor(np.array([0.9, 0.2]))
        out = ag.binary_cross_entropy(p, np.array([1.0, 0.0]))
        expect = [-np.log(0.9), -np.log(0.8)]
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_binary_cross_entropy_clamps_extremes(self):
        out = ag.binary_cross_entropy(Tensor(np.array([0.0, 1.0])),
                                      np.array([1.0, 0.0]))
        assert np.isfinite(out.data).all()

    def test_layer_norm_moments_and_affine(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(4, 8)))
        gain = Tensor(np.ones(8))
        bias = Tensor(np.zeros(8))
        y = ag.layer_norm(x, gain, bias).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-7)
        np.testing.assert_allclose(y.std(axis=-1), 1.0, atol=1e-3)

    def test_l2_normalize_unit_norm(self):
        x = Tensor(np.array([[3.0, 4.0], [0.0, 2.0]]))
        y = ag.l2_normalize(x, axis=-1).data
        np.testing.assert_allclose(np.linalg.norm(y, axis=-1), 1.0, atol=1e-12)

    def test_cosine_similarity_hand_values(self):
        assert abs(ag.cosine_similarity(Tensor(np.array([1.0, 0.0])),
                                        Tensor(np.array([0.0, 1.0]))).item()) < 1e-12
        assert abs(ag.cosine_similarity(Tensor(np.array([2.0, 0.0])),
                                        Tensor(np.array([5.0, 0.0]))).item() - 1.0) < 1e-12

    def test_cosine_similarity_zero_raises(self):
        with pytest.raises(ValueError):
            ag.cosine_similarity(Tensor(np.zeros(3)), Tensor(np.ones(3)))


class TestDropout:
    def test_inference_is_identity(self):
        x = Tensor(np.ones((10, 10)))
        y = ag.dropout(x, 0.5, np.random.default_rng(0), training=False)
        assert y is x

    def test_rate_zero_is_identity(self):
        x = Tensor(np.ones(5))
        assert ag.dropout(x, 0.0, np.random.default_rng(0), training=True) is x

    def test_inverted_scaling(self):
        rng = np.random.default_rng(7)
        x = Tensor(np.ones((100, 100)))
        y = ag.dropout(x, 0.3, rng, training=True)
        kept = y.data != 0
        np.testing.assert_allclose(y.data[kept], 1.0 / 0.7, atol=1e-12)
        # survivor fraction near 0.7 (binomial, 10k draws)
        assert abs(kept.mean() - 0.7) < 0.03

    def test_deterministic_given_rng(self):
        x = Tensor(np.ones((4, 4)))
        a = ag.dropout(x, 0.5, np.random.default_rng(42), training=True)
        b = ag.dropout(x, 0.5, np.random.default_rng(42), training=True)
        np.testing.assert_array_equal(a.data, b.data)

    def test_bad_rate_raises(self):
        with pytest.raises(ValueError):
            ag.dropout(Tensor(np.ones(2)), 1.0, np.random.default_rng(0), True)


class TestBackwardMechanics:
    def test_diamond_graph_accumulates(self):
        # y = x*x + x*x: gradient must be 4x, requiring correct accumulation
        p = Parameter("x", np.array([3.0]))
        sq = ag.mul(p, p)
        ag.reduce_sum(ag.add(sq, sq)).backward()
        np.testing.assert_allclose(p.grad, [12.0])

    def test_parameter_grad_persists_and_zeroes(self):
        p = Parameter("x", np.ones(3))
        ag.reduce_sum(p).backward()
        ag.reduce_sum(p).backward()
        np.testing.assert_array_equal(p.grad, np.full(3, 2.0))
        p.zero_grad()
        np.testing.assert_array_equal(p.grad, np.zeros(3))

    def test_deep_chain_no_recursion_limit(self):
        p = Parameter("x", np.array([1.0]))
        t = p
        for _ in range(5000):
            t = ag.add(t, 0.0)
        ag.reduce_sum(t).backward()
        np.testing.assert_allclose(p.grad, [1.0])

    def test_check_finite(self):
        ag.check_finite(Tensor(np.ones(3)))
        with pytest.raises(NonFiniteError):
            ag.check_finite(Tensor(np.array([1.0, np.nan])))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_composite_grad_matches_fd(self, seed):
        # property: random small expression graph matches finite differences
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 4))
        p = Parameter("x", x.copy())
        loss = ag.reduce_sum(
            ag.mul(ag.sigmoid(ag.matmul(p, ag.transpose(p, (1, 0)))), 0.5)
        )
        loss.backward()

        def f(a):
            return (0.5 / (1 + np.exp(-(a @ a.T)))).sum()

        np.testing.assert_allclose(p.grad, fd_grad(f, x.copy()), atol=1e-5)
