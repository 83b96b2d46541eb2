import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpoolnet import autodiff as ad
from gpoolnet.errors import ConfigError, ShapeError
from gpoolnet.graph import normalized_adjacency
from gpoolnet.layers import (
    GcnParams,
    GPoolParams,
    gcn_forward,
    gpool_forward,
    gpool_scores,
    hconv_forward,
    init_hconv,
    pool_size,
    rank_topk,
    ranking_scores,
)
from helpers import fd_grad, rel_err

X4 = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 3.0]])


def gcn(w, b):
    return GcnParams(ad.param(w), ad.param(b))


def random_adjacency(rng, n):
    upper = np.triu(rng.random((n, n)) < 0.5, k=1).astype(float)
    return upper + upper.T


class TestGcn:
    def test_single_node(self):
        out = gcn_forward(normalized_adjacency(np.zeros((1, 1))), np.array([[1.0, 2.0]]),
                          gcn(np.eye(2), np.zeros(2)))
        np.testing.assert_array_equal(out.value, [[1, 2]])

    def test_symmetric_pair(self, rng=np.random.default_rng(0)):
        a = normalized_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]]))
        out = gcn_forward(a, np.array([[1.0, -1.0], [1.0, -1.0]]), gcn(rng.normal(size=(2, 3)), np.zeros(3)))
        np.testing.assert_array_equal(out.value[0], out.value[1])

    def test_path_graph_oracle(self):
        rng = np.random.default_rng(1)
        a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        a_hat = a + np.eye(3)
        d = np.diag(1 / np.sqrt(a_hat.sum(1)))
        oracle = np.maximum(d @ a_hat @ d @ x @ w + b, 0)
        out = gcn_forward(normalized_adjacency(a), x, gcn(w, b)).value
        np.testing.assert_allclose(out, oracle, atol=1e-12)

    def test_identity_adjacency_is_dense_layer(self):
        rng = np.random.default_rng(2)
        x, w, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
        out = gcn_forward(np.eye(5), x, gcn(w, b)).value
        np.testing.assert_allclose(out, np.maximum(x @ w + b, 0), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gcn_forward(np.eye(3), np.ones((2, 2)), gcn(np.eye(2), np.zeros(2)))


class TestScoresAndRank:
    def test_zero_projection(self):
        y = gpool_scores(X4, GPoolParams(ad.param(np.zeros(2))))
        np.testing.assert_array_equal(y.value, 0)

    def test_dot_product_oracle(self):
        y = gpool_scores(X4, GPoolParams(ad.param([1.0, 0.0]))).value
        oracle = [abs(sum(xi * pi for xi, pi in zip(row, [1.0, 0.0]))) for row in X4]
        np.testing.assert_array_equal(y, oracle)
        np.testing.assert_array_equal(y, [1, 0, 2, 0])

    def test_scaling(self):
        rng = np.random.default_rng(3)
        x, p = rng.normal(size=(5, 3)), rng.normal(size=3)
        y1 = gpool_scores(x, GPoolParams(ad.param(p))).value
        y2 = gpool_scores(x, GPoolParams(ad.param(2 * p))).value
        np.testing.assert_allclose(y2, 2 * y1, rtol=1e-15)

    def test_rank(self):
        np.testing.assert_array_equal(rank_topk([1, 0, 2, 0], 2), [0, 2])
        np.testing.assert_array_equal(rank_topk([5, 5, 5], 2), [0, 1])
        np.testing.assert_array_equal(rank_topk([3, 1, 2, 0], 4), [0, 1, 2, 3])

    @pytest.mark.parametrize("k", [0, 5])
    def test_rank_k_range(self, k):
        with pytest.raises(ConfigError):
            rank_topk([1, 2, 3, 4], k)

    def test_masked_never_selected(self):
        y = ranking_scores(np.array([1.0, 9.0, 2.0, 8.0]), [True, False, True, False])
        np.testing.assert_array_equal(rank_topk(y, 2), [0, 2])
        with pytest.raises(ConfigError):
            rank_topk(y, 3)

    @given(st.lists(st.integers(0, 5), min_size=1, max_size=15), st.data())
    @settings(max_examples=200, deadline=None)
    def test_rank_matches_sort_oracle(self, values, data):
        k = data.draw(st.integers(1, len(values)))
        oracle = sorted(sorted(range(len(values)), key=lambda i: (-values[i], i))[:k])
        assert rank_topk(values, k).tolist() == oracle


class TestGPool:
    def test_pool_shapes(self):
        rng = np.random.default_rng(4)
        a = random_adjacency(rng, 4)
        a2, x2, idx = gpool_forward(a, rng.normal(size=(4, 5)), GPoolParams(ad.param(rng.normal(size=5))), 2)
        assert x2.shape == (2, 5) and a2.shape == (2, 2) and len(idx) == 2

    def test_scripted_example(self):
        a = np.ones((4, 4)) - np.eye(4)
        a2, x2, idx = gpool_forward(a, X4, GPoolParams(ad.param([1.0, 0.0])), 2)
        np.testing.assert_array_equal(idx, [0, 2])
        np.testing.assert_allclose(x2.value, [[math.tanh(1), 0], [2 * math.tanh(2), 0]], atol=1e-15)
        np.testing.assert_allclose(x2.value, [[0.7616, 0], [1.9281, 0]], atol=1e-4)
        np.testing.assert_array_equal(a2, a[np.ix_([0, 2], [0, 2])])

    def test_full_selection(self):
        rng = np.random.default_rng(5)
        a, x, p = random_adjacency(rng, 5), rng.normal(size=(5, 3)), rng.normal(size=3)
        a2, x2, idx = gpool_forward(a, x, GPoolParams(ad.param(p)), 5)
        np.testing.assert_array_equal(a2, a)
        np.testing.assert_allclose(x2.value, x * np.tanh(np.abs(x @ p))[:, None], atol=1e-15)

    def test_sign_invariance(self):
        rng = np.random.default_rng(6)
        a, x, p = random_adjacency(rng, 7), rng.normal(size=(7, 4)), rng.normal(size=4)
        _, xa, ia = gpool_forward(a, x, GPoolParams(ad.param(p)), 3)
        _, xb, ib = gpool_forward(a, x, GPoolParams(ad.param(-p)), 3)
        np.testing.assert_array_equal(ia, ib)
        np.testing.assert_array_equal(xa.value, xb.value)

    def test_padded_rows_not_selected(self):
        x = np.vstack([np.ones((3, 2)), 100 * np.ones((2, 2))])
        mask = [True, True, True, False, False]
        _, _, idx = gpool_forward(np.zeros((5, 5)), x, GPoolParams(ad.param([1.0, 1.0])), 2, mask)
        assert set(idx.tolist()) <= {0, 1, 2}

    def test_gate_gradient(self):
        rng = np.random.default_rng(8)
        x, p0 = rng.normal(size=(6, 3)), rng.normal(size=3)
        w = rng.normal(size=(3, 3))
        p = ad.param(p0.copy())
        with ad.Tape() as tape:
            _, x2, idx = gpool_forward(np.zeros((6, 6)), x, GPoolParams(p), 3)
            loss = ad.weighted_sum(x2, w)
        tape.backward(loss)

        def frozen():
            # idx held fixed: only the gate depends on p
            y = np.abs(x @ p.value)[idx]
            return float(np.sum(x[idx] * np.tanh(y)[:, None] * w))

        assert np.linalg.norm(p.grad) > 0
        assert rel_err(p.grad, fd_grad(frozen, p.value)) <= 1e-6

        q = ad.param(p0.copy())
        with ad.Tape() as tape:
            _, x2, _ = gpool_forward(np.zeros((6, 6)), x, GPoolParams(q), 3, gate=False)
            loss = ad.weighted_sum(x2, w)
        tape.backward(loss)
        assert not q.grad.any()

    def test_feature_gradient(self):
        rng = np.random.default_rng(9)
        x0, p = rng.normal(size=(6, 3)), rng.normal(size=3)
        w = rng.normal(size=(3, 3))
        x = ad.param(x0.copy())
        with ad.Tape() as tape:
            _, x2, idx = gpool_forward(np.zeros((6, 6)), x, GPoolParams(ad.param(p)), 3)
            loss = ad.weighted_sum(x2, w)
        tape.backward(loss)

        def frozen():
            y = np.abs(x.value @ p)[idx]
            return float(np.sum(x.value[idx] * np.tanh(y)[:, None] * w))

        assert rel_err(x.grad, fd_grad(frozen, x.value)) <= 1e-6

    def test_pool_size(self):
        assert [pool_size(n) for n in (0, 1, 2, 3, 4, 5)] == [1, 1, 1, 2, 2, 3]


class TestHConv:
    def params(self, rng, c_in=3, c_out=8):
        return init_hconv(rng, c_in, c_out, 3, np.float64)

    def test_shape(self):
        rng = np.random.default_rng(10)
        a = normalized_adjacency(random_adjacency(rng, 5))
        assert hconv_forward(a, rng.normal(size=(5, 3)), self.params(rng)).shape == (5, 8)

    def test_halves(self):
        rng = np.random.default_rng(11)
        a = normalized_adjacency(random_adjacency(rng, 5))
        x = rng.normal(size=(5, 3))
        hp = self.params(rng)
        hp.kernel_bias.value = rng.normal(size=4)
        hp.gcn.b.value = rng.normal(size=4)
        out = hconv_forward(a, x, hp).value
        conv = ad.relu(ad.conv1d_same(x, hp.kernel, hp.kernel_bias)).value
        np.testing.assert_array_equal(out[:, :4], conv)
        np.testing.assert_array_equal(out[:, 4:], gcn_forward(a, x, hp.gcn).value)

    def test_composition_oracle(self):
        rng = np.random.default_rng(12)
        adj = random_adjacency(rng, 4)
        x = rng.normal(size=(4, 3))
        hp = self.params(rng, 3, 6)
        k, kb = hp.kernel.value, rng.normal(size=3)
        hp.kernel_bias.value = kb
        w, b = hp.gcn.W.value, hp.gcn.b.value
        padded = np.vstack([np.zeros((1, 3)), x, np.zeros((1, 3))])
        conv = np.array([[kb[o] + sum(padded[i + d] @ k[d, :, o] for d in range(3)) for o in range(3)]
                         for i in range(4)])
        a_hat = adj + np.eye(4)
        dinv = np.diag(a_hat.sum(1) ** -0.5)
        graph = dinv @ a_hat @ dinv @ x @ w + b
        oracle = np.maximum(np.hstack([conv, graph]), 0)
        np.testing.assert_allclose(hconv_forward(normalized_adjacency(adj), x, hp).value, oracle, atol=1e-12)

    def test_odd_channels(self):
        with pytest.raises(ConfigError):
            init_hconv(np.random.default_rng(0), 3, 5)
