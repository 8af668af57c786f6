"""Message-passing layers: hand cases, equivariance, batching, gradients."""

import numpy as np
import pytest

from dkepool.errors import ConfigError, DataError
from dkepool.gnn import GnnLayer, GraphBatch, gcn_forward, gin_forward, stack_forward
from dkepool.gradcheck import check_gradients
from dkepool.tensor import Tensor
from dkepool.train import make_batch


def single_graph_batch(features, edges):
    features = np.asarray(features, dtype=np.float64)
    return GraphBatch(features, edges, [0, features.shape[0]], [0])


def identity_gin_layer(dim, activation="none", epsilon=0.0):
    layer = GnnLayer("GIN", dim, dim, np.random.default_rng(0),
                     activation=activation, epsilon=epsilon)
    layer.w1.data = np.eye(dim)
    layer.b1.data = np.zeros((1, dim))
    layer.w2.data = np.eye(dim)
    layer.b2.data = np.zeros((1, dim))
    return layer


class TestGcn:
    def test_isolated_node_is_identity(self):
        batch = single_graph_batch([[1.5, -2.0]], [])
        layer = GnnLayer("GCN", 2, 2, np.random.default_rng(0), activation="none")
        layer.weight.data = np.eye(2)
        layer.bias.data = np.zeros((1, 2))
        out = layer.forward(batch, Tensor(batch.node_features))
        assert np.allclose(out.data, [[1.5, -2.0]])

    def test_two_nodes_constant_signal_preserved(self):
        # With self-loops each row of the normalized adjacency sums to one.
        batch = single_graph_batch([[1.0], [1.0]], [(0, 1), (1, 0)])
        layer = GnnLayer("GCN", 1, 1, np.random.default_rng(0), activation="none")
        layer.weight.data = np.eye(1)
        layer.bias.data = np.zeros((1, 1))
        out = layer.forward(batch, Tensor(batch.node_features))
        assert np.allclose(out.data, [[1.0], [1.0]], atol=1e-12)

    def test_permutation_equivariance(self, rng):
        n, f = 7, 3
        edges = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (2, 5)]
        edges = edges + [(v, u) for u, v in edges]
        x = rng.uniform(-1, 1, (n, f))
        w = rng.uniform(-1, 1, (f, 4))
        b = rng.uniform(-1, 1, (1, 4))
        base = gcn_forward(
            Tensor(x), Tensor(w), Tensor(b),
            single_graph_batch(x, edges).aggregation_plan("GCN"),
        ).data
        for _ in range(5):
            perm = rng.permutation(n)
            perm_edges = [(perm[u], perm[v]) for u, v in edges]
            permuted = gcn_forward(
                Tensor(x[np.argsort(perm)]), Tensor(w), Tensor(b),
                single_graph_batch(x[np.argsort(perm)], perm_edges)
                .aggregation_plan("GCN"),
            ).data
            assert np.max(np.abs(permuted[perm] - base)) <= 1e-10


class TestGin:
    def test_isolated_node_identity_mlp(self):
        batch = single_graph_batch([[0.5, 2.0]], [])
        layer = identity_gin_layer(2)
        out = layer.forward(batch, Tensor(batch.node_features))
        assert np.allclose(out.data, [[0.5, 2.0]])

    def test_star_center_sums_neighbors(self):
        k = 4
        feats = np.ones((k + 1, 1))
        edges = [(0, i) for i in range(1, k + 1)]
        edges += [(v, u) for u, v in edges]
        batch = single_graph_batch(feats, edges)
        out = identity_gin_layer(1).forward(batch, Tensor(feats))
        assert out.data[0, 0] == pytest.approx(1.0 + k)

    def test_epsilon_scales_self_term(self):
        batch = single_graph_batch([[2.0]], [])
        out = identity_gin_layer(1, epsilon=0.5).forward(
            batch, Tensor(batch.node_features)
        )
        assert out.data[0, 0] == pytest.approx(3.0)

    def test_permutation_equivariance(self, rng):
        n, f = 6, 2
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]
        edges = edges + [(v, u) for u, v in edges]
        x = rng.uniform(-1, 1, (n, f))
        layer = GnnLayer("GIN", f, 3, np.random.default_rng(7), activation="relu")
        base = layer.forward(single_graph_batch(x, edges), Tensor(x)).data
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        perm_edges = [(perm[u], perm[v]) for u, v in edges]
        permuted = layer.forward(
            single_graph_batch(x[inv], perm_edges), Tensor(x[inv])
        ).data
        assert np.max(np.abs(permuted[perm] - base)) <= 1e-10


class TestStack:
    def test_empty_stack_returns_features(self, rng):
        x = rng.uniform(-1, 1, (4, 3))
        batch = single_graph_batch(x, [(0, 1), (1, 0)])
        out = stack_forward(batch, [])
        assert np.array_equal(out.data, x)

    def test_single_layer_equals_direct_forward(self, rng):
        x = rng.uniform(-1, 1, (5, 3))
        batch = single_graph_batch(x, [(0, 1), (1, 0), (2, 3), (3, 2)])
        layer = GnnLayer("GCN", 3, 4, np.random.default_rng(1))
        via_stack = stack_forward(batch, [layer])
        direct = layer.forward(batch, Tensor(x))
        assert np.array_equal(via_stack.data, direct.data)

    def test_dimension_chain_mismatch(self):
        rng = np.random.default_rng(0)
        layers = [GnnLayer("GIN", 3, 4, rng), GnnLayer("GIN", 5, 4, rng)]
        batch = single_graph_batch(np.zeros((2, 3)), [])
        with pytest.raises(ConfigError):
            stack_forward(batch, layers)

    def test_five_layer_gin_on_synthetic_batch(self, mutag_syn):
        batch = make_batch(mutag_syn, list(range(12)))
        rng = np.random.default_rng(2)
        dims = [mutag_syn.feature_dim] + [16] * 5
        layers = [
            GnnLayer("GIN", dims[i], dims[i + 1], rng,
                     activation="relu" if i < 4 else "none")
            for i in range(5)
        ]
        out = stack_forward(batch, layers)
        assert out.shape == (batch.num_nodes, 16)
        assert np.isfinite(out.data).all()


class TestBatching:
    def test_batch_independence(self, rng):
        graphs = []
        for n in (3, 5, 4):
            x = rng.uniform(-1, 1, (n, 3))
            edges = [(i, (i + 1) % n) for i in range(n)]
            edges += [(v, u) for u, v in edges]
            graphs.append((x, edges))

        layer = GnnLayer("GIN", 3, 4, np.random.default_rng(5))
        solo_outputs = [
            layer.forward(single_graph_batch(x, e), Tensor(x)).data
            for x, e in graphs
        ]

        feats = np.concatenate([x for x, _ in graphs])
        packed_edges, offset = [], 0
        boundaries = [0]
        for x, e in graphs:
            packed_edges.extend((u + offset, v + offset) for u, v in e)
            offset += x.shape[0]
            boundaries.append(offset)
        batch = GraphBatch(feats, packed_edges, boundaries, [0, 0, 0])
        batched = layer.forward(batch, Tensor(feats)).data

        for i, solo in enumerate(solo_outputs):
            lo, hi = batch.graph_slice(i)
            assert np.max(np.abs(batched[lo:hi] - solo)) <= 1e-12

    def test_edge_out_of_range_names_graph(self):
        with pytest.raises(DataError, match="graph 0"):
            GraphBatch(np.zeros((4, 2)), [(0, 3)], [0, 2, 4], [0, 1])

    def test_edge_to_missing_node(self):
        with pytest.raises(DataError, match="no such node"):
            GraphBatch(np.zeros((2, 2)), [(0, 5)], [0, 2], [0])


class TestGradients:
    def test_gcn_parameters_match_finite_differences(self, rng):
        x = rng.uniform(-1, 1, (4, 3))
        w = rng.uniform(-1, 1, (3, 2))
        b = rng.uniform(0.2, 0.4, (1, 2))
        edges = [(0, 1), (1, 0), (2, 3), (3, 2)]
        plan = single_graph_batch(x, edges).aggregation_plan("GCN")

        def f(tx, tw, tb):
            return gcn_forward(tx, tw, tb, plan, activation="relu").sum()

        assert check_gradients(f, [x, w, b]) <= 1e-4

    def test_gin_parameters_match_finite_differences(self, rng):
        x = rng.uniform(-1, 1, (4, 2))
        w1 = rng.uniform(-1, 1, (2, 3))
        b1 = rng.uniform(0.2, 0.4, (1, 3))
        w2 = rng.uniform(-1, 1, (3, 2))
        b2 = rng.uniform(0.2, 0.4, (1, 2))
        edges = [(0, 1), (1, 0), (1, 2), (2, 1)]
        plan = single_graph_batch(x, edges).aggregation_plan("GIN")

        def f(tx, tw1, tb1, tw2, tb2):
            return gin_forward(tx, tw1, tb1, tw2, tb2, 0.0, plan, "relu").sum()

        assert check_gradients(f, [x, w1, b1, w2, b2]) <= 1e-4
