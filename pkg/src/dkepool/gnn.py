"""Message-passing layers turning (edges, node features) into embeddings.

Adjacency is an edge list (each undirected edge stored in both directions by
the dataset layer), and neighborhood aggregation is a scatter-add over edges,
which the tape treats as one linear operation. Two layer kinds are provided:

* GCN: symmetric-normalized aggregation with self-loops, then a linear map.
* GIN: sum aggregation plus (1 + eps)-scaled self features, then a two-layer
  perceptron whose inner width equals the output width.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .tensor import Tensor, accumulate_grad, add, apply_op, matmul, relu, scale

GNN_KINDS = ("GCN", "GIN")


class GraphBatch:
    """A block of graphs packed into one node-feature matrix.

    ``boundaries`` holds prefix offsets delimiting each graph's contiguous
    node rows; edges use batch-global node indices.
    """

    def __init__(self, node_features, edges, boundaries, labels):
        self.node_features = np.asarray(node_features, dtype=np.float64)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.boundaries = np.asarray(boundaries, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self._plans = {}
        self._validate()

    def _validate(self):
        b = self.boundaries
        if b[0] != 0 or b[-1] != self.node_features.shape[0]:
            raise ContractError("boundaries must start at 0 and end at node count")
        if np.any(np.diff(b) <= 0):
            raise ContractError("boundaries must be strictly increasing")
        if len(self.labels) != len(b) - 1:
            raise ContractError("one label per graph required")
        if len(self.edges):
            src, dst = self.edges[:, 0], self.edges[:, 1]
            n = int(b[-1])
            out_of_range = (src < 0) | (src >= n) | (dst < 0) | (dst >= n)
            if np.any(out_of_range):
                i = int(np.argmax(out_of_range))
                raise DataError(f"edge {tuple(self.edges[i])} has no such node")
            graph_of = np.searchsorted(b, src, side="right") - 1
            lo, hi = b[graph_of], b[graph_of + 1]
            crossing = (dst < lo) | (dst >= hi)
            if np.any(crossing):
                i = int(np.argmax(crossing))
                raise DataError(
                    f"edge {tuple(self.edges[i])} leaves graph "
                    f"{int(graph_of[i])}'s node range [{int(lo[i])}, {int(hi[i])})"
                )

    @property
    def num_graphs(self):
        return len(self.boundaries) - 1

    @property
    def num_nodes(self):
        return int(self.boundaries[-1])

    def graph_slice(self, i):
        return int(self.boundaries[i]), int(self.boundaries[i + 1])

    def aggregation_plan(self, kind):
        """Cached (src, dst, coef) arrays for scatter-add aggregation."""
        plan = self._plans.get(kind)
        if plan is None:
            plan = _build_plan(kind, self.edges, self.num_nodes)
            self._plans[kind] = plan
        return plan


def _build_plan(kind, edges, n):
    if kind == "GIN":
        # Plain neighbor sum; the (1 + eps) self term is added by the layer.
        return edges[:, 0], edges[:, 1], np.ones(len(edges))
    if kind == "GCN":
        # Self-loop-augmented symmetric normalization 1/sqrt(deg_u * deg_v).
        deg = np.ones(n)
        if len(edges):
            deg += np.bincount(edges[:, 1], minlength=n).astype(np.float64)
        inv_sqrt = 1.0 / np.sqrt(deg)
        loops = np.arange(n, dtype=np.int64)
        src = np.concatenate([edges[:, 0], loops])
        dst = np.concatenate([edges[:, 1], loops])
        return src, dst, inv_sqrt[src] * inv_sqrt[dst]
    raise ConfigError(f"unknown aggregation kind {kind!r}")


def edge_aggregate(h, plan):
    """out[v] = sum over edges (u -> v) of coef * h[u], recorded on the tape."""
    src, dst, coef = plan
    out = np.zeros_like(h.data)
    np.add.at(out, dst, h.data[src] * coef[:, None])

    def rule(g):
        if h.requires_grad:
            buf = np.zeros_like(h.data)
            np.add.at(buf, src, g[dst] * coef[:, None])
            accumulate_grad(h, buf)

    return apply_op((h,), out, rule)


class GnnLayer:
    """One message-passing layer (parameters plus a forward rule)."""

    def __init__(self, kind, in_dim, out_dim, rng, activation="relu", epsilon=0.0):
        if kind not in GNN_KINDS:
            raise ConfigError(f"layer kind must be one of {GNN_KINDS}, got {kind!r}")
        if activation not in ("relu", "none"):
            raise ConfigError(f"activation must be 'relu' or 'none', got {activation!r}")
        self.kind = kind
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.epsilon = float(epsilon)
        if kind == "GCN":
            self.weight = _uniform_param(rng, in_dim, out_dim)
            self.bias = Tensor(np.zeros((1, out_dim)), requires_grad=True)
        else:
            hidden = out_dim
            self.w1 = _uniform_param(rng, in_dim, hidden)
            self.b1 = Tensor(np.zeros((1, hidden)), requires_grad=True)
            self.w2 = _uniform_param(rng, hidden, out_dim)
            self.b2 = Tensor(np.zeros((1, out_dim)), requires_grad=True)

    def parameters(self):
        if self.kind == "GCN":
            return [("weight", self.weight), ("bias", self.bias)]
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def forward(self, batch, h):
        if h.cols != self.in_dim:
            raise ConfigError(
                f"{self.kind} layer expects {self.in_dim} input features, got {h.cols}"
            )
        plan = batch.aggregation_plan(self.kind)
        if self.kind == "GCN":
            return gcn_forward(h, self.weight, self.bias, plan, self.activation)
        return gin_forward(
            h, self.w1, self.b1, self.w2, self.b2, self.epsilon, plan, self.activation
        )


def _uniform_param(rng, rows, cols):
    # Fan-in scaled uniform init, U(-1/sqrt(rows), 1/sqrt(rows)).
    bound = 1.0 / np.sqrt(rows)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


def gcn_forward(h, weight, bias, plan, activation="relu"):
    """Symmetric-normalized aggregation followed by a linear map."""
    agg = edge_aggregate(h, plan)
    out = add(matmul(agg, weight), bias)
    return relu(out) if activation == "relu" else out


def gin_forward(h, w1, b1, w2, b2, epsilon, plan, activation="relu"):
    """(1 + eps) * self plus neighbor sum, through a two-layer perceptron."""
    agg = add(edge_aggregate(h, plan), scale(h, 1.0 + epsilon))
    hidden = relu(add(matmul(agg, w1), b1))
    out = add(matmul(hidden, w2), b2)
    return relu(out) if activation == "relu" else out


def stack_forward(batch, layers):
    """Apply the layer stack in order; an empty stack returns the raw features."""
    for a, b in zip(layers[:-1], layers[1:]):
        if a.out_dim != b.in_dim:
            raise ConfigError(
                f"layer dimensions do not chain: {a.out_dim} -> {b.in_dim}"
            )
    h = Tensor(batch.node_features)
    for layer in layers:
        h = layer.forward(batch, h)
    return h
