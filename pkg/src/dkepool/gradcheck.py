"""Central finite-difference checks for every differentiable operator.

Each named check builds seeded random inputs, computes tape gradients of a
scalar function of the operator's output, and compares them against central
differences (default step 1e-5). The reported figure per input x is

    max_i |analytic_i - numeric_i| / max(1, max_i |numeric_i|)

so tiny gradients are judged absolutely and O(1) gradients relatively.
Builders for operators containing relu kinks resample until every
pre-activation is safely away from zero, keeping the suite seed-robust.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .gnn import GraphBatch, gcn_forward, gin_forward
from .pooling import (
    dkepool,
    dkepool_robust,
    estimate_gaussian,
    flat_pool,
    gauss_embd,
    gauss_vcat,
)
from .linalg import newton_schulz_sqrt
from .tensor import Tape, Tensor, add, concat_rows, matmul, mul, relu, scale, transpose
from .train import cross_entropy

DEFAULT_STEP = 1e-5


def finite_difference(f, x, step=DEFAULT_STEP):
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.copy()
    for i in range(flat.size):
        orig = flat.flat[i]
        flat.flat[i] = orig + step
        upper = f(flat)
        flat.flat[i] = orig - step
        lower = f(flat)
        flat.flat[i] = orig
        grad.flat[i] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    denom = max(1.0, float(np.max(np.abs(numeric))) if numeric.size else 0.0)
    return float(np.max(np.abs(analytic - numeric))) / denom


def check_gradients(f, arrays, step=DEFAULT_STEP):
    """Worst relative error of tape gradients vs central differences.

    ``f`` maps one Tensor per array to a scalar Tensor; every input is
    differentiated.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = f(*tensors)
        tape.backward(loss)

    worst = 0.0
    for i, (t, base) in enumerate(zip(tensors, arrays)):
        def value(x, slot=i):
            args = [Tensor(x if j == slot else arrays[j]) for j in range(len(arrays))]
            return f(*args).item()

        numeric = finite_difference(value, base, step)
        analytic = t.grad if t.grad is not None else np.zeros_like(numeric)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


@dataclass
class OperatorCheck:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def _avoid_zero(rng, shape, margin=1e-3):
    x = rng.uniform(-1.0, 1.0, shape)
    x[np.abs(x) < margin] += 2 * margin
    return x


def _build_matmul(rng):
    a, b = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (4, 2))
    return lambda ta, tb: matmul(ta, tb).sum(), [a, b]


def _build_mul(rng):
    a, b = rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, (4, 3))
    return lambda ta, tb: mul(ta, tb).sum(), [a, b]


def _build_relu(rng):
    x = _avoid_zero(rng, (5, 4))
    return lambda t: relu(t).sum(), [x]


def _pad_max_gaps(x, margin=0.05):
    # Lift each column's maximum clear of the runner-up so the finite
    # difference step cannot switch the argmax.
    idx = x.argmax(axis=0)
    x[idx, np.arange(x.shape[1])] += margin
    return x


def _build_flat(kind):
    def build(rng):
        h = rng.uniform(-1, 1, (7, 5))
        if kind == "max":
            h = _pad_max_gaps(h)
        return lambda t: flat_pool(t, kind).sum(), [h]

    return build


def _build_estimate_gaussian(rng):
    h = rng.uniform(-1, 1, (8, 4))

    def f(t):
        stats = estimate_gaussian(t, ridge_epsilon=1e-3)
        return add(stats.sigma.sum(), stats.mu.sum())

    return f, [h]


def _build_dkepool(rng):
    h = rng.uniform(-1, 1, (9, 4))
    w = rng.uniform(-1, 1, (4, 3))

    def f(th, tw):
        return dkepool(estimate_gaussian(th, 1e-3), tw).sum()

    return f, [h, w]


def _build_dkepool_robust(rng):
    h = rng.uniform(-1, 1, (9, 4))
    w = rng.uniform(-1, 1, (4, 3))

    def f(th, tw):
        return dkepool_robust(estimate_gaussian(th, 1e-2), tw, iterations=5).sum()

    return f, [h, w]


def _build_gauss_vcat(rng):
    h = rng.uniform(-1, 1, (7, 3))
    return lambda t: gauss_vcat(estimate_gaussian(t, 1e-3)).sum(), [h]


def _build_gauss_embd(rng):
    h = rng.uniform(-1, 1, (7, 3))
    return lambda t: gauss_embd(estimate_gaussian(t, 1e-3)).sum(), [h]


def _build_newton_schulz(rng):
    b = rng.uniform(-1, 1, (5, 5))

    def f(tb):
        spd = add(scale(matmul(tb, transpose(tb)), 0.2),
                  Tensor._wrap(0.05 * np.eye(5), False))
        return newton_schulz_sqrt(spd, iterations=5).sum()

    return f, [b]


def _toy_batch():
    # Two graphs: a 3-node path and a 2-node edge.
    edges = [(0, 1), (1, 0), (1, 2), (2, 1), (3, 4), (4, 3)]
    return GraphBatch(np.zeros((5, 3)), edges, [0, 3, 5], [0, 1])


def _build_gcn_layer(rng):
    batch = _toy_batch()
    plan = batch.aggregation_plan("GCN")
    src, dst, coef = plan
    for _ in range(100):
        x = rng.uniform(-1, 1, (5, 3))
        w = rng.uniform(-1, 1, (3, 4))
        b = rng.uniform(-0.1, 0.1, (1, 4))
        agg = np.zeros_like(x)
        np.add.at(agg, dst, x[src] * coef[:, None])
        if np.min(np.abs(agg @ w + b)) > 1e-3:
            break

    def f(tx, tw, tb):
        return gcn_forward(tx, tw, tb, plan, activation="relu").sum()

    return f, [x, w, b]


def _build_gin_layer(rng):
    batch = _toy_batch()
    plan = batch.aggregation_plan("GIN")
    src, dst, coef = plan
    for _ in range(100):
        x = rng.uniform(-1, 1, (5, 3))
        w1 = rng.uniform(-1, 1, (3, 4))
        b1 = rng.uniform(-0.1, 0.1, (1, 4))
        w2 = rng.uniform(-1, 1, (4, 3))
        b2 = rng.uniform(-0.1, 0.1, (1, 3))
        agg = np.zeros_like(x)
        np.add.at(agg, dst, x[src] * coef[:, None])
        agg += x
        pre1 = agg @ w1 + b1
        pre2 = np.maximum(pre1, 0.0) @ w2 + b2
        if min(np.min(np.abs(pre1)), np.min(np.abs(pre2))) > 1e-3:
            break

    def f(tx, tw1, tb1, tw2, tb2):
        return gin_forward(tx, tw1, tb1, tw2, tb2, 0.0, plan, activation="relu").sum()

    return f, [x, w1, b1, w2, b2]


def _build_cross_entropy(rng):
    logits = rng.uniform(-1, 1, (6, 3))
    labels = rng.integers(0, 3, size=6)
    return lambda t: cross_entropy(t, labels), [logits]


def _build_pipeline(rng):
    # Node features -> GIN layer -> Gaussian fit -> projected pooling ->
    # linear head -> cross entropy; gradients w.r.t. features and projection.
    batch = _toy_batch()
    plan = batch.aggregation_plan("GIN")
    src, dst, coef = plan
    for _ in range(100):
        x = rng.uniform(-1, 1, (5, 3))
        w1 = rng.uniform(-1, 1, (3, 4))
        b1 = rng.uniform(-0.1, 0.1, (1, 4))
        w2 = rng.uniform(-1, 1, (4, 4))
        b2 = rng.uniform(-0.1, 0.1, (1, 4))
        agg = np.zeros_like(x)
        np.add.at(agg, dst, x[src] * coef[:, None])
        agg += x
        if np.min(np.abs(agg @ w1 + b1)) > 1e-3:
            break
    proj = rng.uniform(-1, 1, (4, 3))
    head = rng.uniform(-1, 1, (3, 2))
    labels = np.array([0, 1])

    def f(tx, tproj, thead):
        tw1, tb1 = Tensor(w1), Tensor(b1)
        tw2, tb2 = Tensor(w2), Tensor(b2)
        h = gin_forward(tx, tw1, tb1, tw2, tb2, 0.0, plan, activation="none")
        rows = []
        for i in range(batch.num_graphs):
            lo, hi = batch.graph_slice(i)
            rows.append(dkepool(estimate_gaussian(h.slice_rows(lo, hi), 1e-3), tproj))
        logits = matmul(concat_rows(rows), thead)
        return cross_entropy(logits, labels)

    return f, [x, proj, head]


OPERATOR_CHECKS = {
    "matmul": (_build_matmul, 1e-6),
    "mul": (_build_mul, 1e-6),
    "relu": (_build_relu, 1e-6),
    "mean_pool": (_build_flat("mean"), 1e-4),
    "sum_pool": (_build_flat("sum"), 1e-4),
    "max_pool": (_build_flat("max"), 1e-4),
    "estimate_gaussian": (_build_estimate_gaussian, 1e-4),
    "dkepool": (_build_dkepool, 1e-4),
    "dkepool_robust": (_build_dkepool_robust, 1e-3),
    "newton_schulz_sqrt": (_build_newton_schulz, 1e-3),
    "gauss_vcat": (_build_gauss_vcat, 1e-4),
    "gauss_embd": (_build_gauss_embd, 1e-4),
    "gcn_layer": (_build_gcn_layer, 1e-4),
    "gin_layer": (_build_gin_layer, 1e-4),
    "cross_entropy": (_build_cross_entropy, 1e-6),
    "pipeline": (_build_pipeline, 1e-4),
}


def run_suite(names=None, seed=0, step=DEFAULT_STEP):
    """Run the named checks (all by default) and return their results."""
    if names is None:
        names = list(OPERATOR_CHECKS)
    results = []
    for name in names:
        if name not in OPERATOR_CHECKS:
            raise ConfigError(
                f"unknown operator {name!r}; known: {sorted(OPERATOR_CHECKS)}"
            )
        builder, tolerance = OPERATOR_CHECKS[name]
        f, arrays = builder(np.random.default_rng(seed))
        error = check_gradients(f, arrays, step)
        results.append(OperatorCheck(name, error, tolerance))
    return results
