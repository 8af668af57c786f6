"""Classifier head, loss, optimizer and the cross-validation loop.

The model is: GNN stack -> optional SNR noise on the node embeddings ->
per-graph pooling -> single linear layer -> softmax cross entropy. Adam with
decoupled weight decay drives training. ``run_cv`` re-initializes the model
per fold (seeded ``seed + fold``), trains on the other folds and reports the
final-epoch accuracy on the held-out fold; no best-epoch selection.

All randomness of a fold flows from its own generator, so folds are
independent and a single-threaded run is bit-for-bit reproducible.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, inject_noise, make_folds
from .errors import ConfigError, ContractError, NumericError
from .gnn import GnnLayer, GraphBatch, stack_forward
from .pooling import POOL_KINDS, PoolingOperator
from .tensor import Tape, Tensor, accumulate_grad, add, apply_op, concat_rows, matmul

GNN_PRESETS = {"gin5": ("GIN", 5), "gcn3": ("GCN", 3)}

# Offset separating the fixed evaluation noise stream from training draws.
EVAL_NOISE_OFFSET = 982_451_653


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class, max-stabilized."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    b, c = logits.shape
    if len(labels) != b:
        raise ContractError(f"{len(labels)} labels for {b} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"label out of range 0..{c - 1}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -float(log_probs[np.arange(b), labels].mean())

    softmax = np.exp(log_probs)

    def rule(g):
        grad = softmax.copy()
        grad[np.arange(b), labels] -= 1.0
        accumulate_grad(logits, grad * (g[0, 0] / b))

    return apply_op((logits,), np.array([[loss]]), rule)


class Adam:
    """Adam with bias correction and decoupled multiplicative weight decay."""

    def __init__(self, params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)  # (name, Tensor) pairs
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(t.data) for _, t in self.params]
        self.v = [np.zeros_like(t.data) for _, t in self.params]

    def zero_grad(self):
        for _, t in self.params:
            t.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (name, t) in enumerate(self.params):
            g = t.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(
                    f"non-finite gradient in parameter {name!r} "
                    f"(max |g| = {np.max(np.abs(g))})"
                )
            if self.weight_decay:
                t.data *= 1.0 - self.lr * self.weight_decay
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1**self.t)
            v_hat = self.v[i] / (1.0 - b2**self.t)
            t.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.isfinite(t.data).all():
                raise NumericError(f"parameter {name!r} became non-finite")


@dataclass
class TrainConfig:
    """Hyperparameters of one cross-validation run."""

    gnn: str = "gin5"
    hidden: int = 16
    pool: str = "dkepool_robust"
    d: int = 0
    ns_iterations: int = 5
    snr_db: float | None = None
    batch_size: int = 32
    learning_rate: float = 0.01
    epochs: int = 100
    weight_decay: float = 1e-4
    folds: int = 10
    seed: int = 0
    ridge_epsilon: float = 1e-4
    gin_epsilon: float = 0.0

    def __post_init__(self):
        if self.gnn not in GNN_PRESETS:
            raise ConfigError(f"gnn must be one of {sorted(GNN_PRESETS)}, got {self.gnn!r}")
        if self.pool not in POOL_KINDS:
            raise ConfigError(f"pool must be one of {POOL_KINDS}, got {self.pool!r}")
        for name in ("hidden", "batch_size", "epochs", "folds", "ns_iterations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d < 0:
            raise ConfigError("d must be >= 0 (0 disables the projection matrix)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0 or self.ridge_epsilon < 0:
            raise ConfigError("weight_decay and ridge_epsilon must be non-negative")

    def fingerprint(self, dataset_name: str) -> str:
        payload = {"dataset": dataset_name, **asdict(self)}
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class FoldReport:
    """Per-fold accuracies with their aggregate and run metadata."""

    dataset: str
    config_fingerprint: str
    per_fold_accuracy: list[float]
    mean: float
    std: float
    wallclock_seconds: float
    config: dict = field(default_factory=dict)
    reference: dict | None = None

    def to_dict(self, include_timing=True):
        out = {
            "dataset": self.dataset,
            "fingerprint": self.config_fingerprint,
            "config": self.config,
            "per_fold": self.per_fold_accuracy,
            "mean": self.mean,
            "std": self.std,
        }
        if self.reference is not None:
            out["reference"] = self.reference
        if include_timing:
            out["seconds"] = self.wallclock_seconds
        return out

    def to_json(self, include_timing=True):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def canonical_json(self):
        """Deterministic serialization: everything except wallclock timing."""
        return json.dumps(self.to_dict(include_timing=False), sort_keys=True)


class GraphClassifier:
    """GNN stack + pooling operator + linear head for one dataset."""

    def __init__(self, feature_dim, num_classes, config: TrainConfig, rng):
        kind, depth = GNN_PRESETS[config.gnn]
        self.config = config
        self.layers = []
        in_dim = feature_dim
        for k in range(depth):
            act = "relu" if k < depth - 1 else "none"
            self.layers.append(
                GnnLayer(
                    kind,
                    in_dim,
                    config.hidden,
                    rng,
                    activation=act,
                    epsilon=config.gin_epsilon,
                )
            )
            in_dim = config.hidden
        self.pooling = PoolingOperator(
            kind=config.pool,
            d=config.d if config.pool in ("dkepool", "dkepool_robust") else 0,
            ns_iterations=config.ns_iterations,
            ridge_epsilon=config.ridge_epsilon,
        )
        self.pooling.attach_projection(config.hidden, rng)
        pooled_dim = self.pooling.output_dim(config.hidden)
        bound = 1.0 / np.sqrt(pooled_dim)
        self.head_w = Tensor(
            rng.uniform(-bound, bound, size=(pooled_dim, num_classes)),
            requires_grad=True,
        )
        self.head_b = Tensor(np.zeros((1, num_classes)), requires_grad=True)

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend((f"layer{i}.{n}", t) for n, t in layer.parameters())
        out.extend((f"pool.{n}", t) for n, t in self.pooling.parameters())
        out.append(("head.w", self.head_w))
        out.append(("head.b", self.head_b))
        return out

    def init_fingerprint(self):
        """Hash of all parameter values; identifies an initialization exactly."""
        digest = hashlib.sha256()
        for name, t in self.parameters():
            digest.update(name.encode())
            digest.update(t.data.tobytes())
        return digest.hexdigest()[:16]

    def forward(self, batch: GraphBatch, noise_seed=None):
        h = stack_forward(batch, self.layers)
        if self.config.snr_db is not None and noise_seed is not None:
            noisy = inject_noise(h.data, self.config.snr_db, noise_seed)
            if noisy is not h.data:
                h = add(h, Tensor._wrap(noisy - h.data, False))
        pooled = concat_rows(
            [self.pooling.pool(h.slice_rows(*batch.graph_slice(i)))
             for i in range(batch.num_graphs)]
        )
        return add(matmul(pooled, self.head_w), self.head_b)


def make_batch(dataset: Dataset, indices) -> GraphBatch:
    """Pack the given graphs into one batch with offset edges."""
    feats, edges, boundaries, labels = [], [], [0], []
    offset = 0
    for i in indices:
        g = dataset.graphs[int(i)]
        feats.append(g.features)
        if len(g.edges):
            edges.append(g.edges + offset)
        offset += g.num_nodes
        boundaries.append(offset)
        labels.append(g.label)
    packed = (
        np.concatenate(edges, axis=0) if edges else np.empty((0, 2), dtype=np.int64)
    )
    return GraphBatch(np.concatenate(feats, axis=0), packed, boundaries, labels)


def evaluate(model: GraphClassifier, dataset: Dataset, indices, noise_seed=None):
    """Accuracy over the given graphs (forward only, no tape)."""
    if len(indices) == 0:
        return float("nan")
    correct = 0
    bs = model.config.batch_size
    for start in range(0, len(indices), bs):
        chunk = indices[start : start + bs]
        batch = make_batch(dataset, chunk)
        logits = model.forward(batch, noise_seed)
        correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
    return correct / len(indices)


def train_fold(dataset: Dataset, train_idx, test_idx, config: TrainConfig, fold_seed):
    """Train a fresh model on ``train_idx`` and evaluate on ``test_idx``.

    Returns (test accuracy, per-epoch mean training losses, init fingerprint).
    """
    rng = np.random.default_rng(fold_seed)
    model = GraphClassifier(dataset.feature_dim, dataset.num_classes, config, rng)
    fingerprint = model.init_fingerprint()
    optimizer = Adam(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )

    epoch_losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(train_idx))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            chunk = train_idx[order[start : start + config.batch_size]]
            batch = make_batch(dataset, chunk)
            noise_seed = int(rng.integers(2**31)) if config.snr_db is not None else None
            optimizer.zero_grad()
            with Tape() as tape:
                logits = model.forward(batch, noise_seed)
                loss = cross_entropy(logits, batch.labels)
            tape.backward(loss)
            optimizer.step()
            batch_losses.append(loss.item())
        epoch_losses.append(float(np.mean(batch_losses)))

    eval_seed = (fold_seed + EVAL_NOISE_OFFSET) if config.snr_db is not None else None
    accuracy = evaluate(model, dataset, test_idx, eval_seed)
    return accuracy, epoch_losses, fingerprint


def run_cv(dataset: Dataset, config: TrainConfig) -> FoldReport:
    """Stratified k-fold cross-validation; deterministic in config.seed."""
    started = time.perf_counter()
    plan = make_folds(dataset, config.folds, config.seed)
    accuracies = []
    for fold in range(config.folds):
        train_idx, test_idx = plan.split(fold)
        accuracy, _, _ = train_fold(
            dataset, train_idx, test_idx, config, config.seed + fold
        )
        accuracies.append(float(accuracy))
    mean = float(np.mean(accuracies))
    std = float(np.std(accuracies))
    return FoldReport(
        dataset=dataset.name,
        config_fingerprint=config.fingerprint(dataset.name),
        per_fold_accuracy=accuracies,
        mean=mean,
        std=std,
        wallclock_seconds=time.perf_counter() - started,
        config=asdict(config),
    )
