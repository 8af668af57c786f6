"""Distribution-learning pooling: Gaussian statistics and graph vectors.

A graph's node embeddings H (n x f) are summarized by the maximum-likelihood
Gaussian fit (mean vector mu, biased covariance Sigma plus a small ridge).
The main operator projects the covariance-mapped mean: z = W^T Sigma mu; the
robust variant replaces Sigma with its Newton-Schulz square root. Flat
readouts (mean / sum / max) and two classic Gaussian embeddings are provided
as baselines, all permutation invariant and size independent.

Pooled vectors are returned as 1 x D row tensors so they stack directly into
a batch matrix for the classifier head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, EmptyInputError
from .linalg import DEFAULT_NEWTON_SCHULZ_ITERATIONS, newton_schulz_sqrt
from .tensor import (
    Tensor,
    add,
    concat_cols,
    concat_rows,
    matmul,
    ones,
    reduce_max,
    reduce_mean,
    reduce_sum,
    reshape,
    scale,
    sub,
    transpose,
)

POOL_KINDS = (
    "mean",
    "sum",
    "max",
    "dkepool",
    "dkepool_robust",
    "gauss_vcat",
    "gauss_embd",
)

DEFAULT_RIDGE_EPSILON = 1e-4
FLAT_KINDS = ("mean", "sum", "max")


@dataclass
class GaussianStats:
    """Mean (f x 1), ridged covariance (f x f) and the node count behind them."""

    mu: Tensor
    sigma: Tensor
    n: int

    @property
    def dim(self):
        return self.mu.rows


def estimate_gaussian(h: Tensor, ridge_epsilon: float = DEFAULT_RIDGE_EPSILON):
    """Maximum-likelihood Gaussian fit of the embedding rows.

    mu is the column mean; Sigma is the biased covariance (divide by n) plus
    ridge_epsilon * I, which keeps single-node graphs non-singular. Both are
    differentiable with respect to h.
    """
    if h.rows < 1 or h.cols < 1:
        raise EmptyInputError("cannot fit a Gaussian to an empty embedding matrix")
    if ridge_epsilon < 0:
        raise ContractError("ridge_epsilon must be non-negative")
    n, f = h.shape
    mean_row = reduce_mean(h, "rows")
    centered = sub(h, mean_row)
    sigma = scale(matmul(transpose(centered), centered), 1.0 / n)
    if ridge_epsilon:
        sigma = add(sigma, Tensor._wrap(ridge_epsilon * np.eye(f), False))
    return GaussianStats(mu=transpose(mean_row), sigma=sigma, n=n)


def _project_row(vec_col, w):
    # (W^T v)^T == v^T W, returned as a 1 x d row.
    if w is None:
        return transpose(vec_col)
    if w.rows != vec_col.rows:
        raise DimensionError(
            f"projection expects {vec_col.rows} rows, got {w.shape}"
        )
    return matmul(transpose(vec_col), w)


def dkepool(stats: GaussianStats, w: Tensor | None = None):
    """Covariance-mapped mean, optionally projected: z = W^T Sigma mu.

    Without a projection matrix the raw f-dimensional vector Sigma mu is
    returned (the d = 0 setting).
    """
    return _project_row(matmul(stats.sigma, stats.mu), w)


def dkepool_robust(
    stats: GaussianStats,
    w: Tensor | None = None,
    iterations: int = DEFAULT_NEWTON_SCHULZ_ITERATIONS,
):
    """Robust variant: the covariance is replaced by its matrix square root."""
    sigma_hat = newton_schulz_sqrt(stats.sigma, iterations)
    return _project_row(matmul(sigma_hat, stats.mu), w)


def _second_moment(stats):
    return add(stats.sigma, matmul(stats.mu, transpose(stats.mu)))


def gauss_embd(stats: GaussianStats):
    """Symmetric-matrix embedding [[Sigma + mu mu^T, mu], [mu^T, 1]], flattened.

    Returns the (f+1) x (f+1) block matrix row-major as a 1 x (f+1)^2 row.
    """
    f = stats.dim
    top = concat_cols([_second_moment(stats), stats.mu])
    bottom = concat_cols([transpose(stats.mu), ones(1, 1)])
    block = concat_rows([top, bottom])
    return reshape(block, 1, (f + 1) * (f + 1))


def gauss_vcat(stats: GaussianStats):
    """Concatenation of vec(Sigma + mu mu^T) and mu as a 1 x f(f+1) row."""
    f = stats.dim
    return concat_cols(
        [reshape(_second_moment(stats), 1, f * f), transpose(stats.mu)]
    )


def flat_pool(h: Tensor, kind: str):
    """Column-wise mean / sum / max readout as a 1 x f row."""
    if kind not in FLAT_KINDS:
        raise ConfigError(f"flat pooling kind must be one of {FLAT_KINDS}, got {kind!r}")
    if h.rows < 1 or h.cols < 1:
        raise EmptyInputError("cannot pool an empty embedding matrix")
    if kind == "mean":
        return reduce_mean(h, "rows")
    if kind == "sum":
        return reduce_sum(h, "rows")
    return reduce_max(h, "rows")


@dataclass
class PoolingOperator:
    """A named pooling strategy mapping n x f embeddings to a 1 x D row.

    ``d = 0`` on the dkepool kinds means no projection matrix; otherwise the
    caller attaches a trainable f x d ``projection``.
    """

    kind: str
    d: int = 0
    ns_iterations: int = DEFAULT_NEWTON_SCHULZ_ITERATIONS
    ridge_epsilon: float = DEFAULT_RIDGE_EPSILON
    projection: Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in POOL_KINDS:
            raise ConfigError(
                f"pooling kind must be one of {POOL_KINDS}, got {self.kind!r}"
            )
        if self.d < 0:
            raise ConfigError("projection dimension d must be >= 0")
        if self.ns_iterations < 1:
            raise ConfigError("ns_iterations must be >= 1")
        if self.d and self.kind not in ("dkepool", "dkepool_robust"):
            raise ConfigError(f"kind {self.kind!r} takes no projection matrix")

    def output_dim(self, f: int) -> int:
        """Pooled width for f-dimensional embeddings; independent of n."""
        if self.kind in FLAT_KINDS:
            return f
        if self.kind in ("dkepool", "dkepool_robust"):
            return self.d if self.d else f
        if self.kind == "gauss_vcat":
            return f * (f + 1)
        return (f + 1) * (f + 1)

    def attach_projection(self, f: int, rng):
        """Create the trainable f x d projection (dkepool kinds with d > 0)."""
        if self.d and self.kind in ("dkepool", "dkepool_robust"):
            bound = 1.0 / np.sqrt(f)
            self.projection = Tensor(
                rng.uniform(-bound, bound, size=(f, self.d)), requires_grad=True
            )
        return self.projection

    def parameters(self):
        return [("projection", self.projection)] if self.projection is not None else []

    def pool(self, h: Tensor):
        if self.kind in FLAT_KINDS:
            return flat_pool(h, self.kind)
        stats = estimate_gaussian(h, self.ridge_epsilon)
        if self.kind == "dkepool":
            return dkepool(stats, self.projection)
        if self.kind == "dkepool_robust":
            return dkepool_robust(stats, self.projection, self.ns_iterations)
        if self.kind == "gauss_vcat":
            return gauss_vcat(stats)
        return gauss_embd(stats)
