"""Graph classification with distribution-knowledge-embedding pooling.

The library turns a graph into node embeddings with message-passing layers
(GCN or GIN), summarizes the embedding distribution by its Gaussian statistics
(mean vector and covariance matrix), and pools them into a fixed-size graph
vector: z = W^T Sigma mu, optionally with a Newton-Schulz matrix square root
of the covariance for the robust variant. Everything is differentiable through
a small reverse-mode tape, so the whole pipeline trains end to end.
"""

from .data import Dataset, FoldPlan, inject_noise, make_folds, parse_tu, write_tu
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    DkepoolError,
    EmptyInputError,
    IterationLimitError,
    LoadError,
    NumericError,
)
from .gnn import GnnLayer, GraphBatch, gcn_forward, gin_forward, stack_forward
from .linalg import EigenDecomposition, jacobi_eigen, newton_schulz_sqrt, ridge_symmetrize
from .pooling import (
    POOL_KINDS,
    GaussianStats,
    PoolingOperator,
    dkepool,
    dkepool_robust,
    estimate_gaussian,
    flat_pool,
    gauss_embd,
    gauss_vcat,
)
from .tensor import Tape, Tensor
from .train import FoldReport, GraphClassifier, TrainConfig, cross_entropy, run_cv

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "Dataset",
    "DimensionError",
    "DkepoolError",
    "EigenDecomposition",
    "EmptyInputError",
    "FoldPlan",
    "FoldReport",
    "GaussianStats",
    "GnnLayer",
    "GraphBatch",
    "GraphClassifier",
    "IterationLimitError",
    "LoadError",
    "NumericError",
    "POOL_KINDS",
    "PoolingOperator",
    "Tape",
    "Tensor",
    "TrainConfig",
    "cross_entropy",
    "dkepool",
    "dkepool_robust",
    "estimate_gaussian",
    "flat_pool",
    "gauss_embd",
    "gauss_vcat",
    "gcn_forward",
    "gin_forward",
    "inject_noise",
    "jacobi_eigen",
    "make_folds",
    "newton_schulz_sqrt",
    "parse_tu",
    "ridge_symmetrize",
    "run_cv",
    "stack_forward",
    "write_tu",
]
