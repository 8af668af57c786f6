"""Shared fixtures: thread pinning for determinism and synthetic datasets.

Real TU datasets are looked up in $DKEPOOL_TU_ROOT or ./data (one directory
per dataset, e.g. data/MUTAG/MUTAG_A.txt). Tests that assert published
dataset cards skip when the real files are absent; everything else runs on
deterministic synthetic stand-ins.
"""

import os

# BLAS thread pools must be pinned before numpy loads anywhere, otherwise
# large reductions may be split non-deterministically.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

from pathlib import Path

import numpy as np
import pytest

from dkepool.data import parse_tu
from dkepool.synthetic import mutag_like, ptc_like, separable_fixture


def real_tu_dir(name):
    """Directory holding the real TU files for ``name``, or None."""
    root = os.environ.get("DKEPOOL_TU_ROOT", "data")
    candidate = Path(root) / name
    if (candidate / f"{name}_A.txt").is_file():
        return candidate
    return None


@pytest.fixture(scope="session")
def mutag_syn(tmp_path_factory):
    directory = mutag_like(tmp_path_factory.mktemp("mutag_syn"))
    return parse_tu(directory, "MUTAG_SYN")


@pytest.fixture(scope="session")
def ptc_syn(tmp_path_factory):
    directory = ptc_like(tmp_path_factory.mktemp("ptc_syn"))
    return parse_tu(directory, "PTC_SYN")


@pytest.fixture(scope="session")
def separable_ds(tmp_path_factory):
    directory = separable_fixture(
        tmp_path_factory.mktemp("separable"), num_graphs=48
    )
    return parse_tu(directory, "SEPARABLE")


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
