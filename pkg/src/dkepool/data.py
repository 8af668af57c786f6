"""TU-format dataset parsing, noise injection and fold planning.

The TU text convention: ``<name>_A.txt`` holds comma-separated 1-based edge
pairs (one per line), ``<name>_graph_indicator.txt`` the 1-based graph id of
each node line, ``<name>_graph_labels.txt`` one label per graph, and an
optional ``<name>_node_labels.txt`` one integer label per node. LF and CRLF
line endings are both accepted.

Node features are one-hot node labels when the file exists, otherwise one-hot
node degree capped at ``degree_cap`` with an overflow bucket. Edges are
deduplicated and stored in both directions; graph labels are remapped to a
contiguous 0-based range by sorted original value.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError, LoadError

DEFAULT_DEGREE_CAP = 64

# Disables noise injection when passed as snr_db.
SNR_DISABLED = float("inf")


@dataclass
class GraphRecord:
    """One graph: deduplicated bidirectional edges, features, 0-based label."""

    edges: np.ndarray  # (E, 2) int64, sorted, both directions present
    features: np.ndarray  # (n, f) float64
    label: int

    @property
    def num_nodes(self):
        return self.features.shape[0]


@dataclass
class Dataset:
    """A parsed graph-classification dataset."""

    name: str
    graphs: list[GraphRecord]
    num_classes: int
    feature_dim: int
    label_values: list[int]
    feature_source: str  # "node_labels" or "degree"
    node_label_values: list[int] | None = None

    def __len__(self):
        return len(self.graphs)

    def labels(self):
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def average_nodes(self):
        return float(np.mean([g.num_nodes for g in self.graphs]))


@dataclass
class FoldPlan:
    """Per-graph fold assignments for k-fold cross-validation."""

    fold_count: int
    assignments: np.ndarray
    seed: int

    def split(self, fold):
        """(train indices, test indices) for one held-out fold."""
        test = np.flatnonzero(self.assignments == fold)
        train = np.flatnonzero(self.assignments != fold)
        return train, test


def _read_lines(path: Path):
    if not path.is_file():
        raise LoadError(f"missing mandatory dataset file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _parse_int_pair(line, path, lineno):
    parts = [p for p in line.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise DataError(f"{path}:{lineno}: expected two integers, got {line!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: non-integer value in {line!r}") from exc


def _parse_int(line, path, lineno):
    try:
        return int(float(line.split(",")[0]))
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: expected an integer, got {line!r}") from exc


def parse_tu(directory, name, degree_cap=DEFAULT_DEGREE_CAP):
    """Load a TU-format dataset from ``directory`` into a :class:`Dataset`."""
    directory = Path(directory)
    ind_path = directory / f"{name}_graph_indicator.txt"
    adj_path = directory / f"{name}_A.txt"
    lab_path = directory / f"{name}_graph_labels.txt"
    node_lab_path = directory / f"{name}_node_labels.txt"

    indicator = [
        _parse_int(line, ind_path, i + 1)
        for i, line in enumerate(_read_lines(ind_path))
    ]
    n_nodes = len(indicator)
    if n_nodes == 0:
        raise DataError(f"{ind_path}: dataset has no nodes")
    n_graphs = max(indicator)
    if min(indicator) < 1:
        raise DataError(f"{ind_path}: graph ids are 1-based")

    # Node rows must be grouped per graph for contiguous batch slicing.
    counts = np.zeros(n_graphs, dtype=np.int64)
    prev = 0
    for i, g in enumerate(indicator):
        counts[g - 1] += 1
        if g < prev:
            raise DataError(f"{ind_path}:{i + 1}: graph ids must be non-decreasing")
        prev = g
    if np.any(counts == 0):
        empty = int(np.argmax(counts == 0)) + 1
        raise DataError(f"{ind_path}: graph {empty} has no nodes")
    offsets = np.concatenate([[0], np.cumsum(counts)])

    edge_sets = [set() for _ in range(n_graphs)]
    for lineno, line in enumerate(_read_lines(adj_path), start=1):
        u, v = _parse_int_pair(line, adj_path, lineno)
        if not (1 <= u <= n_nodes) or not (1 <= v <= n_nodes):
            raise DataError(
                f"{adj_path}:{lineno}: node index out of range 1..{n_nodes}"
            )
        gu, gv = indicator[u - 1], indicator[v - 1]
        if gu != gv:
            raise DataError(
                f"{adj_path}:{lineno}: edge joins graph {gu} and graph {gv}"
            )
        base = offsets[gu - 1]
        a, b = u - 1 - base, v - 1 - base
        edge_sets[gu - 1].add((a, b))
        edge_sets[gu - 1].add((b, a))

    raw_labels = [
        _parse_int(line, lab_path, i + 1)
        for i, line in enumerate(_read_lines(lab_path))
    ]
    if len(raw_labels) != n_graphs:
        raise DataError(
            f"{lab_path}: {len(raw_labels)} labels for {n_graphs} graphs"
        )
    label_values = sorted(set(raw_labels))
    label_map = {v: i for i, v in enumerate(label_values)}

    node_label_values = None
    features_per_node, feature_source = None, "degree"
    if node_lab_path.is_file():
        raw_node_labels = [
            _parse_int(line, node_lab_path, i + 1)
            for i, line in enumerate(_read_lines(node_lab_path))
        ]
        if len(raw_node_labels) != n_nodes:
            raise DataError(
                f"{node_lab_path}: {len(raw_node_labels)} labels for {n_nodes} nodes"
            )
        node_label_values = sorted(set(raw_node_labels))
        node_map = {v: i for i, v in enumerate(node_label_values)}
        features_per_node = np.array([node_map[v] for v in raw_node_labels])
        feature_source = "node_labels"
        feature_dim = len(node_label_values)

    graphs = []
    if feature_source == "degree":
        max_deg = 0
        for edges in edge_sets:
            deg = {}
            for a, _ in edges:
                deg[a] = deg.get(a, 0) + 1
            if deg:
                max_deg = max(max_deg, max(deg.values()))
        feature_dim = min(max_deg, degree_cap) + 1

    for gi in range(n_graphs):
        n = int(counts[gi])
        edges = np.array(sorted(edge_sets[gi]), dtype=np.int64).reshape(-1, 2)
        feats = np.zeros((n, feature_dim))
        if feature_source == "node_labels":
            rows = features_per_node[offsets[gi] : offsets[gi + 1]]
            feats[np.arange(n), rows] = 1.0
        else:
            deg = np.zeros(n, dtype=np.int64)
            if len(edges):
                deg = np.bincount(edges[:, 0], minlength=n)
            feats[np.arange(n), np.minimum(deg, degree_cap)] = 1.0
        graphs.append(
            GraphRecord(edges=edges, features=feats, label=label_map[raw_labels[gi]])
        )

    return Dataset(
        name=name,
        graphs=graphs,
        num_classes=len(label_values),
        feature_dim=feature_dim,
        label_values=label_values,
        feature_source=feature_source,
        node_label_values=node_label_values,
    )


def write_tu(dataset: Dataset, directory):
    """Serialize a dataset back to the TU text layout it was parsed from."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = dataset.name

    adj_lines, ind_lines, node_lab_lines = [], [], []
    offset = 0
    for gi, graph in enumerate(dataset.graphs, start=1):
        for a, b in graph.edges:
            adj_lines.append(f"{a + 1 + offset}, {b + 1 + offset}")
        ind_lines.extend([str(gi)] * graph.num_nodes)
        if dataset.feature_source == "node_labels":
            idx = graph.features.argmax(axis=1)
            node_lab_lines.extend(
                str(dataset.node_label_values[i]) for i in idx
            )
        offset += graph.num_nodes

    lab_lines = [str(dataset.label_values[g.label]) for g in dataset.graphs]

    (directory / f"{name}_A.txt").write_text("\n".join(adj_lines) + "\n")
    (directory / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (directory / f"{name}_graph_labels.txt").write_text("\n".join(lab_lines) + "\n")
    if dataset.feature_source == "node_labels":
        (directory / f"{name}_node_labels.txt").write_text(
            "\n".join(node_lab_lines) + "\n"
        )


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Structural equality used by the round-trip checks."""
    if (
        a.name != b.name
        or a.num_classes != b.num_classes
        or a.feature_dim != b.feature_dim
        or a.feature_source != b.feature_source
        or a.label_values != b.label_values
        or a.node_label_values != b.node_label_values
        or len(a.graphs) != len(b.graphs)
    ):
        return False
    for ga, gb in zip(a.graphs, b.graphs):
        if ga.label != gb.label:
            return False
        if not np.array_equal(ga.edges, gb.edges):
            return False
        if not np.array_equal(ga.features, gb.features):
            return False
    return True


def inject_noise(h, snr_db, rng_seed):
    """Additive Gaussian noise at a fixed signal-to-noise ratio in decibels.

    The per-call noise variance is P_signal / 10^(snr_db / 10) with P_signal
    the mean squared entry of ``h``. Passing ``snr_db = inf`` (or None)
    disables the noise; an all-zero input is returned unchanged with a
    warning. Deterministic for a given seed.
    """
    h = np.asarray(h, dtype=np.float64)
    if snr_db is None or snr_db == SNR_DISABLED:
        return h
    p_signal = float(np.mean(np.square(h)))
    if p_signal <= 0.0:
        warnings.warn("inject_noise: zero signal power, skipping noise")
        return h
    sigma = np.sqrt(p_signal / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(rng_seed)
    return h + rng.normal(0.0, sigma, size=h.shape)


def make_folds(dataset: Dataset, k: int, seed: int) -> FoldPlan:
    """Deterministic stratified k-fold partition.

    Graphs are shuffled within each class and dealt round-robin across folds
    in one continuous pass, so overall fold sizes differ by at most one and so
    do per-class counts. Falls back to an unstratified deal (with a warning)
    when some class has fewer members than k.
    """
    n = len(dataset)
    if not (1 <= k <= n):
        raise ContractError(f"fold count {k} must be in 1..{n}")
    rng = np.random.default_rng(seed)
    labels = dataset.labels()
    counts = np.bincount(labels, minlength=dataset.num_classes)

    assignments = np.empty(n, dtype=np.int64)
    if np.any(counts < k):
        warnings.warn(
            f"class with fewer than {k} members: falling back to unstratified folds"
        )
        order = rng.permutation(n)
        assignments[order] = np.arange(n) % k
    else:
        cursor = 0
        for c in range(dataset.num_classes):
            members = np.flatnonzero(labels == c)
            members = members[rng.permutation(len(members))]
            for m in members:
                assignments[m] = cursor % k
                cursor += 1
    return FoldPlan(fold_count=k, assignments=assignments, seed=seed)
