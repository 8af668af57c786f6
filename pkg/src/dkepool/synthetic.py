"""Deterministic synthetic graph benchmarks in TU text format.

These generators write molecule-like random graphs whose class signal lives
in the node-label mixture and in ring/branching structure, with an explicit
label-flip rate that caps the best achievable accuracy. They are statistics
stand-ins for desk-scale experiments and CI: the ``mutag_like`` and
``ptc_like`` presets match the public dataset cards (graph counts, class
sizes, node-label alphabet, average size) of the corresponding benchmarks,
but the graphs themselves are synthetic. Everything is reproducible from the
seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ClassRecipe:
    """Generative knobs for one class.

    ``label_probs`` may be a single distribution or a stack of per-graph
    modes; each graph draws all its labels from one mode picked uniformly.
    A multi-mode class with the same average distribution as a single-mode
    class is separable through per-graph covariance but not through the
    class-level label marginals.
    """

    def __init__(self, label_probs, ring_prob, ring_len, ring_pattern, extra_edges):
        probs = np.atleast_2d(np.asarray(label_probs, dtype=np.float64))
        self.label_modes = probs / probs.sum(axis=1, keepdims=True)
        self.ring_prob = ring_prob
        self.ring_len = ring_len
        self.ring_pattern = list(ring_pattern)
        self.extra_edges = extra_edges

    def pick_mode(self, rng):
        return self.label_modes[rng.integers(len(self.label_modes))]


def _one_graph(rng, n, recipe):
    edges = set()
    ring_len = recipe.ring_len if rng.random() < recipe.ring_prob else 0
    ring_len = min(ring_len, n)
    if ring_len >= 3:
        for i in range(ring_len):
            j = (i + 1) % ring_len
            edges.add((min(i, j), max(i, j)))
    start = max(ring_len, 1)
    for i in range(start, n):
        parent = int(rng.integers(0, i))
        edges.add((parent, i))
    for _ in range(rng.poisson(recipe.extra_edges)):
        if n < 2:
            break
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((min(u, v), max(u, v)))

    probs = recipe.pick_mode(rng)
    labels = rng.choice(len(probs), size=n, p=probs)
    if ring_len >= 3:
        pattern = recipe.ring_pattern
        labels[:ring_len] = [pattern[i % len(pattern)] for i in range(ring_len)]
    return sorted(edges), labels


def write_synthetic_tu(
    directory,
    name,
    class_sizes,
    recipes,
    node_range=(10, 28),
    flip_prob=0.0,
    class_label_values=None,
    seed=0,
):
    """Generate a two-or-more-class synthetic dataset in TU layout.

    ``flip_prob`` is the fraction of graphs generated with another class's
    recipe while keeping their own label, which bounds attainable accuracy.
    Returns the directory path.
    """
    rng = np.random.default_rng(seed)
    num_classes = len(class_sizes)
    if class_label_values is None:
        class_label_values = list(range(num_classes))

    class_of = np.repeat(np.arange(num_classes), class_sizes)
    rng.shuffle(class_of)

    adj_lines, ind_lines, node_label_lines, graph_label_lines = [], [], [], []
    offset = 0
    for gi, cls in enumerate(class_of, start=1):
        n = int(rng.integers(node_range[0], node_range[1] + 1))
        recipe_cls = int(cls)
        if flip_prob and rng.random() < flip_prob:
            others = [c for c in range(num_classes) if c != cls]
            recipe_cls = int(rng.choice(others))
        edges, labels = _one_graph(rng, n, recipes[recipe_cls])
        for a, b in edges:
            adj_lines.append(f"{a + 1 + offset}, {b + 1 + offset}")
            adj_lines.append(f"{b + 1 + offset}, {a + 1 + offset}")
        ind_lines.extend([str(gi)] * n)
        node_label_lines.extend(str(int(v)) for v in labels)
        graph_label_lines.append(str(class_label_values[cls]))
        offset += n

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{name}_A.txt").write_text("\n".join(adj_lines) + "\n")
    (directory / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (directory / f"{name}_graph_labels.txt").write_text(
        "\n".join(graph_label_lines) + "\n"
    )
    (directory / f"{name}_node_labels.txt").write_text(
        "\n".join(node_label_lines) + "\n"
    )
    return directory


def mutag_like(directory, name="MUTAG_SYN", seed=7):
    """188 graphs, 2 classes (125/63), 7 node labels, ~18 nodes per graph."""
    recipes = [
        ClassRecipe(
            label_probs=[0.02, 0.02, 0.02, 0.32, 0.28, 0.22, 0.12],
            ring_prob=0.35,
            ring_len=5,
            ring_pattern=[3, 4, 3, 5],
            extra_edges=1.0,
        ),
        ClassRecipe(
            label_probs=[0.40, 0.30, 0.22, 0.02, 0.02, 0.02, 0.02],
            ring_prob=0.90,
            ring_len=6,
            ring_pattern=[0, 1],
            extra_edges=2.0,
        ),
    ]
    return write_synthetic_tu(
        directory,
        name,
        class_sizes=(63, 125),
        recipes=recipes,
        node_range=(10, 28),
        flip_prob=0.05,
        class_label_values=[-1, 1],
        seed=seed,
    )


def ptc_like(directory, name="PTC_SYN", seed=11):
    """344 graphs, 2 classes (192/152), 19 node labels, ~25.5 nodes per graph."""
    low = np.concatenate([np.linspace(0.30, 0.15, 9), [0.04], np.full(9, 0.02)])
    high = low[::-1].copy()
    recipes = [
        ClassRecipe(
            label_probs=high,
            ring_prob=0.30,
            ring_len=5,
            ring_pattern=[12, 13, 14],
            extra_edges=1.0,
        ),
        ClassRecipe(
            label_probs=low,
            ring_prob=0.65,
            ring_len=6,
            ring_pattern=[1, 2],
            extra_edges=1.8,
        ),
    ]
    return write_synthetic_tu(
        directory,
        name,
        class_sizes=(192, 152),
        recipes=recipes,
        node_range=(8, 43),
        flip_prob=0.10,
        class_label_values=[-1, 1],
        seed=seed,
    )


def separable_fixture(directory, name="SEPARABLE", num_graphs=12):
    """A trivially separable set: the class is the graph-size parity (path of
    4 or 5 nodes) and every node's label equals the class."""
    adj_lines, ind_lines, node_label_lines, graph_label_lines = [], [], [], []
    offset = 0
    for gi in range(1, num_graphs + 1):
        cls = gi % 2
        n = 4 + cls
        for i in range(1, n):
            adj_lines.append(f"{i + offset}, {i + 1 + offset}")
            adj_lines.append(f"{i + 1 + offset}, {i + offset}")
        ind_lines.extend([str(gi)] * n)
        node_label_lines.extend([str(cls)] * n)
        graph_label_lines.append(str(cls))
        offset += n

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{name}_A.txt").write_text("\n".join(adj_lines) + "\n")
    (directory / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (directory / f"{name}_graph_labels.txt").write_text(
        "\n".join(graph_label_lines) + "\n"
    )
    (directory / f"{name}_node_labels.txt").write_text(
        "\n".join(node_label_lines) + "\n"
    )
    return directory
