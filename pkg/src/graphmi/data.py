"""Graph containers, dataset ingestion, batching, and synthetic corpora.

Datasets on disk come in two forms:

* The TU text layout: ``{name}_A.txt`` (comma-separated 1-indexed edge
  pairs), ``{name}_graph_indicator.txt`` (1-indexed graph id per node line),
  ``{name}_graph_labels.txt``, and optionally ``{name}_node_labels.txt``,
  ``{name}_edge_labels.txt``, ``{name}_graph_attributes.txt`` (regression
  targets, comma separated).

* An internal line-oriented cache written by ``save_dataset``::

      graphmi-dataset v1
      name <str>
      feature_dim <int>
      num_classes <int or ->
      target_dim <int or ->
      meta <key> <value>            # zero or more
      graphs <count>
      graph <n_nodes> <n_edges>     # then, per graph:
      label <int>                   #   if labeled
      targets <float> ...           #   if regression targets present
      nodelabels <int> ...          #   if raw node labels present
      feat <float> ...              #   n_nodes rows, if features built
      edge <u> <v>                  #   n_edges rows, 0-indexed undirected

  Floats are written with ``repr`` so a parse -> save -> load round trip
  reproduces values exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError


@dataclass(eq=False)
class Graph:
    """An attributed undirected graph.

    Edges are 0-indexed, deduplicated pairs; self-loops appear only if the
    source data had them. ``edge_features`` are carried for completeness but
    the encoder does not consume them.
    """

    n: int
    edges: list[tuple[int, int]]
    node_features: np.ndarray | None = None
    label: int | None = None
    targets: np.ndarray | None = None
    node_labels: list[int] | None = None
    edge_features: np.ndarray | None = None

    def degrees(self) -> np.ndarray:
        """Per-node degree; a self-loop counts once."""
        deg = np.zeros(self.n, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            if v != u:
                deg[v] += 1
        return deg

    def undirected_edge_set(self) -> set[tuple[int, int]]:
        return {(min(u, v), max(u, v)) for u, v in self.edges}

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        if self.n != other.n or self.undirected_edge_set() != other.undirected_edge_set():
            return False
        if self.label != other.label or self.node_labels != other.node_labels:
            return False
        for a, b in ((self.node_features, other.node_features),
                     (self.targets, other.targets),
                     (self.edge_features, other.edge_features)):
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


@dataclass(eq=False)
class Dataset:
    """An ordered collection of graphs with shared featurization."""

    name: str
    graphs: list[Graph]
    feature_dim: int = 0
    num_classes: int | None = None
    target_dim: int | None = None
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.graphs)

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def targets(self) -> np.ndarray:
        return np.stack([g.targets for g in self.graphs])

    def subset(self, indices) -> list[Graph]:
        return [self.graphs[i] for i in indices]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.feature_dim == other.feature_dim
                and self.num_classes == other.num_classes
                and self.target_dim == other.target_dim
                and len(self.graphs) == len(other.graphs)
                and all(a == b for a, b in zip(self.graphs, other.graphs)))


@dataclass
class GraphBatch:
    """Disjoint union of graphs with a node-to-graph index map.

    Every undirected edge is stored in both directions (a self-loop once),
    so neighbor aggregation is a single segment-sum over incoming pairs.
    """

    total_nodes: int
    node_features: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    node2graph: np.ndarray
    num_graphs: int
    graph_sizes: np.ndarray
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]


# ---------------------------------------------------------------------------
# TU-format ingestion

def _read_int_lines(path: str, what: str) -> list[list[int]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(([int(tok) for tok in line.split(",")], lineno))
            except ValueError:
                raise DataFormatError(
                    f"{what}: non-integer token at {os.path.basename(path)}:{lineno}"
                ) from None
    return rows


def _read_float_lines(path: str, what: str) -> list[tuple[list[float], int]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(([float(tok) for tok in line.split(",")], lineno))
            except ValueError:
                raise DataFormatError(
                    f"{what}: non-numeric token at {os.path.basename(path)}:{lineno}"
                ) from None
    return rows


def parse_tu_dataset(directory: str, name: str) -> Dataset:
    """Load a TU-format dataset directory into 0-indexed form.

    Nodes and graphs become 0-indexed, undirected edges are deduplicated,
    and class labels are remapped to a contiguous 0-based range. Node
    features are not built here; see ``build_features``.
    """
    def path(suffix):
        return os.path.join(directory, f"{name}_{suffix}.txt")

    for mandatory in ("A", "graph_indicator", "graph_labels"):
        if not os.path.isfile(path(mandatory)):
            raise FileNotFoundError(f"missing mandatory file {path(mandatory)}")

    indicator = _read_int_lines(path("graph_indicator"), "graph_indicator")
    node_graph = np.array([row[0] for row, _ in indicator], dtype=np.int64) - 1
    total_nodes = node_graph.shape[0]
    num_graphs = int(node_graph.max()) + 1 if total_nodes else 0

    label_rows = _read_int_lines(path("graph_labels"), "graph_labels")
    if len(label_rows) != num_graphs:
        raise DataFormatError(
            f"graph_labels has {len(label_rows)} lines, expected {num_graphs}"
        )
    raw_labels = [row[0] for row, _ in label_rows]
    alphabet = sorted(set(raw_labels))
    remap = {lab: i for i, lab in enumerate(alphabet)}
    labels = [remap[lab] for lab in raw_labels]

    # Local node numbering: nodes keep their global order within each graph.
    local_index = np.zeros(total_nodes, dtype=np.int64)
    counts = np.zeros(num_graphs, dtype=np.int64)
    for i in range(total_nodes):
        g = node_graph[i]
        local_index[i] = counts[g]
        counts[g] += 1

    edge_rows = _read_int_lines(path("A"), "A")
    edge_label_rows = None
    if os.path.isfile(path("edge_labels")):
        edge_label_rows = _read_int_lines(path("edge_labels"), "edge_labels")
        if len(edge_label_rows) != len(edge_rows):
            raise DataFormatError(
                f"edge_labels has {len(edge_label_rows)} lines, expected {len(edge_rows)}"
            )

    per_graph_edges: list[dict[tuple[int, int], float | None]] = [
        {} for _ in range(num_graphs)
    ]
    for k, (row, lineno) in enumerate(edge_rows):
        if len(row) != 2:
            raise DataFormatError(f"A: expected two tokens at A:{lineno}")
        u, v = row[0] - 1, row[1] - 1
        if not (0 <= u < total_nodes and 0 <= v < total_nodes):
            raise DataFormatError(f"A: node id out of range at A:{lineno}")
        if node_graph[u] != node_graph[v]:
            raise DataFormatError(
                f"A: edge joins nodes of different graphs at A:{lineno}"
            )
        g = node_graph[u]
        a, b = int(local_index[u]), int(local_index[v])
        key = (min(a, b), max(a, b))
        if key not in per_graph_edges[g]:
            feat = float(edge_label_rows[k][0][0]) if edge_label_rows else None
            per_graph_edges[g][key] = feat

    node_labels_all = None
    if os.path.isfile(path("node_labels")):
        rows = _read_int_lines(path("node_labels"), "node_labels")
        if len(rows) != total_nodes:
            raise DataFormatError(
                f"node_labels has {len(rows)} lines, expected {total_nodes}"
            )
        node_labels_all = [row[0] for row, _ in rows]

    targets_all = None
    if os.path.isfile(path("graph_attributes")):
        rows = _read_float_lines(path("graph_attributes"), "graph_attributes")
        if len(rows) != num_graphs:
            raise DataFormatError(
                f"graph_attributes has {len(rows)} lines, expected {num_graphs}"
            )
        targets_all = [np.array(row, dtype=np.float64) for row, _ in rows]

    graphs = []
    for g in range(num_graphs):
        n = int(counts[g])
        edge_items = list(per_graph_edges[g].items())
        edges = [e for e, _ in edge_items]
        efeat = None
        if edge_label_rows and edge_items:
            efeat = np.array([[f] for _, f in edge_items], dtype=np.float64)
        nlabels = None
        if node_labels_all is not None:
            nlabels = [node_labels_all[i] for i in range(total_nodes)
                       if node_graph[i] == g]
        graphs.append(Graph(
            n=n, edges=edges, label=labels[g],
            targets=None if targets_all is None else targets_all[g],
            node_labels=nlabels, edge_features=efeat,
        ))

    target_dim = None
    if targets_all is not None:
        target_dim = int(targets_all[0].shape[0])
    meta = {
        "source": "tu",
        "total_nodes": total_nodes,
        "avg_graph_size": total_nodes / num_graphs if num_graphs else 0.0,
    }
    return Dataset(name=name, graphs=graphs, feature_dim=0,
                   num_classes=len(alphabet), target_dim=target_dim,
                   metadata=meta)


def write_tu_dataset(dataset: Dataset, directory: str, name: str) -> None:
    """Write a dataset back out in the TU text layout.

    Each undirected edge is emitted in both orientations (a self-loop once).
    Node labels are written when present, otherwise capped node degrees fill
    the node_labels file. Graphs without class labels get label 0.
    """
    os.makedirs(directory, exist_ok=True)

    def path(suffix):
        return os.path.join(directory, f"{name}_{suffix}.txt")

    a_lines, ind_lines, lab_lines, nlab_lines, attr_lines = [], [], [], [], []
    offset = 0
    for gi, g in enumerate(dataset.graphs):
        for local in range(g.n):
            ind_lines.append(str(gi + 1))
        for u, v in g.edges:
            a_lines.append(f"{offset + u + 1}, {offset + v + 1}")
            if u != v:
                a_lines.append(f"{offset + v + 1}, {offset + u + 1}")
        lab_lines.append(str(g.label if g.label is not None else 0))
        if g.node_labels is not None:
            nlab_lines.extend(str(l) for l in g.node_labels)
        else:
            nlab_lines.extend(str(d) for d in g.degrees())
        if g.targets is not None:
            attr_lines.append(", ".join(repr(float(t)) for t in g.targets))
        offset += g.n

    with open(path("A"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(a_lines) + "\n")
    with open(path("graph_indicator"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(ind_lines) + "\n")
    with open(path("graph_labels"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lab_lines) + "\n")
    with open(path("node_labels"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(nlab_lines) + "\n")
    if attr_lines:
        with open(path("graph_attributes"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(attr_lines) + "\n")


# ---------------------------------------------------------------------------
# Featurization

def build_features(dataset: Dataset, mode: str, cap: int = 6) -> Dataset:
    """Attach one-hot node features and return a new dataset.

    ``node-labels`` uses the global node-label alphabet; ``degree`` one-hot
    encodes min(degree, cap) with dimension cap + 1.
    """
    if mode == "node-labels":
        if any(g.node_labels is None for g in dataset.graphs):
            raise ConfigError(
                "node-labels featurization requested but node labels are absent"
            )
        alphabet = sorted({l for g in dataset.graphs for l in g.node_labels})
        index = {lab: i for i, lab in enumerate(alphabet)}
        dim = len(alphabet)

        def features(g: Graph) -> np.ndarray:
            out = np.zeros((g.n, dim))
            for i, lab in enumerate(g.node_labels):
                out[i, index[lab]] = 1.0
            return out

    elif mode == "degree":
        dim = cap + 1

        def features(g: Graph) -> np.ndarray:
            out = np.zeros((g.n, dim))
            deg = np.minimum(g.degrees(), cap)
            out[np.arange(g.n), deg] = 1.0
            return out

    else:
        raise ConfigError(f"unknown featurization mode {mode!r}")

    graphs = [Graph(n=g.n, edges=list(g.edges), node_features=features(g),
                    label=g.label, targets=g.targets, node_labels=g.node_labels,
                    edge_features=g.edge_features)
              for g in dataset.graphs]
    meta = dict(dataset.metadata)
    meta["feature_mode"] = mode
    if mode == "degree":
        meta["degree_cap"] = cap
    return Dataset(name=dataset.name, graphs=graphs, feature_dim=dim,
                   num_classes=dataset.num_classes, target_dim=dataset.target_dim,
                   metadata=meta)


# ---------------------------------------------------------------------------
# Batching

def make_batch(graphs: list[Graph]) -> GraphBatch:
    """Stack graphs into one block-structured graph with offset node ids."""
    if not graphs:
        raise ValueError("make_batch: empty graph list")
    dim = graphs[0].node_features.shape[1] if graphs[0].node_features is not None else None
    if dim is None:
        raise ValueError("make_batch: graphs have no node features; build features first")
    src, dst = [], []
    node2graph = []
    offset = 0
    for gi, g in enumerate(graphs):
        if g.node_features.shape[1] != dim:
            raise ValueError(
                f"make_batch: feature dim {g.node_features.shape[1]} != {dim}"
            )
        for u, v in g.edges:
            src.append(offset + u)
            dst.append(offset + v)
            if u != v:
                src.append(offset + v)
                dst.append(offset + u)
        node2graph.extend([gi] * g.n)
        offset += g.n

    labels = None
    if all(g.label is not None for g in graphs):
        labels = np.array([g.label for g in graphs], dtype=np.int64)
    targets = None
    if all(g.targets is not None for g in graphs):
        targets = np.stack([g.targets for g in graphs])

    return GraphBatch(
        total_nodes=offset,
        node_features=np.concatenate([g.node_features for g in graphs], axis=0),
        edge_src=np.array(src, dtype=np.int64),
        edge_dst=np.array(dst, dtype=np.int64),
        node2graph=np.array(node2graph, dtype=np.int64),
        num_graphs=len(graphs),
        graph_sizes=np.array([g.n for g in graphs], dtype=np.int64),
        labels=labels,
        targets=targets,
    )


# ---------------------------------------------------------------------------
# Synthetic corpora

def _cycle_graph(n: int) -> list[tuple[int, int]]:
    return [(i, (i + 1) % n) for i in range(n)]


def _star_graph(n: int) -> list[tuple[int, int]]:
    return [(0, i) for i in range(1, n)]


def synth_classification(n_per_class: int, size_range: tuple[int, int],
                         seed: int) -> Dataset:
    """Cycles (class 0) vs stars (class 1) with degree one-hot features.

    A pure function of its arguments: the same seed reproduces the same
    dataset exactly.
    """
    lo, hi = size_range
    if lo < 3:
        raise ValueError(f"graph sizes must be >= 3, got range {size_range}")
    rng = np.random.default_rng(seed)
    graphs = []
    for label, builder in ((0, _cycle_graph), (1, _star_graph)):
        for _ in range(n_per_class):
            n = int(rng.integers(lo, hi + 1))
            g = Graph(n=n, edges=builder(n), label=label)
            g.node_labels = [int(d) for d in g.degrees()]
            graphs.append(g)
    ds = Dataset(name="synth-class", graphs=graphs, num_classes=2,
                 metadata={"source": "synth-class", "seed": seed,
                           "n_per_class": n_per_class, "size_range": list(size_range)})
    return build_features(ds, "degree", cap=6)


def count_triangles(n: int, edges: list[tuple[int, int]]) -> int:
    adj = np.zeros((n, n))
    for u, v in edges:
        if u != v:
            adj[u, v] = adj[v, u] = 1.0
    return int(round(np.trace(adj @ adj @ adj) / 6.0))


def synth_regression(n: int, size_range: tuple[int, int], seed: int) -> Dataset:
    """Random graphs (edge prob 0.3) targeting standardized triangle counts.

    Targets are shifted/scaled to mean 0 and variance 1 over the dataset;
    the constants live in ``metadata['target_mean'/'target_std']``.
    """
    if n < 2:
        raise ValueError("need at least 2 graphs to standardize targets")
    lo, hi = size_range
    if lo < 3:
        raise ValueError(f"graph sizes must be >= 3, got range {size_range}")
    rng = np.random.default_rng(seed)
    graphs, raw = [], []
    for _ in range(n):
        size = int(rng.integers(lo, hi + 1))
        edges = []
        for u in range(size):
            for v in range(u + 1, size):
                if rng.random() < 0.3:
                    edges.append((u, v))
        g = Graph(n=size, edges=edges)
        g.node_labels = [int(d) for d in g.degrees()]
        graphs.append(g)
        raw.append(count_triangles(size, edges))
    raw = np.array(raw, dtype=np.float64)
    mean, std = float(raw.mean()), float(raw.std())
    if std == 0.0:
        raise ValueError("degenerate corpus: all triangle counts equal")
    for g, t in zip(graphs, raw):
        g.targets = np.array([(t - mean) / std])
    ds = Dataset(name="synth-reg", graphs=graphs, target_dim=1,
                 metadata={"source": "synth-reg", "seed": seed, "n": n,
                           "size_range": list(size_range),
                           "target_mean": mean, "target_std": std})
    return build_features(ds, "degree", cap=6)


# ---------------------------------------------------------------------------
# Fold splitting

def kfold_split(n: int, k: int = 10, seed: int = 0):
    """Seeded shuffle into k folds with sizes differing by at most one.

    Returns a list of (train_indices, test_indices) pairs partitioning
    range(n).
    """
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if n < k:
        raise ValueError(f"cannot split {n} items into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i in range(k):
        test = folds[i]
        train = np.concatenate([folds[j] for j in range(k) if j != i])
        out.append((train, test))
    return out


# ---------------------------------------------------------------------------
# Internal cache format

def _fmt_floats(row) -> str:
    return " ".join(repr(float(x)) for x in row)


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write the internal line-oriented cache (see module docstring)."""
    lines = ["graphmi-dataset v1",
             f"name {dataset.name}",
             f"feature_dim {dataset.feature_dim}",
             f"num_classes {dataset.num_classes if dataset.num_classes is not None else '-'}",
             f"target_dim {dataset.target_dim if dataset.target_dim is not None else '-'}"]
    for key in sorted(dataset.metadata):
        lines.append(f"meta {key} {dataset.metadata[key]!r}")
    lines.append(f"graphs {len(dataset.graphs)}")
    for g in dataset.graphs:
        lines.append(f"graph {g.n} {len(g.edges)}")
        if g.label is not None:
            lines.append(f"label {g.label}")
        if g.targets is not None:
            lines.append(f"targets {_fmt_floats(g.targets)}")
        if g.node_labels is not None:
            lines.append("nodelabels " + " ".join(str(l) for l in g.node_labels))
        if g.node_features is not None:
            for row in g.node_features:
                lines.append(f"feat {_fmt_floats(row)}")
        for u, v in g.edges:
            lines.append(f"edge {u} {v}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path: str) -> Dataset:
    """Read a cache written by ``save_dataset``."""
    import ast

    with open(path, "r", encoding="utf-8") as fh:
        lines = [l.rstrip("\n") for l in fh]
    if not lines or lines[0] != "graphmi-dataset v1":
        raise DataFormatError(f"{path}: not a graphmi-dataset v1 file")
    pos = 1

    def take(prefix):
        nonlocal pos
        if pos >= len(lines) or not lines[pos].startswith(prefix + " "):
            raise DataFormatError(f"{path}:{pos + 1}: expected {prefix!r} line")
        value = lines[pos][len(prefix) + 1:]
        pos += 1
        return value

    name = take("name")
    feature_dim = int(take("feature_dim"))
    nc = take("num_classes")
    num_classes = None if nc == "-" else int(nc)
    td = take("target_dim")
    target_dim = None if td == "-" else int(td)
    metadata = {}
    while pos < len(lines) and lines[pos].startswith("meta "):
        _, key, raw = lines[pos].split(" ", 2)
        metadata[key] = ast.literal_eval(raw)
        pos += 1
    count = int(take("graphs"))

    graphs = []
    for _ in range(count):
        header = take("graph").split()
        n, m = int(header[0]), int(header[1])
        label = targets = node_labels = feats = None
        if pos < len(lines) and lines[pos].startswith("label "):
            label = int(take("label"))
        if pos < len(lines) and lines[pos].startswith("targets "):
            targets = np.array([float(x) for x in take("targets").split()])
        if pos < len(lines) and lines[pos].startswith("nodelabels "):
            node_labels = [int(x) for x in take("nodelabels").split()]
        if feature_dim > 0:
            rows = [np.array([float(x) for x in take("feat").split()])
                    for _ in range(n)]
            feats = np.stack(rows) if rows else np.zeros((0, feature_dim))
        edges = []
        for _ in range(m):
            u, v = take("edge").split()
            edges.append((int(u), int(v)))
        graphs.append(Graph(n=n, edges=edges, node_features=feats, label=label,
                            targets=targets, node_labels=node_labels))
    return Dataset(name=name, graphs=graphs, feature_dim=feature_dim,
                   num_classes=num_classes, target_dim=target_dim,
                   metadata=metadata)
