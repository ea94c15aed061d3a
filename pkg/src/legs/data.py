"""Graph datasets: TU text format, structural node features, synthetic sets."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .errors import (
    AsymmetricEdgeList,
    InconsistentIndicator,
    InvalidSizeRange,
    ParseError,
    ZeroVarianceTarget,
)
from .graph import Graph, build_graph

STRUCTURAL = ("eccentricity", "clustering")


@dataclass(eq=False)
class GraphDataset:
    graphs: list
    node_features: list
    labels: np.ndarray
    name: str = "dataset"
    feature_spec: list = field(default_factory=lambda: list(STRUCTURAL))
    task: str = "classification"

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if not (len(self.graphs) == len(self.node_features) == len(self.labels)):
            raise ValueError("graphs, node features and labels must align")
        for g, x in zip(self.graphs, self.node_features):
            if x.shape[0] != g.n or not np.all(np.isfinite(x)):
                raise ValueError("node features must be finite and match node counts")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.task == "classification" else 0

    @property
    def channels(self) -> int:
        return self.node_features[0].shape[1]

    def subset(self, idx) -> "GraphDataset":
        idx = [int(i) for i in idx]
        return replace(
            self,
            graphs=[self.graphs[i] for i in idx],
            node_features=[self.node_features[i] for i in idx],
            labels=self.labels[idx],
        )

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "task": self.task,
            "graphs": len(self),
            "nodes_total": int(sum(g.n for g in self.graphs)),
            "nodes_mean": float(np.mean([g.n for g in self.graphs])),
            "classes": self.n_classes,
            "feature_spec": list(self.feature_spec),
        }


# ---------------------------------------------------------------------------
# structural node features


def _binary(g: Graph) -> sp.csr_matrix:
    B = g.adjacency.copy().tocsr()
    B.setdiag(0)
    B.eliminate_zeros()
    B.data[:] = 1.0
    return B


def eccentricity(g: Graph) -> np.ndarray:
    """Largest hop distance from each node to any node of its own component."""
    dist = shortest_path(_binary(g), directed=False, unweighted=True)
    dist[~np.isfinite(dist)] = 0.0
    return dist.max(axis=1)


def clustering_coefficient(g: Graph) -> np.ndarray:
    """Fraction of neighbor pairs that are linked; 0 below degree 2."""
    B = _binary(g)
    k = np.asarray(B.sum(axis=1)).ravel()
    links = np.asarray((B @ B).multiply(B).sum(axis=1)).ravel() / 2.0
    pairs = k * (k - 1) / 2.0
    return np.divide(links, pairs, out=np.zeros_like(links), where=pairs > 0)


def structural_features(g: Graph) -> np.ndarray:
    return np.column_stack([eccentricity(g), clustering_coefficient(g)])


# ---------------------------------------------------------------------------
# TU format


@dataclass(frozen=True)
class TuRawFiles:
    adjacency: Path
    graph_indicator: Path
    graph_labels: Path
    node_labels: Path | None = None
    node_attributes: Path | None = None

    @classmethod
    def from_dir(cls, directory, name: str) -> "TuRawFiles":
        d = Path(directory)

        def opt(suffix):
            p = d / f"{name}_{suffix}.txt"
            return p if p.exists() else None

        return cls(
            adjacency=d / f"{name}_A.txt",
            graph_indicator=d / f"{name}_graph_indicator.txt",
            graph_labels=d / f"{name}_graph_labels.txt",
            node_labels=opt("node_labels"),
            node_attributes=opt("node_attributes"),
        )


def _read_rows(path, kind=int):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([kind(tok) for tok in line.replace(",", " ").split()])
            except ValueError:
                raise ParseError(f"cannot parse {line!r}", path=path, line=lineno) from None
    return rows


def parse_tu(
    files: TuRawFiles,
    isolated_policy: str = "self_loop",
    features: str = "structural",
    node_labels: bool = False,
    name: str | None = None,
) -> GraphDataset:
    """Read a TU-format dataset into unit-weight undirected graphs.

    ``features`` is ``"structural"`` (eccentricity, clustering),
    ``"attributes"`` (the node attribute file) or ``"both"``.  Node labels,
    if requested, are appended one-hot.  Graph labels are remapped to
    contiguous class indices ``0..C-1``.
    """
    labels_raw = [r[0] for r in _read_rows(files.graph_labels, float)]
    n_graphs = len(labels_raw)
    indicator = []
    for lineno, r in enumerate(_read_rows(files.graph_indicator), start=1):
        if len(r) != 1:
            raise ParseError("expected one graph id per line", path=files.graph_indicator, line=lineno)
        if not 1 <= r[0] <= n_graphs:
            raise InconsistentIndicator(f"node {lineno} assigned to graph {r[0]}, only {n_graphs} graphs")
        indicator.append(r[0] - 1)
    indicator = np.array(indicator, dtype=np.int64)
    if np.any(np.bincount(indicator, minlength=n_graphs) == 0):
        empty = np.flatnonzero(np.bincount(indicator, minlength=n_graphs) == 0)
        raise InconsistentIndicator(f"graphs without nodes: {(empty + 1).tolist()}")
    n_nodes = len(indicator)
    local = np.empty(n_nodes, dtype=np.int64)
    counts = np.zeros(n_graphs, dtype=np.int64)
    for v, gid in enumerate(indicator):
        local[v] = counts[gid]
        counts[gid] += 1

    directed = set()
    for lineno, r in enumerate(_read_rows(files.adjacency), start=1):
        if len(r) != 2:
            raise ParseError("expected 'i, j'", path=files.adjacency, line=lineno)
        i, j = r[0] - 1, r[1] - 1
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise ParseError(f"node index out of range in {r}", path=files.adjacency, line=lineno)
        if indicator[i] != indicator[j]:
            raise InconsistentIndicator(f"edge {r} joins graphs {indicator[i] + 1} and {indicator[j] + 1}")
        if i != j:
            directed.add((i, j))
    missing = [(i + 1, j + 1) for i, j in directed if (j, i) not in directed]
    if missing:
        raise AsymmetricEdgeList(f"{len(missing)} edges listed in one direction only, e.g. {sorted(missing)[0]}")
    per_graph = [[] for _ in range(n_graphs)]
    for i, j in sorted(directed):
        if i < j:
            per_graph[indicator[i]].append((local[i], local[j], 1.0))
    graphs = [build_graph(int(counts[k]), per_graph[k], isolated_policy) for k in range(n_graphs)]

    spec: list[str] = []
    columns = [[] for _ in range(n_graphs)]
    if features in ("structural", "both"):
        for k, g in enumerate(graphs):
            columns[k].append(structural_features(g))
        spec += list(STRUCTURAL)
    if features in ("attributes", "both"):
        if files.node_attributes is None:
            raise ParseError("node attribute file required", path=files.adjacency)
        attrs = np.array(_read_rows(files.node_attributes, float), dtype=np.float64)
        if attrs.shape[0] != n_nodes:
            raise ParseError(f"{attrs.shape[0]} attribute rows for {n_nodes} nodes", path=files.node_attributes)
        for k in range(n_graphs):
            columns[k].append(attrs[indicator == k])
        spec += [f"attr{c}" for c in range(attrs.shape[1])]
    if features not in ("structural", "attributes", "both"):
        raise ValueError(f"unknown feature mode {features!r}")
    if node_labels:
        if files.node_labels is None:
            raise ParseError("node label file required", path=files.adjacency)
        nl = np.array([r[0] for r in _read_rows(files.node_labels)])
        values = np.unique(nl)
        onehot = (nl[:, None] == values[None, :]).astype(np.float64)
        for k in range(n_graphs):
            columns[k].append(onehot[indicator == k])
        spec += [f"node_label={v}" for v in values]

    values, labels = np.unique(np.array(labels_raw), return_inverse=True)
    return GraphDataset(
        graphs=graphs,
        node_features=[np.column_stack(c) for c in columns],
        labels=labels.astype(np.int64),
        name=name or files.adjacency.name[: -len("_A.txt")],
        feature_spec=spec,
    )


def write_tu(ds: GraphDataset, directory, name: str | None = None, attributes: bool = True) -> TuRawFiles:
    """Write ``ds`` in TU layout plus a JSON manifest; node features go to the
    attribute file when ``attributes`` is set."""
    name = name or ds.name
    d = Path(directory)
    os.makedirs(d, exist_ok=True)
    files = TuRawFiles(
        adjacency=d / f"{name}_A.txt",
        graph_indicator=d / f"{name}_graph_indicator.txt",
        graph_labels=d / f"{name}_graph_labels.txt",
        node_attributes=(d / f"{name}_node_attributes.txt") if attributes else None,
    )
    offset = 0
    with open(files.adjacency, "w") as fa, open(files.graph_indicator, "w") as fi:
        for k, g in enumerate(ds.graphs):
            for i, j, _ in g.edges():
                if i != j:
                    fa.write(f"{i + 1 + offset}, {j + 1 + offset}\n")
                    fa.write(f"{j + 1 + offset}, {i + 1 + offset}\n")
            fi.write(f"{k + 1}\n" * g.n)
            offset += g.n
    with open(files.graph_labels, "w") as fl:
        for y in ds.labels:
            fl.write(f"{int(y)}\n")
    if attributes:
        with open(files.node_attributes, "w") as fn:
            for x in ds.node_features:
                for row in x:
                    fn.write(", ".join(repr(float(v)) for v in row) + "\n")
    with open(d / f"{name}_manifest.json", "w") as fm:
        json.dump(ds.manifest(), fm, indent=2)
    return files


# ---------------------------------------------------------------------------
# synthetic datasets


def _cycle(n):
    return [(k, (k + 1) % n, 1.0) for k in range(n)]


def _random_tree(n, rng):
    return [(int(rng.integers(0, k)), k, 1.0) for k in range(1, n)]


def _connected_er(n, p, rng):
    while True:
        i, j = np.nonzero(np.triu(rng.random((n, n)) < p, 1))
        W = sp.coo_matrix((np.ones(i.size), (i, j)), shape=(n, n))
        if sp.csgraph.connected_components(W, directed=False)[0] == 1:
            return [(int(a), int(b), 1.0) for a, b in zip(i, j)]


def _longrange(n, path_len, rng, p=0.5):
    """Two ER communities joined by a path with ``path_len`` edges.

    Nodes ``[0, ca)`` and ``[ca, ca + cb)`` are the communities, the path
    interior takes the remaining ids.  The node signal is +1 on the first
    side, -1 on the second, and 0 on the middle interior node.
    """
    inner = path_len - 1
    ca = (n - inner) // 2
    cb = n - inner - ca
    edges = list(_connected_er(ca, p, rng))
    edges += [(i + ca, j + ca, w) for i, j, w in _connected_er(cb, p, rng)]
    interior = [ca + cb + k for k in range(inner)]
    chain = [int(rng.integers(0, ca))] + interior + [ca + int(rng.integers(0, cb))]
    edges += [(min(a, b), max(a, b), 1.0) for a, b in zip(chain, chain[1:])]
    side = np.zeros(n)
    side[:ca] = 1.0
    side[ca:ca + cb] = -1.0
    half = inner // 2
    side[interior[:half]] = 1.0
    side[interior[inner - half:]] = -1.0
    return edges, side[:, None]


def gen_synthetic(
    kind: str,
    count: int,
    size_range=(16, 40),
    seed: int = 0,
    p1: float = 0.1,
    p2: float = 0.3,
    short_path: int = 2,
    long_path: int = 8,
) -> GraphDataset:
    """Balanced two-class synthetic datasets.

    ``cycle_vs_tree``: cycles (class 0) vs random recursive trees (class 1)
    of the same size.  ``er_density``: Erdos-Renyi at densities ``p1`` vs
    ``p2``.  ``longrange_pair``: two communities joined by a path of
    ``short_path`` (class 0) or ``long_path`` (class 1) edges, with a
    +/-1 community-side signal as the only node feature.
    """
    lo, hi = size_range
    if count % 2 or count < 2:
        raise InvalidSizeRange(f"count must be a positive even number, got {count}")
    if lo < 4 or hi < lo:
        raise InvalidSizeRange(f"invalid size range {size_range}")
    if kind == "longrange_pair" and lo < long_path + 7:
        raise InvalidSizeRange(f"longrange_pair needs sizes >= {long_path + 7}")
    rng = np.random.default_rng(seed)
    graphs, feats, labels = [], [], []
    spec = list(STRUCTURAL)
    for k in range(count):
        y = k % 2
        n = int(rng.integers(lo, hi + 1))
        if kind == "cycle_vs_tree":
            edges = _cycle(n) if y == 0 else _random_tree(n, rng)
            x = None
        elif kind == "er_density":
            upper = np.triu(rng.random((n, n)) < (p1 if y == 0 else p2), 1)
            edges = [(int(a), int(b), 1.0) for a, b in zip(*np.nonzero(upper))]
            x = None
        elif kind == "longrange_pair":
            edges, x = _longrange(n, long_path if y else short_path, rng)
            spec = ["side"]
        else:
            raise ValueError(f"unknown synthetic kind {kind!r}")
        g = build_graph(n, edges, "self_loop")
        graphs.append(g)
        feats.append(structural_features(g) if x is None else x)
        labels.append(y)
    return GraphDataset(graphs, feats, np.array(labels), name=kind, feature_spec=spec)


# ---------------------------------------------------------------------------


def whiten_targets(ds: GraphDataset, train_idx=None):
    """Standardize regression targets with statistics from ``train_idx`` only.

    Returns ``(whitened dataset, {"mean": ..., "std": ...})``.
    """
    y = np.asarray(ds.labels, dtype=np.float64)
    y2 = y.reshape(len(y), -1)
    ref = y2 if train_idx is None else y2[np.asarray(train_idx)]
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)
    for d, s in enumerate(std):
        if s == 0:
            raise ZeroVarianceTarget(d)
    white = ((y2 - mean) / std).reshape(y.shape)
    return replace(ds, labels=white, task="regression"), {"mean": mean, "std": std}
