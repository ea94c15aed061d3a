"""Geometric scattering: cascades ``U_p`` and graph-level moments ``S_{p,q}``.

Works with any bank expressible as cascade weights (fixed scales or a LEGS
selection).  Batches of graphs are processed as one block-diagonal graph so
every diffusion step is a single sparse product.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, PathIndexOutOfRange, UnsupportedOrder
from .filter_bank import ScaleSequence
from .graph import DEFAULT_ALPHA, Graph, GraphBatch, LazyWalk, union_graphs
from .learnable import SelectionMatrix, bank_coefficients, responses_from_coefficients

PHI = "phi"


@dataclass(frozen=True)
class ScatteringConfig:
    J: int = 4
    m: int = 16
    q_max: int = 4
    order: int = 2
    path_rule: str = "increasing"
    normalize_moments: bool = True
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.J < 1 or self.q_max < 1 or self.order < 1 or self.m < 1:
            raise ValueError(f"invalid scattering config {self}")
        if self.path_rule not in ("increasing", "all_ordered"):
            raise ValueError(f"unknown path rule {self.path_rule!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


def enumerate_paths(J: int, order: int, rule: str = "increasing") -> list[tuple[int, ...]]:
    """All scattering paths up to ``order``, lexicographically sorted.

    ``increasing`` keeps strictly increasing index sequences, ``all_ordered``
    keeps every sequence.  The empty path (raw signal) is always included.
    """
    if order not in (1, 2, 3):
        raise UnsupportedOrder(f"scattering order must be 1, 2 or 3, got {order}")
    paths: list[tuple[int, ...]] = [()]
    for k in range(1, order + 1):
        if k == 1 or rule == "all_ordered":
            paths += list(itertools.product(range(J), repeat=k))
        else:
            paths += list(itertools.combinations(range(J), k))
    return sorted(paths)


def feature_index(paths, q_max: int, channels: int) -> list[tuple]:
    """Column labels ``(path, q, channel)``; the low-pass block is labelled ``"phi"``."""
    return [
        (p, q, c)
        for p in list(paths) + [PHI]
        for q in range(1, q_max + 1)
        for c in range(channels)
    ]


def moments(u, q_max: int, normalize: bool = True) -> np.ndarray:
    """``sum_i |u_i|^q`` for ``q = 1..q_max``, divided by ``n`` if normalized.

    Returns shape ``(q_max,)`` for a vector and ``(q_max, N)`` for a matrix.
    """
    u = np.asarray(u, dtype=np.float64)
    a = np.abs(u)
    out = []
    p = np.ones_like(a)
    for _ in range(q_max):
        p = p * a
        out.append(p.sum(axis=0))
    S = np.array(out)
    if normalize:
        S = S / u.shape[0]
    return S


def segment_moments(u: np.ndarray, offsets: np.ndarray, q_max: int, normalize: bool) -> np.ndarray:
    """Per-graph moments of a stacked ``(n_total, N)`` signal: shape ``(B, q_max, N)``."""
    a = np.abs(u)
    p = np.ones_like(a)
    starts = offsets[:-1]
    out = np.empty((len(starts), q_max, u.shape[1]))
    for q in range(q_max):
        p = p * a
        out[:, q] = np.add.reduceat(p, starts, axis=0)
    if normalize:
        out /= np.diff(offsets)[:, None, None]
    return out


def resolve_bank(bank, m: int) -> tuple[np.ndarray, SelectionMatrix]:
    """Cascade weights and selection for a ScaleSequence, SelectionMatrix or raw ``F``."""
    if isinstance(bank, ScaleSequence):
        if bank.scales[-1] > m:
            raise DimensionMismatch(f"scale {bank.scales[-1]} beyond cascade depth {m}")
        F = ScaleSequence(bank.scales, m).selection()
        sel = SelectionMatrix.fixed(F)
    elif isinstance(bank, SelectionMatrix):
        sel = bank
    else:
        sel = SelectionMatrix.fixed(bank)
    if sel.m != m:
        raise DimensionMismatch(f"selection has {sel.m} columns, cascade depth is {m}")
    return bank_coefficients(sel.F), sel


class BankOperator:
    """Applies every filter of a bank to a signal by building its cascade."""

    def __init__(self, op, A: np.ndarray):
        self.op = op
        self.A = A
        self.m = A.shape[1] - 1
        self.J = A.shape[0] - 1

    def cascade(self, Y: np.ndarray) -> np.ndarray:
        powers = np.empty((self.m + 1,) + Y.shape)
        powers[0] = Y
        for t in range(1, self.m + 1):
            powers[t] = self.op.apply(powers[t - 1])
        return powers

    def __call__(self, Y: np.ndarray):
        powers = self.cascade(Y)
        return responses_from_coefficients(self.A, powers), powers


def scatter_nodes(bank: BankOperator, path: Sequence[int], X) -> np.ndarray:
    """``U_p X = Psi_{j_k} | ... | Psi_{j_1} X | ... |``; no modulus on the output."""
    X = np.asarray(X, dtype=np.float64)
    vector = X.ndim == 1
    Y = X[:, None] if vector else X
    for k, j in enumerate(path):
        if not 0 <= j < bank.J:
            raise PathIndexOutOfRange(f"path index {j} outside [0, {bank.J})")
        if k > 0:
            Y = np.abs(Y)
        R, _ = bank(Y)
        Y = R[j]
    return Y[:, 0] if vector else Y


@dataclass(eq=False)
class CascadeNode:
    """One bank application inside the scattering tree."""

    inputs: np.ndarray
    powers: np.ndarray
    responses: np.ndarray
    parent: tuple | None  # (prefix, j): inputs = |parent.responses[j]|


@dataclass(eq=False)
class BackpropCache:
    batch: GraphBatch
    op: object
    coefficients: np.ndarray
    selection: SelectionMatrix
    paths: list
    nodes: dict
    cfg: ScatteringConfig
    channels: int
    signals: np.ndarray = field(repr=False)

    def node_output(self, path) -> np.ndarray:
        if path == PHI:
            return self.nodes[()].responses[-1]
        if path == ():
            return self.signals
        return self.nodes[path[:-1]].responses[path[-1]]


@dataclass(eq=False)
class ScatteringFeatures:
    values: np.ndarray
    index: list
    per_node: dict | None = None


def _stack(batch: GraphBatch, signals: Sequence) -> np.ndarray:
    sigs = [np.asarray(s, dtype=np.float64) for s in signals]
    sigs = [s[:, None] if s.ndim == 1 else s for s in sigs]
    if len(sigs) != len(batch):
        raise DimensionMismatch(f"{len(sigs)} signals for {len(batch)} graphs")
    for k, (s, n) in enumerate(zip(sigs, batch.sizes)):
        if s.shape[0] != n:
            raise DimensionMismatch(f"signal {k} has {s.shape[0]} rows, graph has {n} nodes")
    if len({s.shape[1] for s in sigs}) != 1:
        raise DimensionMismatch("all signals need the same channel count")
    return np.concatenate(sigs, axis=0)


def transform_batch(
    graphs: Sequence[Graph] | GraphBatch,
    signals: Sequence,
    bank,
    cfg: ScatteringConfig,
    keep_cache: bool = False,
    op=None,
):
    """Scattering features for several graphs at once.

    Returns ``(features, index, cache)``; ``features`` has one row per graph
    and ``cache`` is ``None`` unless ``keep_cache`` is set.  ``op`` overrides
    the diffusion operator on the union graph (used by perturbation checks).
    """
    batch = graphs if isinstance(graphs, GraphBatch) else union_graphs(list(graphs))
    X = _stack(batch, signals)
    A, sel = resolve_bank(bank, cfg.m)
    if op is None:
        op = LazyWalk(batch.graph, cfg.alpha)
    bop = BankOperator(op, A)
    paths = enumerate_paths(sel.J, cfg.order, cfg.path_rule)

    nodes: dict = {}

    def node(prefix):
        if prefix not in nodes:
            if prefix == ():
                Y, parent = X, None
            else:
                parent_node = node(prefix[:-1])
                Y = np.abs(parent_node.responses[prefix[-1]])
                parent = (prefix[:-1], prefix[-1])
            R, powers = bop(Y)
            nodes[prefix] = CascadeNode(Y, powers, R, parent)
        return nodes[prefix]

    outputs = []
    for p in paths:
        outputs.append(X if p == () else node(p[:-1]).responses[p[-1]])
    outputs.append(node(()).responses[-1])

    B, N = len(batch), X.shape[1]
    S = np.empty((B, len(outputs), cfg.q_max, N))
    for k, u in enumerate(outputs):
        S[:, k] = segment_moments(u, batch.offsets, cfg.q_max, cfg.normalize_moments)
    features = S.reshape(B, -1)
    index = feature_index(paths, cfg.q_max, N)

    cache = None
    if keep_cache:
        cache = BackpropCache(
            batch=batch, op=op, coefficients=A, selection=sel, paths=paths,
            nodes=nodes, cfg=cfg, channels=N, signals=X,
        )
    return features, index, cache


def transform(g: Graph, X, bank, cfg: ScatteringConfig, keep_cache: bool = False) -> ScatteringFeatures:
    """Scattering moments of one graph signal matrix.

    Column order: paths in lexicographic order then the low-pass block;
    within each, ``q = 1..q_max``; within each ``q``, the input channels.
    """
    X = np.asarray(X, dtype=np.float64)
    feats, index, cache = transform_batch([g], [X], bank, cfg, keep_cache=keep_cache)
    per_node = None
    if keep_cache:
        per_node = {p: cache.node_output(p) for p in cache.paths + [PHI]}
        per_node["_cache"] = cache
    return ScatteringFeatures(values=feats[0], index=index, per_node=per_node)


def feature_count(J: int, cfg: ScatteringConfig, channels: int) -> int:
    return (len(enumerate_paths(J, cfg.order, cfg.path_rule)) + 1) * cfg.q_max * channels
