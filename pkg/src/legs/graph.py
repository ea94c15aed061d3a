"""Graphs, the lazy random-walk diffusion operator and diffusion cascades.

Signals are ``(n, N)`` float64 arrays, one graph signal per column.  1-D
signals are accepted everywhere and come back 1-D.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    DimensionMismatch,
    DuplicateEdge,
    GraphTooLargeForDenseOracle,
    IndexOutOfRange,
    IsolatedNode,
    NonPositiveWeight,
    SelfLoop,
)

DEFAULT_ALPHA = 0.5
DEFAULT_DENSE_CAP = 256


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph backed by a symmetric CSR adjacency."""

    n: int
    adjacency: sp.csr_matrix
    degree: np.ndarray

    @property
    def nnz(self) -> int:
        return self.adjacency.nnz

    def edges(self) -> list[tuple[int, int, float]]:
        """Undirected edge list ``(i, j, w)`` with ``i <= j``, sorted."""
        coo = sp.triu(self.adjacency, format="coo")
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[k]), int(coo.col[k]), float(coo.data[k])) for k in order]

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def has_self_loops(self) -> bool:
        return bool(np.any(self.adjacency.diagonal() != 0))


def build_graph(
    n: int,
    edges: Iterable[tuple[int, int, float]],
    isolated_policy: str = "reject",
) -> Graph:
    """Build a graph from an undirected edge list.

    ``isolated_policy`` is ``"reject"`` (raise :class:`IsolatedNode`) or
    ``"self_loop"`` (attach a unit self-loop to every degree-0 node).
    """
    if isolated_policy not in ("reject", "self_loop"):
        raise ValueError(f"unknown isolated_policy {isolated_policy!r}")
    if n < 1:
        raise IndexOutOfRange(f"graph needs at least one node, got n={n}")
    rows, cols, vals = [], [], []
    seen = set()
    for e in edges:
        i, j, w = int(e[0]), int(e[1]), float(e[2])
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRange(f"edge ({i}, {j}) outside [0, {n})")
        if i == j:
            raise SelfLoop(f"self-loop at node {i}")
        if not (w > 0) or not np.isfinite(w):
            raise NonPositiveWeight(f"edge ({i}, {j}) has weight {w}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise DuplicateEdge(f"edge {key} given twice")
        seen.add(key)
        rows += [i, j]
        cols += [j, i]
        vals += [w, w]
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.float64)
    deg = np.asarray(W.sum(axis=1)).ravel()
    isolated = np.flatnonzero(deg == 0)
    if isolated.size:
        if isolated_policy == "reject":
            raise IsolatedNode(f"isolated nodes {isolated.tolist()}")
        W = (W + sp.csr_matrix((np.ones(isolated.size), (isolated, isolated)), shape=(n, n))).tocsr()
        deg = np.asarray(W.sum(axis=1)).ravel()
    W.sort_indices()
    return Graph(n=n, adjacency=W, degree=deg)


def from_adjacency(W, isolated_policy: str = "reject") -> Graph:
    """Build a graph from a symmetric (dense or sparse) weight matrix without self-loops."""
    W = sp.coo_matrix(W)
    n = W.shape[0]
    mask = W.row < W.col
    return build_graph(n, zip(W.row[mask], W.col[mask], W.data[mask]), isolated_policy)


def permute_graph(g: Graph, perm: Sequence[int]) -> Graph:
    """Relabel nodes so that new node ``i`` is old node ``perm[i]``.

    A signal ``x`` on ``g`` corresponds to ``x[perm]`` on the result.
    """
    perm = np.asarray(perm)
    W = g.adjacency[perm][:, perm].tocsr()
    W.sort_indices()
    return Graph(n=g.n, adjacency=W, degree=g.degree[perm].copy())


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of several graphs; ``offsets[k]:offsets[k+1]`` are graph k's nodes."""

    graph: Graph
    offsets: np.ndarray

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def __len__(self) -> int:
        return len(self.offsets) - 1


def union_graphs(graphs: Sequence[Graph]) -> GraphBatch:
    """Block-diagonal union built by concatenating the CSR arrays directly."""
    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    if len(graphs) == 1:
        return GraphBatch(graphs[0], offsets)
    data = np.concatenate([g.adjacency.data for g in graphs])
    indices = np.concatenate([g.adjacency.indices + off for g, off in zip(graphs, offsets)])
    nnz = np.array([g.adjacency.nnz for g in graphs])
    nnz_off = np.concatenate([[0], np.cumsum(nnz)])
    indptr = np.concatenate(
        [g.adjacency.indptr[:-1] + o for g, o in zip(graphs, nnz_off)] + [[nnz_off[-1]]]
    )
    total = int(offsets[-1])
    W = sp.csr_matrix((data, indices, indptr), shape=(total, total))
    deg = np.concatenate([g.degree for g in graphs])
    return GraphBatch(Graph(n=total, adjacency=W, degree=deg), offsets)


# ---------------------------------------------------------------------------
# diffusion operators


class LazyWalk:
    """Sparse lazy random walk ``P = alpha*I + (1 - alpha) * W D^{-1}``.

    Both ``P`` and ``P^T`` are kept in CSR form so forward and adjoint
    cascades are one sparse product per step.
    """

    def __init__(self, g: Graph, alpha: float = DEFAULT_ALPHA):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        self.n = g.n
        self.alpha = float(alpha)
        self.degree = g.degree
        walk = g.adjacency @ sp.diags(1.0 / g.degree)
        eye = sp.identity(g.n, format="csr")
        self.P = (alpha * eye + (1.0 - alpha) * walk).tocsr()
        self.PT = self.P.transpose().tocsr()

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.P @ X

    def apply_transpose(self, Y: np.ndarray) -> np.ndarray:
        return self.PT @ Y


class DenseOperator:
    """Dense stand-in for :class:`LazyWalk` (oracles and perturbation checks)."""

    def __init__(self, P: np.ndarray, degree: np.ndarray | None = None):
        self.P = np.asarray(P, dtype=np.float64)
        self.n = self.P.shape[0]
        self.degree = degree

    def apply(self, X):
        return self.P @ X

    def apply_transpose(self, Y):
        return self.P.T @ Y


def _as_matrix(g_n: int, X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    vector = X.ndim == 1
    if vector:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != g_n:
        raise DimensionMismatch(f"signal of shape {X.shape} does not fit a graph with {g_n} nodes")
    return X, vector


def lazy_step(g: Graph, alpha: float, X) -> np.ndarray:
    """One lazy diffusion step ``P_alpha X`` without forming ``P`` densely."""
    X, vector = _as_matrix(g.n, X)
    out = alpha * X + (1.0 - alpha) * (g.adjacency @ (X / g.degree[:, None]))
    return out[:, 0] if vector else out


@dataclass(frozen=True, eq=False)
class DiffusionCascade:
    """``powers[t] = P^t X`` for ``t = 0..m``; ``steps`` is the ``t >= 1`` part."""

    powers: np.ndarray = field(repr=False)
    alpha: float
    m: int

    @property
    def source(self) -> np.ndarray:
        return self.powers[0]

    @property
    def steps(self) -> np.ndarray:
        return self.powers[1:]

    def power(self, t: int) -> np.ndarray:
        return self.powers[t]


def diffusion_cascade(g, alpha: float, X, m: int) -> DiffusionCascade:
    """Iterate the lazy walk ``m`` times: ``[P X, P^2 X, ..., P^m X]``.

    ``g`` may be a :class:`Graph` or a prebuilt operator (``LazyWalk`` or
    ``DenseOperator``).
    """
    if m < 1:
        raise ValueError(f"cascade depth must be >= 1, got {m}")
    op = g if hasattr(g, "apply") else LazyWalk(g, alpha)
    X, _ = _as_matrix(op.n, X)
    powers = np.empty((m + 1,) + X.shape)
    powers[0] = X
    for t in range(1, m + 1):
        powers[t] = op.apply(powers[t - 1])
    return DiffusionCascade(powers=powers, alpha=getattr(op, "alpha", alpha), m=m)


def weighted_norm_sq(g: Graph, x) -> float | np.ndarray:
    """``sum_i x_i^2 / d_i``; per column for 2-D input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != g.n:
        raise DimensionMismatch(f"signal of length {x.shape[0]} on graph with {g.n} nodes")
    if x.ndim == 1:
        return float(np.sum(x * x / g.degree))
    return np.sum(x * x / g.degree[:, None], axis=0)


# ---------------------------------------------------------------------------
# dense oracles (test-only path)


def _check_cap(g: Graph, cap: int):
    if g.n > cap:
        raise GraphTooLargeForDenseOracle(f"n={g.n} exceeds dense oracle cap {cap}")


def dense_diffusion_matrix(g: Graph, alpha: float = DEFAULT_ALPHA, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    _check_cap(g, cap)
    W = g.adjacency.toarray()
    return alpha * np.eye(g.n) + (1.0 - alpha) * W / g.degree[None, :]


def spectral_oracle(g: Graph, alpha: float = DEFAULT_ALPHA, cap: int = DEFAULT_DENSE_CAP):
    """Symmetric conjugate ``M = D^{-1/2} P D^{1/2}`` and its eigendecomposition.

    Returns ``(M, eigvals, eigvecs)`` with eigenvalues sorted descending.
    """
    P = dense_diffusion_matrix(g, alpha, cap)
    s = np.sqrt(g.degree)
    M = P * s[None, :] / s[:, None]
    lam, Q = np.linalg.eigh(M)
    order = np.argsort(lam)[::-1]
    return M, lam[order], Q[:, order]
