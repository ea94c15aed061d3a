"""Hand-written reverse-mode gradients through scattering and LEGS.

The backward pass mirrors :func:`legs.scattering.transform_batch`: moment
adjoints become node adjoints, node adjoints flow through each bank's
adjoint cascade (``P^T`` products) and across modulus layers via sign
masks, and every bank application contributes ``<adjoint_k, P^t Y>`` to the
gradient of its cascade weights.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import GraphTooLargeForDenseOracle, MissingCache, NonFiniteParameter, ShapeMismatch
from .graph import DEFAULT_DENSE_CAP, DiffusionCascade
from .learnable import coefficients_adjoint
from .scattering import PHI, BackpropCache


def softmax_row_jacobian(theta_row) -> np.ndarray:
    """``d softmax_t / d theta_s = s_t (delta_ts - s_s)``."""
    theta_row = np.asarray(theta_row, dtype=np.float64)
    if not np.all(np.isfinite(theta_row)):
        raise NonFiniteParameter("theta row has non-finite entries")
    e = np.exp(theta_row - theta_row.max())
    s = e / e.sum()
    return np.diag(s) - np.outer(s, s)


def softmax_backward(F: np.ndarray, dF: np.ndarray) -> np.ndarray:
    """Row-wise ``J^T dF`` using only the softmax outputs."""
    return F * (dF - np.sum(F * dF, axis=1, keepdims=True))


def route_rows(d_sorted: np.ndarray, row_order: np.ndarray) -> np.ndarray:
    out = np.empty_like(d_sorted)
    out[row_order] = d_sorted
    return out


def grad_wrt_F(adjoints, cascade: DiffusionCascade | np.ndarray, row_order=None) -> np.ndarray:
    """Gradient on the selection matrix from adjoints of the ``J + 1`` responses.

    ``adjoints`` has shape ``(J+1, n, N)`` (band-pass filters then the
    low-pass one).  Row ``k`` of ``F`` enters filter ``k`` with a minus sign
    and filter ``k + 1`` with a plus sign.  With ``row_order`` the rows are
    returned in the order of the unsorted ``Theta``.
    """
    powers = cascade.powers if isinstance(cascade, DiffusionCascade) else np.asarray(cascade)
    adjoints = np.asarray(adjoints, dtype=np.float64)
    if adjoints.ndim == 2:
        adjoints = adjoints[:, :, None]
    if powers.ndim == 2:
        powers = powers[:, :, None]
    if adjoints.shape[1:] != powers.shape[1:]:
        raise ShapeMismatch(f"adjoints {adjoints.shape} do not conform to cascade {powers.shape}")
    dA = np.tensordot(adjoints, powers, axes=([1, 2], [1, 2]))
    dF = coefficients_adjoint(dA)
    return dF if row_order is None else route_rows(dF, np.asarray(row_order))


def moments_backward(u, dS, offsets, normalize: bool) -> np.ndarray:
    """Adjoint of :func:`segment_moments`; ``dS`` is ``(B, q_max, N)``.

    ``d|u|^q/du = q |u|^(q-1) sign(u)`` with ``sign(0) = 0``.
    """
    sizes = np.diff(offsets)
    scale = dS / sizes[:, None, None] if normalize else dS
    rep = np.repeat(scale, sizes, axis=0)  # (n_total, q_max, N)
    a = np.abs(u)
    coef = np.zeros_like(u)
    p = np.ones_like(a)
    for q in range(1, dS.shape[1] + 1):
        coef += q * p * rep[:, q - 1]
        p = p * a
    return coef * np.sign(u)


def adjoint_cascade(op, H: np.ndarray) -> np.ndarray:
    """``sum_t (P^T)^t H[t]`` evaluated Horner-style."""
    acc = H[-1]
    for t in range(H.shape[0] - 2, -1, -1):
        acc = op.apply_transpose(acc) + H[t]
    return acc


def node_adjoints(cache: BackpropCache, d_features: np.ndarray):
    """Adjoints of every bank application's responses, plus the input adjoint.

    Returns ``(G, dX)`` where ``G[prefix]`` has the shape of that node's
    responses.  Nodes are visited deepest-first so children finish before
    their parents.
    """
    if cache is None:
        raise MissingCache("forward pass was run without keep_cache=True")
    cfg = cache.cfg
    B, N = len(cache.batch), cache.channels
    outputs = cache.paths + [PHI]
    d_features = np.asarray(d_features, dtype=np.float64)
    expected = (B, len(outputs) * cfg.q_max * N)
    if d_features.reshape(B, -1).shape != expected:
        raise ShapeMismatch(f"feature adjoint of shape {d_features.shape}, expected {expected}")
    dS = d_features.reshape(B, len(outputs), cfg.q_max, N)

    G = {}

    def slot(prefix):
        if prefix not in G:
            G[prefix] = np.zeros_like(cache.nodes[prefix].responses)
        return G[prefix]

    dX = np.zeros_like(cache.signals)
    for k, p in enumerate(outputs):
        du = moments_backward(cache.node_output(p), dS[:, k], cache.batch.offsets, cfg.normalize_moments)
        if p == ():
            dX += du
        elif p == PHI:
            slot(())[-1] += du
        else:
            slot(p[:-1])[p[-1]] += du

    A = cache.coefficients
    for prefix in sorted(cache.nodes, key=len, reverse=True):
        if prefix not in G:
            continue
        nd = cache.nodes[prefix]
        H = np.tensordot(A.T, G[prefix], axes=1)
        dY = adjoint_cascade(cache.op, H)
        if nd.parent is None:
            dX += dY
        else:
            parent, j = nd.parent
            slot(parent)[j] += np.sign(cache.nodes[parent].responses[j]) * dY
    return G, dX


def backward_coefficients(cache: BackpropCache, d_features):
    """Gradient on the cascade weights ``A`` and on the input signals."""
    G, dX = node_adjoints(cache, d_features)
    dA = np.zeros_like(cache.coefficients)
    for prefix, g in G.items():
        dA += np.tensordot(g, cache.nodes[prefix].powers, axes=([1, 2], [1, 2]))
    return dA, dX


def backward_F(cache: BackpropCache, d_features) -> np.ndarray:
    """Gradient on the (sorted) selection matrix."""
    dA, _ = backward_coefficients(cache, d_features)
    return coefficients_adjoint(dA)


def backward_theta(cache: BackpropCache, d_features) -> np.ndarray:
    """Gradient on ``Theta``: selection gradient, full softmax Jacobian, row routing."""
    sel = cache.selection
    dF = backward_F(cache, d_features)
    return route_rows(softmax_backward(sel.F, dF), sel.row_order)


# ---------------------------------------------------------------------------
# adjacency derivative as written in closed form (frozen degrees, unit slope)


def closed_form_dPt_dW(P: np.ndarray, degree: np.ndarray, t: int, a: int, b: int) -> np.ndarray:
    """``sum_{k=1}^t P^(k-1) (E_ab D^-1) P^(t-k)`` as a dense matrix.

    ``E_ab`` is the single-entry indicator.  Degrees are held fixed and the
    slope of ``P`` in ``W_ab`` is taken as ``E_ab D^-1`` with no laziness
    factor; this is not the derivative of the lazy walk in ``W``.
    """
    n = P.shape[0]
    E = np.zeros((n, n))
    E[a, b] = 1.0 / degree[b]
    powers = [np.eye(n)]
    for _ in range(t):
        powers.append(powers[-1] @ P)
    return sum(powers[k - 1] @ E @ powers[t - k] for k in range(1, t + 1))


def grad_adjacency_closed_form(cache: BackpropCache, d_features, cap: int = DEFAULT_DENSE_CAP) -> sp.csr_matrix:
    """Diagnostic ``dL/dW_ab`` on the sparsity pattern of ``W`` (same convention
    as :func:`closed_form_dPt_dW`), summed over every bank application."""
    g = cache.batch.graph
    if g.n > cap:
        raise GraphTooLargeForDenseOracle(f"n={g.n} exceeds dense oracle cap {cap}")
    G, _ = node_adjoints(cache, d_features)
    A = cache.coefficients
    inv_d = 1.0 / g.degree
    M = np.zeros((g.n, g.n))
    for prefix, gk in G.items():
        powers = cache.nodes[prefix].powers
        H = np.tensordot(A.T, gk, axes=1)
        for t in range(1, A.shape[1]):
            back = H[t]
            for s in range(1, t + 1):
                M += back @ (powers[t - s] * inv_d[:, None]).T
                back = cache.op.apply_transpose(back)
    pattern = g.adjacency.tocoo()
    vals = M[pattern.row, pattern.col]
    return sp.csr_matrix((vals, (pattern.row, pattern.col)), shape=(g.n, g.n))


# ---------------------------------------------------------------------------
# finite differences


def fd_gradient(f: Callable[[np.ndarray], float], p0, step: float = 1e-5) -> np.ndarray:
    p0 = np.asarray(p0, dtype=np.float64)
    grad = np.empty_like(p0)
    flat = grad.reshape(-1)
    for i in range(p0.size):
        e = np.zeros_like(p0)
        e.reshape(-1)[i] = step
        flat[i] = (f(p0 + e) - f(p0 - e)) / (2.0 * step)
    return grad


def fd_check(f: Callable[[np.ndarray], float], p0, step: float, analytic) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``.

    The denominator is ``max(|analytic|, |fd|, 1e-12)`` per coordinate.
    """
    fd = fd_gradient(f, p0, step)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(fd.shape)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-12)
    return float(np.max(np.abs(analytic - fd) / denom))
