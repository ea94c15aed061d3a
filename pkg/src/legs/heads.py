"""Task heads on top of scattering features, with explicit gradients.

Every head exposes ``params()`` (trainable arrays by name), ``forward`` that
optionally returns a cache, and ``backward(cache, d_logits)`` returning
``(grads, d_inputs)`` with ``grads`` keyed like ``params()``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlreadyInitialized,
    AnchorsNotInitialized,
    BatchTooSmall,
    LabelOutOfRange,
    ShapeMismatch,
)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _as_batch(x, in_dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise ShapeMismatch(f"head expects {in_dim} input features, got shape {x.shape}")
    return x, single


@dataclass
class FcnHead:
    """Two fully connected layers with a rectifier in between.

    ``in_shift``/``in_scale`` is a frozen affine standardization of the
    inputs (identity by default), fitted once from the initial features.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    in_shift: np.ndarray
    in_scale: np.ndarray

    @classmethod
    def init(cls, in_dim: int, out_dim: int, hidden: int = 128, seed=0) -> "FcnHead":
        rng = np.random.default_rng(seed)
        return cls(
            W1=rng.standard_normal((hidden, in_dim)) * np.sqrt(2.0 / in_dim),
            b1=np.zeros(hidden),
            W2=rng.standard_normal((out_dim, hidden)) * np.sqrt(1.0 / hidden),
            b2=np.zeros(out_dim),
            in_shift=np.zeros(in_dim),
            in_scale=np.ones(in_dim),
        )

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    def params(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def buffers(self) -> dict:
        return {"in_shift": self.in_shift, "in_scale": self.in_scale}

    def fit_input_scaling(self, features: np.ndarray):
        features = np.asarray(features, dtype=np.float64)
        std = features.std(axis=0)
        self.in_shift = features.mean(axis=0)
        self.in_scale = np.where(std > 1e-12, std, 1.0)

    def forward(self, x, keep: bool = False):
        x, single = _as_batch(x, self.in_dim)
        z = (x - self.in_shift) / self.in_scale
        pre = z @ self.W1.T + self.b1
        h = np.maximum(pre, 0.0)
        logits = h @ self.W2.T + self.b2
        out = logits[0] if single else logits
        return (out, (z, pre, h, single)) if keep else out

    def backward(self, cache, d_logits):
        z, pre, h, single = cache
        d_logits = np.atleast_2d(d_logits)
        dh = d_logits @ self.W2
        dpre = dh * (pre > 0)
        grads = {
            "W2": d_logits.T @ h,
            "b2": d_logits.sum(axis=0),
            "W1": dpre.T @ z,
            "b1": dpre.sum(axis=0),
        }
        dx = (dpre @ self.W1) / self.in_scale
        return grads, (dx[0] if single else dx)


def fcn_forward(head: FcnHead, x) -> np.ndarray:
    return head.forward(x)


@dataclass
class RbfHead:
    """Batch norm, Gaussian radial features around movable anchors, linear readout."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    W: np.ndarray
    b: np.ndarray
    anchors: np.ndarray | None = None
    initialized: bool = False
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM
    n_anchors: int = 64

    @classmethod
    def init(cls, in_dim: int, out_dim: int, n_anchors: int = 64, seed=0) -> "RbfHead":
        rng = np.random.default_rng(seed)
        return cls(
            gamma=np.ones(in_dim),
            beta=np.zeros(in_dim),
            running_mean=np.zeros(in_dim),
            running_var=np.ones(in_dim),
            W=rng.standard_normal((out_dim, n_anchors)) * np.sqrt(1.0 / n_anchors),
            b=np.zeros(out_dim),
            n_anchors=n_anchors,
        )

    @property
    def in_dim(self) -> int:
        return self.gamma.shape[0]

    def params(self) -> dict:
        if not self.initialized:
            raise AnchorsNotInitialized("RBF anchors must be initialized from data first")
        return {"gamma": self.gamma, "beta": self.beta, "anchors": self.anchors, "W": self.W, "b": self.b}

    def buffers(self) -> dict:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def batch_norm(self, x, mode: str, update_running: bool = True):
        if mode == "train":
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            if update_running:
                B = x.shape[0]
                unbiased = var * B / (B - 1) if B > 1 else var
                self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
                self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        elif mode == "eval":
            mu, var = self.running_mean, self.running_var
        else:
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        return self.gamma * xhat + self.beta, xhat, inv_std

    def forward(self, x, mode: str = "eval", keep: bool = False, update_running: bool = True):
        if not self.initialized:
            raise AnchorsNotInitialized("RBF anchors must be initialized from data first")
        x, single = _as_batch(x, self.in_dim)
        z, xhat, inv_std = self.batch_norm(x, mode, update_running)
        diff = z[:, None, :] - self.anchors[None, :, :]
        act = np.exp(-np.sum(diff * diff, axis=2))
        logits = act @ self.W.T + self.b
        out = logits[0] if single else logits
        return (out, (xhat, inv_std, diff, act, mode, single)) if keep else out

    def backward(self, cache, d_logits):
        xhat, inv_std, diff, act, mode, single = cache
        d_logits = np.atleast_2d(d_logits)
        grads = {"W": d_logits.T @ act, "b": d_logits.sum(axis=0)}
        # a = exp(-s), s = |z - c|^2
        ds = -(d_logits @ self.W) * act
        weighted = 2.0 * ds[:, :, None] * diff
        dz = weighted.sum(axis=1)
        grads["anchors"] = -weighted.sum(axis=0)
        grads["gamma"] = np.sum(dz * xhat, axis=0)
        grads["beta"] = dz.sum(axis=0)
        dxhat = dz * self.gamma
        if mode == "train":
            B = xhat.shape[0]
            dx = inv_std / B * (B * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
        else:
            dx = dxhat * inv_std
        grads = {k: grads[k] for k in ("gamma", "beta", "anchors", "W", "b")}
        return grads, (dx[0] if single else dx)


def rbf_init_anchors(head: RbfHead, first_batch_features, seed=0) -> RbfHead:
    """Pick anchors as distinct rows of the batch-normalized first batch."""
    if head.initialized:
        raise AlreadyInitialized("anchors were already initialized")
    x, _ = _as_batch(first_batch_features, head.in_dim)
    if x.shape[0] < head.n_anchors:
        raise BatchTooSmall(f"need at least {head.n_anchors} rows to pick anchors, got {x.shape[0]}")
    z, _, _ = head.batch_norm(x, "train", update_running=False)
    rows = np.random.default_rng(seed).choice(x.shape[0], size=head.n_anchors, replace=False)
    head.anchors = z[rows].copy()
    head.initialized = True
    return head


def rbf_forward(head: RbfHead, x, mode: str = "eval") -> np.ndarray:
    return head.forward(x, mode=mode)


@dataclass
class LossSpec:
    kind: str = "cross_entropy"
    n_classes: int | None = None
    target_dim: int | None = None
    whitening: dict | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "mean_squared_error"):
            raise ValueError(f"unknown loss kind {self.kind!r}")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss(spec: LossSpec, logits, target) -> tuple[float, np.ndarray]:
    """Batch-mean loss and its gradient on the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    B = logits.shape[0]
    if spec.kind == "cross_entropy":
        labels = np.atleast_1d(np.asarray(target)).astype(np.int64)
        C = logits.shape[1]
        if spec.n_classes is not None and C != spec.n_classes:
            raise ShapeMismatch(f"{C} logits for {spec.n_classes} classes")
        if labels.shape != (B,):
            raise ShapeMismatch(f"{labels.shape[0]} labels for {B} rows")
        if np.any(labels < 0) or np.any(labels >= C):
            raise LabelOutOfRange(f"labels must lie in [0, {C})")
        logp = log_softmax(logits)
        value = -float(np.mean(logp[np.arange(B), labels]))
        d = np.exp(logp)
        d[np.arange(B), labels] -= 1.0
        return value, d / B
    target = np.asarray(target, dtype=np.float64).reshape(logits.shape[0], -1)
    if target.shape != logits.shape:
        raise ShapeMismatch(f"targets {target.shape} vs predictions {logits.shape}")
    r = logits - target
    return float(np.mean(r * r)), 2.0 * r / r.size
