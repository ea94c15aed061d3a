"""LEGS models: scattering features (fixed or learnable scales) plus a head."""
from __future__ import annotations

import numpy as np

from .filter_bank import dyadic_scales
from .heads import FcnHead, LossSpec, RbfHead, loss, rbf_init_anchors
from .learnable import SelectionMatrix, SelectionParams, init_theta, selection_matrix
from .scattering import ScatteringConfig, feature_count, transform_batch
from .autograd import backward_theta

VARIANTS = ("LEGS-FIXED", "LEGS-FCN", "LEGS-RBF")


class LegsModel:
    """Scattering module feeding an FCN or RBF head.

    ``LEGS-FIXED`` uses the one-hot dyadic selection ``t_j = 2^(j-1)`` and
    never trains it; ``LEGS-FCN``/``LEGS-RBF`` learn ``Theta`` jointly with
    the head.
    """

    def __init__(
        self,
        variant: str,
        cfg: ScatteringConfig,
        in_channels: int,
        out_dim: int,
        task: str = "classification",
        hidden: int = 128,
        n_anchors: int = 64,
        theta_init: str = "dyadic_warm",
        seed: int = 0,
        anchor_seed: int = 0,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.cfg = cfg
        self.task = task
        self.in_channels = in_channels
        self.out_dim = out_dim
        self.anchor_seed = anchor_seed
        self.loss_spec = LossSpec(
            "cross_entropy" if task == "classification" else "mean_squared_error",
            n_classes=out_dim if task == "classification" else None,
        )
        if variant == "LEGS-FIXED":
            self.theta = None
            self.fixed = SelectionMatrix.fixed(dyadic_scales(cfg.J - 1, cfg.m).selection())
        else:
            self.theta = init_theta(cfg.J, cfg.m, theta_init, seed=seed)
            self.fixed = None
        n_feat = feature_count(cfg.J, cfg, in_channels)
        if variant == "LEGS-RBF":
            self.head = RbfHead.init(n_feat, out_dim, n_anchors=n_anchors, seed=seed)
        else:
            self.head = FcnHead.init(n_feat, out_dim, hidden=hidden, seed=seed)
        self._feature_cache: dict = {}

    # -- parameters -----------------------------------------------------

    def selection(self) -> SelectionMatrix:
        return self.fixed if self.theta is None else selection_matrix(self.theta)

    def params(self) -> dict:
        out = {} if self.theta is None else {"theta": self.theta.theta}
        out.update({f"head.{k}": v for k, v in self.head.params().items()})
        return out

    def state_dict(self) -> dict:
        state = {k: v.copy() for k, v in self.params().items()}
        state.update({f"head.{k}": v.copy() for k, v in self.head.buffers().items()})
        if isinstance(self.head, RbfHead):
            state["head.initialized"] = self.head.initialized
        return state

    def load_state_dict(self, state: dict):
        for key, value in state.items():
            if key == "theta":
                self.theta = SelectionParams(np.array(value, dtype=np.float64))
            elif key == "head.initialized":
                self.head.initialized = bool(value)
            else:
                setattr(self.head, key[len("head."):], np.array(value, dtype=np.float64))
        self._feature_cache.clear()

    # -- forward / backward ---------------------------------------------

    def features(self, graphs, signals, keep: bool = False):
        if self.theta is None and not keep:
            missing = [k for k, g in enumerate(graphs) if id(g) not in self._feature_cache]
            if missing:
                f, _, _ = transform_batch([graphs[k] for k in missing], [signals[k] for k in missing],
                                          self.fixed, self.cfg)
                for k, row in zip(missing, f):
                    self._feature_cache[id(graphs[k])] = (graphs[k], row)
            return np.array([self._feature_cache[id(g)][1] for g in graphs]), None
        f, _, cache = transform_batch(graphs, signals, self.selection(), self.cfg, keep_cache=keep)
        return f, cache

    def setup(self, train_set):
        """Data-dependent initialization from a first pass over the training set."""
        f, _ = self.features(train_set.graphs, train_set.node_features)
        if isinstance(self.head, RbfHead):
            if not self.head.initialized:
                k = min(self.head.n_anchors, f.shape[0])
                if k < self.head.n_anchors:
                    self.head.n_anchors = k
                    self.head.W = self.head.W[:, :k]
                rbf_init_anchors(self.head, f, seed=self.anchor_seed)
        else:
            self.head.fit_input_scaling(f)

    def forward(self, graphs, signals, mode: str = "eval", keep: bool = False):
        train_scatter = keep and self.theta is not None
        f, cache = self.features(graphs, signals, keep=train_scatter)
        if isinstance(self.head, RbfHead):
            out = self.head.forward(f, mode=mode, keep=keep)
        else:
            out = self.head.forward(f, keep=keep)
        if not keep:
            return out
        logits, head_cache = out
        return logits, (cache, head_cache)

    def backward(self, caches, d_logits) -> dict:
        scatter_cache, head_cache = caches
        head_grads, d_feat = self.head.backward(head_cache, d_logits)
        grads = {f"head.{k}": v for k, v in head_grads.items()}
        if self.theta is not None:
            grads = {"theta": backward_theta(scatter_cache, d_feat), **grads}
        return grads

    def loss_and_grads(self, ds) -> tuple[float, dict]:
        logits, caches = self.forward(ds.graphs, ds.node_features, mode="train", keep=True)
        value, d_logits = loss(self.loss_spec, logits, ds.labels)
        return value, self.backward(caches, d_logits)

    def predict_raw(self, ds) -> np.ndarray:
        return self.forward(ds.graphs, ds.node_features, mode="eval")

    def eval_loss(self, ds) -> float:
        return loss(self.loss_spec, self.predict_raw(ds), ds.labels)[0]

    def predict(self, ds) -> np.ndarray:
        raw = self.predict_raw(ds)
        return np.argmax(raw, axis=1) if self.task == "classification" else raw
