"""Adam, early stopping, checkpoints and k-fold cross-validation."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    DatasetTooSmall,
    EmptySplit,
    LengthMismatch,
    NonFiniteGradient,
    ShapeMismatch,
)
from .model import LegsModel
from .scattering import ScatteringConfig

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def rng_stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent named sub-stream of the run seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *[int(k) for k in keys]])


@dataclass
class TrainConfig:
    lr: float = 1e-4
    max_epochs: int = 1000
    patience_epochs: int = 100
    eval_every: int = 10
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    variant: str = "LEGS-FCN"
    scattering: ScatteringConfig = field(default_factory=ScatteringConfig)
    hidden: int = 128
    n_anchors: int = 64
    theta_init: str = "dyadic_warm"

    def __post_init__(self):
        if isinstance(self.scattering, dict):
            self.scattering = ScatteringConfig(**self.scattering)
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.patience_epochs > self.max_epochs:
            raise ValueError("patience_epochs cannot exceed max_epochs")
        if self.eval_every < 1 or self.patience_epochs % self.eval_every:
            raise ValueError("eval_every must divide patience_epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place bias-corrected Adam update of every array in ``params``."""
    state.t += 1
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1 ** state.t)
        v_hat = v / (1 - beta2 ** state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# checkpoints


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {"__array__": obj.tolist(), "dtype": str(obj.dtype), "shape": list(obj.shape)}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["__array__"], dtype=obj["dtype"]).reshape(obj["shape"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


@dataclass
class Checkpoint:
    model_state: dict
    adam: AdamState
    epoch: int
    best_val_loss: float
    best_epoch: int
    config_hash: str
    rng_state: dict
    best: "Checkpoint | None" = None
    version: int = CHECKPOINT_VERSION

    def to_dict(self) -> dict:
        return _encode({
            "version": self.version,
            "model_state": self.model_state,
            "adam": {"m": self.adam.m, "v": self.adam.v, "t": self.adam.t},
            "epoch": self.epoch,
            "best_val_loss": self.best_val_loss,
            "best_epoch": self.best_epoch,
            "config_hash": self.config_hash,
            "rng_state": self.rng_state,
            "best": None if self.best is None else self.best.to_dict(),
        })

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        d = _decode(d)
        if d["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d['version']}")
        best = d.get("best")
        return cls(
            model_state=d["model_state"],
            adam=AdamState(m=d["adam"]["m"], v=d["adam"]["v"], t=d["adam"]["t"]),
            epoch=d["epoch"],
            best_val_loss=d["best_val_loss"],
            best_epoch=d["best_epoch"],
            config_hash=d["config_hash"],
            rng_state=d["rng_state"],
            best=None if best is None else cls.from_dict(_encode(best)),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    best: Checkpoint
    history: list
    last: Checkpoint

    def __iter__(self):
        yield self.best
        yield self.history


def build_model(cfg: TrainConfig, dataset, seed_key=()) -> LegsModel:
    task = dataset.task
    out_dim = dataset.n_classes if task == "classification" else dataset.labels.reshape(len(dataset), -1).shape[1]
    init_seed = int(rng_stream(cfg.seed, "init", *seed_key).integers(2 ** 31))
    anchor_seed = int(rng_stream(cfg.seed, "anchors", *seed_key).integers(2 ** 31))
    return LegsModel(
        cfg.variant, cfg.scattering, dataset.channels, out_dim, task=task,
        hidden=cfg.hidden, n_anchors=cfg.n_anchors, theta_init=cfg.theta_init,
        seed=init_seed, anchor_seed=anchor_seed,
    )


def train(model, train_set, val_set, cfg: TrainConfig, resume: Checkpoint | None = None,
          seed_key=(), log_fh=None) -> TrainResult:
    """Mini-batch Adam with validation-based early stopping.

    Validation loss is measured every ``eval_every`` epochs; training stops
    once ``patience_epochs`` pass without a strict improvement, or at
    ``max_epochs``.  The best evaluated state is returned along with the
    final state, from which training can be resumed bit-identically.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptySplit("train and validation splits must be non-empty")
    chash = cfg.config_hash()
    rng = rng_stream(cfg.seed, "batching", *seed_key)
    if resume is None:
        model.setup(train_set)
        adam = AdamState()
        start, best_val, best_epoch, best = 0, np.inf, 0, None
    else:
        model.load_state_dict(resume.model_state)
        adam = copy.deepcopy(resume.adam)
        rng.bit_generator.state = resume.rng_state
        start, best_val, best_epoch, best = resume.epoch, resume.best_val_loss, resume.best_epoch, resume.best

    def snapshot(epoch):
        return Checkpoint(
            model_state=model.state_dict(), adam=copy.deepcopy(adam), epoch=epoch,
            best_val_loss=float(best_val), best_epoch=best_epoch, config_hash=chash,
            rng_state=copy.deepcopy(rng.bit_generator.state),
        )

    history = []
    n = len(train_set)
    epoch = start
    while epoch < cfg.max_epochs:
        epoch += 1
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            value, grads = model.loss_and_grads(train_set.subset(idx))
            adam_step(model.params(), grads, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            total += value * len(idx)
        record = {"epoch": epoch, "train_loss": total / n}
        if epoch % cfg.eval_every == 0:
            val = float(model.eval_loss(val_set))
            record["val_loss"] = val
            if val < best_val:
                best_val, best_epoch = val, epoch
                best = snapshot(epoch)
        history.append(record)
        if log_fh is not None:
            log_fh.write(json.dumps(record) + "\n")
        if best is not None and epoch - best_epoch >= cfg.patience_epochs:
            break
    last = snapshot(epoch)
    last.best = best
    if best is None:
        best = last
    model.load_state_dict(best.model_state)
    return TrainResult(best=best, history=history, last=last)


# ---------------------------------------------------------------------------
# metrics and cross-validation


def metrics(predictions, targets, kind: str = "classification") -> float:
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if len(predictions) != len(targets):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(targets)} targets")
    if kind == "classification":
        return float(np.mean(predictions == targets))
    r = predictions.astype(np.float64).reshape(len(targets), -1) - targets.astype(np.float64).reshape(len(targets), -1)
    return float(np.mean(r * r))


def make_folds(labels, n_folds: int = 10, seed: int = 0, stratify: bool = True) -> list[np.ndarray]:
    """Seeded, optionally label-stratified partition into ``n_folds`` folds.

    Indices are shuffled within each class, concatenated class by class and
    dealt round-robin, so fold sizes differ by at most one.
    """
    labels = np.asarray(labels)
    rng = rng_stream(seed, "folds")
    if stratify:
        groups = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    else:
        groups = [np.arange(len(labels))]
    order = np.concatenate([rng.permutation(g) for g in groups])
    folds = [[] for _ in range(n_folds)]
    for pos, i in enumerate(order):
        folds[pos % n_folds].append(int(i))
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def majority_vote(predictions: np.ndarray, n_classes: int) -> np.ndarray:
    """Column-wise vote over ``(models, graphs)``; ties go to the lowest class."""
    counts = np.apply_along_axis(np.bincount, 0, predictions, minlength=n_classes)
    return np.argmax(counts, axis=0)


@dataclass
class CvResult:
    scores: list
    mean: float
    std: float
    folds: list
    models: list
    kind: str

    def to_dict(self) -> dict:
        return _encode({
            "kind": self.kind,
            "metric": "accuracy" if self.kind == "classification" else "mse",
            "scores": self.scores,
            "mean": self.mean,
            "std": self.std,
            "folds": [f.tolist() for f in self.folds],
            "models": self.models,
        })


def crossval(dataset, cfg: TrainConfig, fast: bool = True, n_folds: int = 10,
             train_partitions: int | None = None, threads: int = 1) -> CvResult:
    """k-fold CV: each test fold is scored by the ensemble of models trained
    with the remaining folds rotated through the validation role.

    ``fast`` trains a single model per test fold.  ``train_partitions``
    limits how many of the remaining partitions are used for training.
    """
    if len(dataset) < n_folds:
        raise DatasetTooSmall(f"{len(dataset)} graphs for {n_folds}-fold cross-validation")
    kind = dataset.task
    folds = make_folds(dataset.labels, n_folds, cfg.seed, stratify=kind == "classification")
    jobs = []
    for k in range(n_folds):
        others = [(k + i) % n_folds for i in range(1, n_folds)]
        val_choices = others[:1] if fast else others
        for v in val_choices:
            rest = [f for f in others if f != v]
            if train_partitions is not None:
                pick = rng_stream(cfg.seed, "partitions", k, v).permutation(len(rest))[:train_partitions]
                rest = [rest[i] for i in sorted(pick)]
            jobs.append((k, v, np.concatenate([folds[f] for f in rest])))

    def run(job):
        k, v, train_idx = job
        model = build_model(cfg, dataset, seed_key=(k, v))
        result = train(model, dataset.subset(train_idx), dataset.subset(folds[v]), cfg, seed_key=(k, v))
        test = dataset.subset(folds[k])
        info = {
            "test_fold": k, "val_fold": v, "epochs": result.last.epoch,
            "best_epoch": result.best.epoch, "best_val_loss": result.best.best_val_loss,
            "F": model.selection().F, "row_order": model.selection().row_order,
        }
        return k, model.predict(test), info

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run, jobs))
    else:
        outputs = [run(j) for j in jobs]

    scores, models = [], []
    for k in range(n_folds):
        preds = [p for kk, p, _ in outputs if kk == k]
        models += [info for kk, _, info in outputs if kk == k]
        targets = dataset.labels[folds[k]]
        if kind == "classification":
            ensemble = majority_vote(np.array(preds), dataset.n_classes)
        else:
            ensemble = np.mean(preds, axis=0)
        scores.append(metrics(ensemble, targets, kind))
        log.info("fold %d: %s = %.4f", k, "accuracy" if kind == "classification" else "mse", scores[-1])
    return CvResult(scores=scores, mean=float(np.mean(scores)), std=float(np.std(scores)),
                    folds=folds, models=models, kind=kind)
