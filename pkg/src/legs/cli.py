"""Command-line entry point: ``legs <subcommand> [--config cfg.json] ...``.

Exit codes: 0 success, 1 check or metric failure (or a runtime error), 2
usage or configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from contextlib import nullcontext
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from .data import GraphDataset, TuRawFiles, gen_synthetic, parse_tu, write_tu
from .errors import LegsError
from .filter_bank import ScaleSequence, apply_bank, dyadic_scales, frame_energy, frame_lower_constant
from .graph import diffusion_cascade
from .learnable import inject_fault
from .scattering import ScatteringConfig, transform_batch
from .trainer import TrainConfig, build_model, crossval, make_folds, metrics, train
from .verification import DEFAULT_SUITE, run_suite, sample_graph, sample_signal

log = logging.getLogger("legs")

SCHEMA_VERSION = 1

_SYNTHETIC = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["cycle_vs_tree", "er_density", "longrange_pair"]},
        "count": {"type": "integer", "minimum": 2},
        "size_range": {"type": "array", "items": {"type": "integer", "minimum": 4}, "minItems": 2, "maxItems": 2},
        "p1": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "p2": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "short_path": {"type": "integer", "minimum": 1},
        "long_path": {"type": "integer", "minimum": 1},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "legs run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "scattering": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "J": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
                "q_max": {"type": "integer", "minimum": 1},
                "order": {"enum": [1, 2, 3]},
                "path_rule": {"enum": ["increasing", "all_ordered"]},
                "normalize_moments": {"type": "boolean"},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": {"enum": ["LEGS-FIXED", "LEGS-FCN", "LEGS-RBF"]},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "max_epochs": {"type": "integer", "minimum": 1},
                "patience_epochs": {"type": "integer", "minimum": 1},
                "eval_every": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "hidden": {"type": "integer", "minimum": 1},
                "n_anchors": {"type": "integer", "minimum": 1},
                "theta_init": {"enum": ["dyadic_warm", "uniform", "random"]},
            },
        },
        "crossval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fast": {"type": "boolean"},
                "n_folds": {"type": "integer", "minimum": 2},
                "train_partitions": {"type": ["integer", "null"], "minimum": 1},
                "min_accuracy": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
            },
        },
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "name": {"type": "string"},
                "features": {"enum": ["structural", "attributes", "both"]},
                "node_labels": {"type": "boolean"},
                "isolated_policy": {"enum": ["reject", "self_loop"]},
                "synthetic": _SYNTHETIC,
            },
        },
        "gen": _SYNTHETIC,
        "check": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "trials_scale": {"type": "number", "exclusiveMinimum": 0},
                "fault": {"enum": [None, "flip_psi_sign", "row_sum"]},
            },
        },
        "frame_report": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scales": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "graphs": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "threads": 1,
    "output_dir": "legs_out",
    "scattering": {},
    "train": {},
    "crossval": {"fast": True, "n_folds": 10, "train_partitions": None, "min_accuracy": None},
    "dataset": {"synthetic": {"kind": "cycle_vs_tree", "count": 200}},
    "gen": {"kind": "cycle_vs_tree", "count": 20},
    "check": {"trials_scale": 1.0, "fault": None},
    "frame_report": {"scales": [1, 2, 4, 8], "graphs": 100},
}


class ConfigurationError(Exception):
    pass


def load_config(path: str | None) -> dict:
    """Validated configuration with defaults filled in for omitted sections."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        field = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config field {field}: {exc.message}") from None
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict) and key not in ("dataset", "gen"):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects results (thread count and output location do not)."""
    relevant = {k: v for k, v in cfg.items() if k not in ("threads", "output_dir")}
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()[:16]


def scattering_config(cfg: dict) -> ScatteringConfig:
    return ScatteringConfig(**cfg["scattering"])


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(seed=cfg["seed"], scattering=scattering_config(cfg), **cfg["train"])
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None


def load_dataset(cfg: dict) -> GraphDataset:
    ds_cfg = cfg["dataset"]
    if "path" in ds_cfg:
        name = ds_cfg.get("name") or Path(ds_cfg["path"]).name
        files = TuRawFiles.from_dir(ds_cfg["path"], name)
        return parse_tu(
            files,
            isolated_policy=ds_cfg.get("isolated_policy", "self_loop"),
            features=ds_cfg.get("features", "structural"),
            node_labels=ds_cfg.get("node_labels", False),
            name=name,
        )
    if "synthetic" in ds_cfg:
        syn = dict(ds_cfg["synthetic"])
        return gen_synthetic(syn.pop("kind"), syn.pop("count"), seed=cfg["seed"], **_syn_args(syn))
    raise ConfigurationError("dataset needs either 'path' or 'synthetic'")


def _syn_args(syn: dict) -> dict:
    out = dict(syn)
    if "size_range" in out:
        out["size_range"] = tuple(out["size_range"])
    return out


def write_metadata(out: Path, cfg: dict, command: str, extra: dict | None = None):
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    sc = scattering_config(cfg)
    meta = {
        "command": command,
        "config_hash": config_hash(cfg),
        "library_version": version,
        "seed": cfg["seed"],
        "decisions": {
            "path_rule": sc.path_rule,
            "moment_normalization": "mean over nodes" if sc.normalize_moments else "sum over nodes",
            "row_reorder_policy": "every forward pass, stable argmax sort",
            "alpha": sc.alpha,
            "fixed_variant_selection": "exact one-hot dyadic rows",
        },
        "config": cfg,
    }
    if extra:
        meta.update(extra)
    with open(out / "run_metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def _write_F_dump(path: Path, rows: list[tuple[dict, np.ndarray]]):
    """One line per selection-matrix row, labelled by the model that owns it."""
    with open(path, "w", newline="") as fh:
        writer = None
        for labels, F in rows:
            for j, row in enumerate(F):
                record = {**labels, "row": j, **{f"t{t + 1}": repr(float(v)) for t, v in enumerate(row)}}
                if writer is None:
                    writer = csv.DictWriter(fh, fieldnames=list(record))
                    writer.writeheader()
                writer.writerow(record)


# ---------------------------------------------------------------------------
# subcommands


def cmd_check(cfg: dict, out: Path, args) -> int:
    fault = cfg["check"]["fault"]
    ctx = inject_fault(fault) if fault == "flip_psi_sign" else nullcontext()
    with ctx:
        reports = run_suite(DEFAULT_SUITE, seed=cfg["seed"], fault=fault if fault == "row_sum" else None,
                            trials_scale=cfg["check"]["trials_scale"])
    print(f"{'property':24s} {'worst':>12s} {'tolerance':>10s} {'trials':>7s}  result")
    for r in reports:
        print(f"{r.name:24s} {r.worst_value:12.3e} {r.tolerance:10.1e} {r.trials:7d}  {'PASS' if r.passed else 'FAIL'}")
    failed = [r.name for r in reports if not r.passed]
    with open(out / "check_report.json", "w") as fh:
        json.dump({"passed": not failed, "failed": failed, "properties": [dict(r.__dict__) for r in reports]},
                  fh, indent=2)
    write_metadata(out, cfg, "check")
    if failed:
        print("failing invariants: " + ", ".join(failed))
        return 1
    return 0


def cmd_transform(cfg: dict, out: Path, args) -> int:
    ds = load_dataset(cfg)
    tcfg = train_config(cfg)
    model = build_model(tcfg, ds)
    feats, index, _ = transform_batch(ds.graphs, ds.node_features, model.selection(), tcfg.scattering)
    names = [f"{'phi' if p == 'phi' else 'p' + '-'.join(map(str, p)) if p else 'x'}|q{q}|c{c}" for p, q, c in index]
    with open(out / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["graph", "label", *names])
        for k, row in enumerate(feats):
            w.writerow([k, ds.labels[k].tolist(), *(repr(float(v)) for v in row)])
    columns = [
        {"column": name, "path": p if p == "phi" else list(p), "q": q, "channel": c,
         "channel_name": ds.feature_spec[c] if c < len(ds.feature_spec) else str(c)}
        for name, (p, q, c) in zip(names, index)
    ]
    with open(out / "features_index.json", "w") as fh:
        json.dump({"columns": columns, "selection": model.selection().F.tolist(),
                   "dataset": ds.manifest()}, fh, indent=2)
    write_metadata(out, cfg, "transform")
    print(f"wrote {len(ds)} rows x {feats.shape[1]} features to {out / 'features.csv'}")
    return 0


def cmd_train(cfg: dict, out: Path, args) -> int:
    ds = load_dataset(cfg)
    tcfg = train_config(cfg)
    folds = make_folds(ds.labels, 10, tcfg.seed, stratify=ds.task == "classification")
    test_idx, val_idx = folds[0], folds[1]
    train_idx = np.concatenate(folds[2:])
    model = build_model(tcfg, ds)
    with open(out / "train_log.jsonl", "w") as log_fh:
        result = train(model, ds.subset(train_idx), ds.subset(val_idx), tcfg, log_fh=log_fh)
    result.best.save(out / "checkpoint_best.json")
    result.last.save(out / "checkpoint_last.json")
    kind = ds.task
    test = ds.subset(test_idx)
    trn = ds.subset(train_idx)
    report = {
        "kind": kind,
        "metric": "accuracy" if kind == "classification" else "mse",
        "train": metrics(model.predict(trn), trn.labels, kind),
        "test": metrics(model.predict(test), test.labels, kind),
        "best_epoch": result.best.epoch,
        "stopped_epoch": result.last.epoch,
        "best_val_loss": result.best.best_val_loss,
    }
    with open(out / "metrics.json", "w") as fh:
        json.dump(report, fh, indent=2)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(report))
        w.writerow(list(report.values()))
    sel = model.selection()
    _write_F_dump(out / "selection_F.csv", [({"variant": tcfg.variant}, sel.F)])
    write_metadata(out, cfg, "train")
    print(json.dumps(report))
    return 0


def cmd_crossval(cfg: dict, out: Path, args) -> int:
    ds = load_dataset(cfg)
    tcfg = train_config(cfg)
    cv = cfg["crossval"]
    fast = cv["fast"] or bool(args.fast)
    result = crossval(ds, tcfg, fast=fast, n_folds=cv["n_folds"],
                      train_partitions=cv["train_partitions"], threads=cfg["threads"])
    report = result.to_dict()
    report.pop("models")
    report["fast"] = fast
    report["variant"] = tcfg.variant
    with open(out / "metrics.json", "w") as fh:
        json.dump(report, fh, indent=2)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", report["metric"]])
        for k, s in enumerate(result.scores):
            w.writerow([k, s])
        w.writerow(["mean", result.mean])
        w.writerow(["std", result.std])
    _write_F_dump(out / "selection_F.csv", [
        ({"test_fold": m["test_fold"], "val_fold": m["val_fold"]}, np.asarray(m["F"])) for m in result.models
    ])
    write_metadata(out, cfg, "crossval")
    print(json.dumps({k: report[k] for k in ("metric", "mean", "std", "scores")}))
    threshold = cv["min_accuracy"]
    if threshold is not None and result.kind == "classification" and result.mean < threshold:
        print(f"mean accuracy {result.mean:.4f} below required {threshold}")
        return 1
    return 0


def cmd_gen(cfg: dict, out: Path, args) -> int:
    syn = dict(cfg["gen"])
    kind = syn.pop("kind")
    ds = gen_synthetic(kind, syn.pop("count", 20), seed=cfg["seed"], **_syn_args(syn))
    write_tu(ds, out, name=kind)
    write_metadata(out, cfg, "gen")
    counts = np.bincount(ds.labels)
    print(f"wrote {len(ds)} graphs ({', '.join(map(str, counts))} per class) to {out}")
    return 0


def cmd_frame_report(cfg: dict, out: Path, args) -> int:
    """Lower frame constant for consecutive scale pairs plus measured energy
    ratios on random graphs for the configured scale sequence."""
    scales = cfg["frame_report"]["scales"]
    m = scales[-1]
    seq = ScaleSequence(tuple(scales), m)
    C = frame_lower_constant(seq.scales[0], seq.scales[-1])
    alpha = scattering_config(cfg).alpha
    rng = np.random.default_rng([cfg["seed"], 7])
    ratios = []
    for _ in range(cfg["frame_report"]["graphs"]):
        g = sample_graph(rng)
        x = sample_signal(rng, g)
        energy, norm = frame_energy(g, apply_bank(diffusion_cascade(g, alpha, x, m), seq), x)
        ratios.append(float(np.squeeze(energy) / np.squeeze(norm)))
    rows = [{"t1": seq.scales[0], "tJ": seq.scales[-1], "C": C,
             "min_ratio": min(ratios), "max_ratio": max(ratios), "graphs": len(ratios)}]
    for j in range(10):
        d = dyadic_scales(j, 2 ** j)
        rows.append({"t1": 1, "tJ": d.scales[-1], "C": frame_lower_constant(1, d.scales[-1]),
                     "min_ratio": "", "max_ratio": "", "graphs": 0})
    with open(out / "frame_report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    write_metadata(out, cfg, "frame-report")
    print(f"scales {list(seq.scales)}: C = {C:.6f}, energy ratio in [{min(ratios):.6f}, {max(ratios):.6f}]")
    return 0 if C - 1e-9 <= min(ratios) and max(ratios) <= 1 + 1e-9 else 1


COMMANDS = {
    "check": cmd_check,
    "transform": cmd_transform,
    "train": cmd_train,
    "crossval": cmd_crossval,
    "gen": cmd_gen,
    "frame-report": cmd_frame_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="legs", description="Learnable geometric scattering toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--threads", type=int, help="worker threads (default: available CPUs)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--fast", action="store_true", help="one model per test fold (crossval)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigurationError("--seed must be non-negative")
            cfg["seed"] = args.seed
        cfg["threads"] = args.threads or (cfg["threads"] if args.config else os.cpu_count() or 1)
        out = Path(args.out or cfg["output_dir"])
        os.makedirs(out, exist_ok=True)
        # validate derived configs before any work starts
        train_config(cfg)
    except (ConfigurationError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, out, args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (LegsError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
