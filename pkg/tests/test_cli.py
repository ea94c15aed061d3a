import csv
import filecmp
import json

import numpy as np

from legs.cli import main
from legs.data import TuRawFiles, parse_tu
from legs.scattering import ScatteringConfig, transform


def _config(tmp_path, name="cfg.json", **sections):
    path = tmp_path / name
    path.write_text(json.dumps(sections))
    return str(path)


def _k2_dataset(tmp_path):
    d = tmp_path / "k2"
    d.mkdir()
    (d / "K2_A.txt").write_text("1, 2\n2, 1\n")
    (d / "K2_graph_indicator.txt").write_text("1\n1\n")
    (d / "K2_graph_labels.txt").write_text("0\n")
    (d / "K2_node_attributes.txt").write_text("1.0\n0.0\n")
    return d


def test_bad_alpha_exit_2(tmp_path, capsys):
    cfg = _config(tmp_path, scattering={"alpha": 1.5})
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "scattering/alpha" in capsys.readouterr().err


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = _config(tmp_path, train={"learning_rate": 1.0})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_inconsistent_train_config_exit_2(tmp_path):
    cfg = _config(tmp_path, train={"max_epochs": 10, "patience_epochs": 20})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_gen_balanced_deterministic_round_trip(tmp_path):
    cfg = _config(tmp_path, gen={"kind": "cycle_vs_tree", "count": 20})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "--config", cfg, "--out", str(a), "--seed", "3"]) == 0
    assert main(["gen", "--config", cfg, "--out", str(b), "--seed", "3"]) == 0
    files = sorted(p.name for p in a.iterdir() if p.suffix == ".txt")
    match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    assert not mismatch and not errors and len(match) == 4
    ds = parse_tu(TuRawFiles.from_dir(a, "cycle_vs_tree"), features="attributes")
    assert len(ds) == 20 and np.bincount(ds.labels).tolist() == [10, 10]
    meta = json.loads((a / "run_metadata.json").read_text())
    assert {"config_hash", "library_version", "decisions"} <= set(meta)
    assert meta["decisions"]["path_rule"] == "increasing"


def test_transform_k2_matches_library(tmp_path):
    d = _k2_dataset(tmp_path)
    sc = {"J": 1, "m": 1, "q_max": 2, "order": 1, "normalize_moments": False}
    cfg = _config(tmp_path, scattering=sc, dataset={"path": str(d), "name": "K2", "features": "attributes"})
    out = tmp_path / "o"
    assert main(["transform", "--config", cfg, "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "features.csv")))
    assert len(rows[0]) == 2 + 6
    got = np.array([float(v) for v in rows[1][2:]])
    ds = parse_tu(TuRawFiles.from_dir(d, "K2"), features="attributes")
    want = transform(ds.graphs[0], ds.node_features[0], np.array([[1.0]]), ScatteringConfig(**sc)).values
    np.testing.assert_array_equal(got, want)
    np.testing.assert_allclose(got, [1.0, 1.0, 1.0, 0.5, 1.0, 0.5], atol=1e-15)
    index = json.loads((out / "features_index.json").read_text())
    assert len(index["columns"]) == 6


def test_transform_minimal_columns_and_bytes(tmp_path):
    d = _k2_dataset(tmp_path)
    sc = {"J": 1, "m": 1, "q_max": 1, "order": 1}
    cfg = _config(tmp_path, scattering=sc, dataset={"path": str(d), "name": "K2", "features": "attributes"})
    for o in ("o1", "o2"):
        assert main(["transform", "--config", cfg, "--out", str(tmp_path / o)]) == 0
    header = next(csv.reader(open(tmp_path / "o1" / "features.csv")))
    assert len(header) - 2 == 3
    assert (tmp_path / "o1" / "features.csv").read_bytes() == (tmp_path / "o2" / "features.csv").read_bytes()


def test_transform_missing_dataset_exit_1(tmp_path):
    cfg = _config(tmp_path, dataset={"path": str(tmp_path / "nope"), "name": "X"})
    assert main(["transform", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


SMALL_TRAIN = {"lr": 1e-2, "max_epochs": 10, "patience_epochs": 10, "eval_every": 5, "hidden": 16}
SMALL_SC = {"J": 2, "m": 4, "q_max": 2, "order": 1}


def test_train_writes_outputs(tmp_path):
    cfg = _config(tmp_path, scattering=SMALL_SC, train=SMALL_TRAIN,
                  dataset={"synthetic": {"kind": "cycle_vs_tree", "count": 40, "size_range": [8, 12]}})
    out = tmp_path / "o"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    for f in ("train_log.jsonl", "checkpoint_best.json", "checkpoint_last.json", "metrics.json",
              "metrics.csv", "selection_F.csv", "run_metadata.json"):
        assert (out / f).exists(), f
    log = [json.loads(line) for line in open(out / "train_log.jsonl")]
    assert [r["epoch"] for r in log] == list(range(1, 11))


def test_crossval_fixed_dumps_dyadic_rows(tmp_path):
    cfg = _config(tmp_path, scattering={"J": 3, "m": 8, "q_max": 2, "order": 1},
                  train=dict(SMALL_TRAIN, variant="LEGS-FIXED"),
                  dataset={"synthetic": {"kind": "cycle_vs_tree", "count": 20, "size_range": [8, 12]}})
    out = tmp_path / "o"
    assert main(["crossval", "--config", cfg, "--out", str(out), "--fast", "--threads", "2"]) == 0
    rows = list(csv.DictReader(open(out / "selection_F.csv")))
    assert len(rows) == 10 * 3
    for r in rows:
        F = [float(r[f"t{t}"]) for t in range(1, 9)]
        want = np.zeros(8)
        want[[1, 2, 4][int(r["row"])] - 1] = 1.0
        assert F == want.tolist()
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0.0 <= metrics["mean"] <= 1.0


def test_crossval_min_accuracy_exit_1(tmp_path):
    cfg = _config(tmp_path, scattering=SMALL_SC, train=dict(SMALL_TRAIN, max_epochs=5, patience_epochs=5),
                  crossval={"min_accuracy": 1.0},
                  dataset={"synthetic": {"kind": "er_density", "count": 20, "size_range": [8, 12]}})
    code = main(["crossval", "--config", cfg, "--out", str(tmp_path / "o")])
    metrics = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert code == (0 if metrics["mean"] >= 1.0 else 1)


def test_check_with_fault_exit_1(tmp_path, capsys):
    cfg = _config(tmp_path, check={"fault": "flip_psi_sign", "trials_scale": 0.01})
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    out = capsys.readouterr().out
    assert "telescoping_legs" in out and "FAIL" in out
    report = json.loads((tmp_path / "o" / "check_report.json").read_text())
    assert any(not r["passed"] for r in report["properties"])


def test_frame_report(tmp_path):
    cfg = _config(tmp_path, frame_report={"scales": [1, 2, 4], "graphs": 5})
    out = tmp_path / "o"
    assert main(["frame-report", "--config", cfg, "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "frame_report.csv")))
    assert rows
