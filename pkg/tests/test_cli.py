import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from hemofield.case import load_case, manifest_cases, read_manifest
from hemofield.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--n", "10", "--out", str(root / "data"), "--seed", "2",
                 "--rings-per-mm", "1", "--segments", "16", "--jobs", "1"]) == EXIT_OK
    manifest = root / "data" / "dataset.json"
    assert main(["featurize", "--dataset", str(manifest), "--eig", "32", "--jobs", "1"]) == EXIT_OK
    assert main(["train", "--dataset", str(manifest), "--model", "pointnetpp", "--target", "dp",
                 "--epochs", "2", "--seed", "1", "--out", str(root / "model")]) == EXIT_OK
    return root, manifest


def test_generate_manifest(pipeline):
    _, manifest = pipeline
    m = read_manifest(manifest)
    assert m["seed"] == 2 and m["oracle"] == "poiseuille-v1"
    assert sorted(c["split"] for c in m["cases"]).count("train") == 8
    for path, _ in manifest_cases(manifest):
        case = load_case(path)
        assert case.features is not None and case.features.values.shape[1] == 28


def test_infer(pipeline, capsys):
    root, manifest = pipeline
    path, _ = manifest_cases(manifest)[0]
    out = root / "pred.csv"
    assert main(["infer", "--model-dir", str(root / "model"), "--case", str(path), "--out", str(out)]) == EXIT_OK
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["vertex_id", "pressure_drop", "vffr"]
    assert len(rows) - 1 == load_case(path).mesh.n_vertices
    assert np.isfinite(np.array(rows[1:], dtype=float)).all()


def test_eval_report(pipeline, capsys):
    root, manifest = pipeline
    rep = root / "report"
    assert main(["eval", "--model-dir", str(root / "model"), "--dataset", str(manifest),
                 "--split", "test", "--report", str(rep)]) == EXIT_OK
    summary = json.loads((rep / "summary.json").read_text())
    for k in ("per_point_diff_mean", "approx_disparity_mean", "spearman_rho", "bias", "loa",
              "precision", "recall", "accuracy", "seconds_per_epoch"):
        assert k in summary
    assert summary["n_cases"] == 1 and summary["epochs_completed"] == 2
    assert (rep / "metrics.csv").exists() and (rep / "lesions.csv").exists()
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["n_cases"] == 1


def test_ablate(pipeline, capsys):
    root, manifest = pipeline
    cfg = root / "abl.json"
    cfg.write_text(json.dumps({"masks": ["ablation1", "all"], "epochs": 1}))
    assert main(["ablate", "--dataset", str(manifest), "--config", str(cfg), "--report", str(root / "abl")]) == EXIT_OK
    lines = (root / "abl" / "ablation.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[1].startswith("ablation1,")


def test_validation_failures(pipeline, tmp_path, capsys):
    root, manifest = pipeline
    assert main(["featurize", "--dataset", str(tmp_path / "missing.json")]) == EXIT_INVALID
    assert main(["featurize", "--dataset", str(manifest), "--mask", "0x0"]) == EXIT_INVALID
    assert main(["eval", "--model-dir", str(tmp_path), "--dataset", str(manifest), "--report", str(tmp_path / "r")]) \
        == EXIT_INVALID
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"masks": {"x": "ablation99"}}))
    assert main(["ablate", "--dataset", str(manifest), "--config", str(cfg), "--report", str(tmp_path)]) \
        == EXIT_INVALID
    with pytest.raises(SystemExit) as err:
        main(["train", "--dataset", str(manifest), "--model", "gcn", "--target", "dp", "--out", str(tmp_path)])
    assert err.value.code == 2


def test_numeric_failure_exit(pipeline, tmp_path, capsys):
    _, manifest = pipeline
    data = tmp_path / "data"
    shutil.copytree(manifest.parent, data)
    path = [p for p, s in manifest_cases(data / "dataset.json") if s == "train"][0]
    feats = path / "features.csv"
    lines = feats.read_text().splitlines()
    row = lines[3].split(",")
    row[3] = "nan"
    lines[3] = ",".join(row)
    feats.write_text("\n".join(lines) + "\n")
    code = main(["train", "--dataset", str(data / "dataset.json"), "--model", "mlp", "--target", "dp",
                 "--epochs", "1", "--batch", "1", "--out", str(tmp_path / "m")])
    assert code == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "hemofield.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("generate", "featurize", "train", "infer", "eval", "ablate"):
        assert cmd in out.stdout
    bad = subprocess.run([sys.executable, "-m", "hemofield.cli", "train"], capture_output=True, text=True)
    assert bad.returncode == 2
