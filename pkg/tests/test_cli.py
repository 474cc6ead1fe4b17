import json
import subprocess
import sys

import pytest

from popdyn.cli import main
from popdyn.io import payload_bytes, read_json

CONFIG = """\
dataset = {out}/dataset.csv
output_dir = {out}
seed = 7
clustering.bandwidth = 0.4
classifier.grid = n_trees=10; max_depth=none,8
evaluation.runs = 2
"""


def write_config(path, out):
    path.write_text(CONFIG.format(out=out))
    return str(path)


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = write_config(out / "cfg.txt", out)
    steps = [
        ["synth", "--n", "240", "--prototypes", "3", "--missing-rate", "0.02"],
        ["decompose"],
        ["cluster"],
        ["train-shape"],
        ["train-scale"],
        ["predict"],
        ["evaluate"],
    ]
    for step in steps:
        assert main(step + ["--config", cfg, "--quiet", "--threads", "1"]) == 0, step
    return out, cfg


def test_pipeline_outputs(pipeline_dir):
    out, _ = pipeline_dir
    for name in ("dataset.csv", "decomposed.csv", "prototypes.csv", "labels.csv",
                 "shape_model.json", "scale_model.json", "predictions.csv", "report.json",
                 "eval_predictions.csv", "error_curves.csv"):
        text = (out / name).read_text()
        assert text.startswith("# popdyn "), name
    _, report = read_json(out / "report.json")
    assert len(report["per_run"]) == 2
    assert set(report["aggregate"]) >= {"spearman_scale", "trmse_25", "trmse_median",
                                        "classifier_accuracy"}
    assert "dataset" not in report["config"]


def test_rerun_is_byte_identical(pipeline_dir, tmp_path):
    out, _ = pipeline_dir
    cfg = write_config(tmp_path / "cfg.txt", tmp_path)
    (tmp_path / "dataset.csv").write_bytes((out / "dataset.csv").read_bytes())
    before = (out / "dataset.csv").read_bytes()
    for step in (["cluster"], ["train-shape"], ["train-scale"], ["evaluate"]):
        assert main(step + ["--config", cfg, "--quiet", "--threads", "2"]) == 0
    for name in ("prototypes.csv", "labels.csv", "shape_model.json", "scale_model.json",
                 "report.json", "eval_predictions.csv", "error_curves.csv"):
        assert payload_bytes(out / name) == payload_bytes(tmp_path / name), name
    assert (out / "dataset.csv").read_bytes() == before


def test_evaluate_without_prototypes(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.txt", tmp_path)
    assert main(["synth", "--n", "50", "--prototypes", "2", "--config", cfg, "--quiet"]) == 0
    assert main(["evaluate", "--config", cfg, "--quiet"]) != 0
    err = capsys.readouterr().err
    assert "prototypes.csv" in err and "popdyn cluster" in err


def test_config_violation_names_key(tmp_path, capsys):
    f = tmp_path / "cfg.txt"
    f.write_text("clustering.bandwidth = 0\n")
    assert main(["decompose", "--config", str(f)]) == 1
    assert "clustering.bandwidth" in capsys.readouterr().err


def test_flags_override_config(pipeline_dir, tmp_path):
    out, cfg = pipeline_dir
    dest = tmp_path / "k"
    assert main(["cluster", "--config", cfg, "--method", "kmeans", "--k", "4", "--restarts",
                 "2", "--out-dir", str(dest), "--quiet"]) == 0
    header = (dest / "prototypes.csv").read_text().splitlines()[0]
    assert "method=kmeans" in header and "k=4" in header
    assert len((dest / "prototypes.csv").read_text().splitlines()) == 2 + 4


def test_diagnose_and_select(pipeline_dir, tmp_path):
    out, cfg = pipeline_dir
    assert main(["diagnose", "--config", cfg, "--k-max", "4", "--restarts", "1",
                 "--out-dir", str(tmp_path), "--quiet"]) == 0
    elbow = (tmp_path / "elbow.csv").read_text().splitlines()
    assert elbow[1] == "k,wss" and len(elbow) == 2 + 4
    assert main(["select-features", "--config", cfg, "--out-dir", str(tmp_path),
                 "--quiet"]) == 0
    assert (tmp_path / "feature_sets.csv").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "popdyn", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "evaluate" in proc.stdout
