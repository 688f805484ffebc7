import json
import subprocess
import sys

import numpy as np
import pytest

from sgfloc import __version__
from sgfloc.cli import EXIT_FAILURE, EXIT_INPUT, EXIT_OK, main
from sgfloc.dataset import read_tum, write_tum


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim") / "delivery"
    assert main(["simulate", "--kind", "delivery", "--seed", "0", "--out", str(root)]) == EXIT_OK
    return root


def test_version(capsys):
    assert main(["version"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == __version__


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "simulate" in capsys.readouterr().out


def test_usage_errors():
    assert main([]) == EXIT_INPUT
    assert main(["simulate", "--kind", "moon", "--out", "x"]) == EXIT_INPUT
    assert main(["run", "--dataset", "x", "--out", "y", "--hu-threshold", "abc"]) == EXIT_INPUT


def test_missing_dataset(tmp_path):
    assert main(["run", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == EXIT_INPUT


def test_bad_config_value(tmp_path, dataset):
    assert main(["run", "--dataset", str(dataset), "--out", str(tmp_path / "o"),
                 "--group-threshold", "3"]) == EXIT_INPUT
    cfg = tmp_path / "c.yaml"
    cfg.write_text("no_such_key: 1\n")
    assert main(["run", "--dataset", str(dataset), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == EXIT_INPUT


def test_unwritable_output_is_a_failure(tmp_path, dataset):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--dataset", str(dataset), "--out", str(blocker)]) == EXIT_FAILURE


@pytest.mark.slow
def test_run_writes_outputs(tmp_path, dataset, capsys):
    out = tmp_path / "out"
    cfg = tmp_path / "c.yaml"
    cfg.write_text("hu_threshold: 0.004\nworkers: 1\n")
    # The flag beats the file.
    assert main(["run", "--dataset", str(dataset), "--out", str(out), "--config", str(cfg),
                 "--hu-threshold", "0.005"]) == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == ["constraints.jsonl", "counters.csv", "descriptors.jsonl", "metrics.json",
                     "trajectory.svg", "trajectory.tum"]
    m = json.loads((out / "metrics.json").read_text())
    assert m["ate"]["optimized"]["rmse"] < m["ate"]["odometry"]["rmse"]
    assert m["loop_constraints"] > 0 and m["counters"]["false_constraints"] == 0
    capsys.readouterr()
    assert main(["eval", "--est", str(out / "trajectory.tum"), "--gt", str(dataset / "groundtruth.tum")]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["rmse"] == pytest.approx(m["ate"]["optimized"]["rmse"], abs=1e-8)


def test_eval_no_overlap(tmp_path):
    a = np.zeros((3, 7))
    a[:, 0] = [0, 1, 2]
    b = a.copy()
    b[:, 0] += 100
    write_tum(tmp_path / "a.tum", a)
    write_tum(tmp_path / "b.tum", b)
    assert main(["eval", "--est", str(tmp_path / "a.tum"), "--gt", str(tmp_path / "b.tum")]) == EXIT_INPUT


def test_eval_unaligned(tmp_path, capsys):
    a = np.zeros((4, 7))
    a[:, 0] = np.arange(4)
    a[:, 1] = np.arange(4)
    b = a.copy()
    b[:, 2] = 3.0
    b[:, 1] += 4.0
    write_tum(tmp_path / "a.tum", a)
    write_tum(tmp_path / "b.tum", b)
    assert main(["eval", "--no-align", "--est", str(tmp_path / "a.tum"), "--gt", str(tmp_path / "b.tum")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["rmse"] == pytest.approx(5.0)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "sgfloc.cli", "version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == __version__


def test_simulated_dataset_layout(dataset):
    gt = read_tum(dataset / "groundtruth.tum")
    n = len(list((dataset / "masks").glob("*.png")))
    assert len(gt) == n > 100
    assert (dataset / "annotations.json").is_file()
