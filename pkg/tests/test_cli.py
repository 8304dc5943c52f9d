import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from zigzag.cli import main, read_skeleton
from zigzag.core import validate_skeleton
from zigzag.models import load_csv

SMALL = ["experiment=gaussian-mse", "method=zz-cv", "n=100", "seed=7", "replicates=1", "epochs=50",
         "samples=500", "write_skeleton=true"]


def run_cli(tmp_path, pairs, name="out", extra=()):
    args = ["run", "--out", str(tmp_path / name)]
    for p in pairs:
        args += ["--set", p]
    return main(args + list(extra))


def test_gaussian_mse_cell(tmp_path):
    assert run_cli(tmp_path, SMALL) == 0
    out = tmp_path / "out"
    for f in ("skeleton.csv", "samples.csv", "metrics.json", "metrics.csv", "config.txt", "timing.json"):
        assert (out / f).exists(), f
    doc = json.loads((out / "metrics.json").read_text())
    cell = doc["cells"]["zz-cv_n100_r0"]
    assert len(cell["est_m1"]) == len(cell["est_m2"]) == len(cell["checkpoint_epochs"])
    assert "mse_m2" in doc["summary"]["zz-cv/n=100"]
    assert "wall_time" not in cell
    header = (out / "skeleton.csv").read_text().splitlines()[0]
    assert header == "t,xi_1,theta_1"
    assert (out / "metrics.csv").read_text().startswith("experiment,method,n,seed,metric,value\n")


def test_skeleton_round_trip(tmp_path):
    assert run_cli(tmp_path, SMALL + ["record=all"]) == 0
    path = tmp_path / "out" / "skeleton.csv"
    sk = read_skeleton(path)
    assert validate_skeleton(sk)[0]
    assert main(["validate", "--skeleton", str(path)]) == 0


def test_validate_rejects_broken_skeleton(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("t,xi_1,theta_1\n0,0,1\n1,5,-1\n")
    assert main(["validate", "--skeleton", str(path)]) == 1
    assert "flow violation at 1" in capsys.readouterr().out
    path.write_text("time,x\n0,0\n")
    assert main(["validate", "--skeleton", str(path)]) == 1


def test_rerun_is_byte_identical(tmp_path):
    pairs = SMALL + ["method=zz,zz-socv,sgld", "replicates=2"]
    assert run_cli(tmp_path, pairs, "a") == 0
    assert run_cli(tmp_path, pairs, "b", extra=["--workers", "2"]) == 0
    assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "exp.txt"
    cfg.write_text("# small sweep\nexperiment = logistic-scaling\nn = 256\nreplicates = 1\nepochs = 20\n"
                   "method = zz-cv,mala\nsamples = 200\n")
    assert main(["run", "--config", str(cfg), "--set", "epochs=30", "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert set(doc["cells"]) == {"zz-cv_n256_r0", "mala_n256_r0"}
    assert "epochs=30" in (tmp_path / "o" / "config.txt").read_text().splitlines()
    assert doc["cells"]["zz-cv_n256_r0"]["esspe"] > 0


@pytest.mark.parametrize("bad", [
    ["method=nuts"],
    ["experiment=unknown"],
    ["n=0"],
    ["bogus_key=1"],
    ["model=cauchy", "method=zz-cv"],
    ["model=cauchy", "method=zz-hessian"],
    ["epochs=abc"],
])
def test_invalid_config_exits_nonzero(tmp_path, bad, capsys):
    assert run_cli(tmp_path, ["epochs=10"] + bad) == 2
    assert "error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.txt"), "--out", str(tmp_path)]) == 2


def test_bad_worker_count(tmp_path):
    assert main(["run", "--workers", "0", "--out", str(tmp_path)]) == 2


def test_bound_violation_exit(tmp_path, monkeypatch, capsys):
    # a model whose declared bound is too small must abort with a state dump
    from zigzag import models

    orig = models.CauchyModel.__init__

    def init(self):
        orig(self)
        self.global_bounds = np.array([0.01])

    monkeypatch.setattr(models.CauchyModel, "__init__", init)
    code = run_cli(tmp_path, ["model=cauchy", "method=zz", "max_time=100", "init=3.0"])
    assert code == 3
    err = capsys.readouterr().err
    assert "bound violation" in err and "coordinate=0" in err


@pytest.mark.parametrize("model,cols", [("gaussian", "x"), ("logistic", "x_1,x_2,y"), ("nonident", "x,y")])
def test_synth(tmp_path, model, cols):
    out = tmp_path / f"{model}.csv"
    assert main(["synth", "--model", model, "--n", "25", "--seed", "3", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == cols and len(lines) == 26
    assert load_csv(out, model).n_data == 25


def test_run_from_dataset(tmp_path):
    data = tmp_path / "d.csv"
    assert main(["synth", "--model", "logistic", "--n", "200", "--seed", "1", "--out", str(data)]) == 0
    assert run_cli(tmp_path, ["model=logistic", "method=zz-ss", f"data={data}", "epochs=5", "samples=200"]) == 0


def test_epoch_budget_honoured(tmp_path):
    assert run_cli(tmp_path, ["model=logistic", "method=zz,zz-hessian,zz-cv", "n=300", "epochs=15",
                              "samples=200"]) == 0
    doc = json.loads((tmp_path / "out" / "metrics.json").read_text())
    for cell in doc["cells"].values():
        assert 15 <= cell["epochs"] <= 16


@pytest.mark.skipif(shutil.which("zigzag") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["zigzag", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "validate" in res.stdout


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "zigzag.cli", "synth", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "--model" in res.stdout
