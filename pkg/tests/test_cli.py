import json
import subprocess
import sys

import numpy as np
import pytest

from ppln import cli, fit, io
from ppln.plf import SegmentSet
from ppln.samples import SampleSet


def _run(argv):
    return cli.main(argv)


def test_synth_writes_truth_samples_and_manifest(tmp_path):
    assert _run(["synth", "--segments", "3", "--samples", "50", "--noise", "0.1", "--seed", "3",
                 "--out", str(tmp_path)]) == 0
    truth = SegmentSet.from_json((tmp_path / "truth.json").read_text())
    samples = SampleSet.from_csv((tmp_path / "samples.csv").read_text())
    assert truth.n == 3 and len(samples) == 50
    assert np.max(np.abs(samples.vs - truth(samples.taus))) <= 0.1
    manifest = io.read_json(tmp_path / "manifest.json")
    assert manifest["command"] == "synth" and manifest["seed"] == 3
    assert manifest["config"]["segments"] == 3
    assert set(manifest["outputs"]) == {"truth.json", "samples.csv"}
    assert manifest["outputs"]["samples.csv"] == io.sha256(tmp_path / "samples.csv")


def test_flags_override_config_over_defaults(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"segments": 4, "samples": 30}))
    assert _run(["synth", "--config", str(cfg), "--samples", "20", "--out", str(tmp_path / "o")]) == 0
    m = io.read_json(tmp_path / "o" / "manifest.json")["config"]
    assert m["segments"] == 4 and m["samples"] == 20 and m["noise"] == 0.0


def test_usage_errors_exit_2(tmp_path, capsys):
    assert _run(["synth", "--segments", "0", "--out", str(tmp_path)]) == 2
    assert "--segments" in capsys.readouterr().err
    assert _run(["fit", "--out", str(tmp_path)]) == 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert _run(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert _run(["synth", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        _run(["gradcheck", "--module", "bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        _run(["nonsense"])
    assert exc.value.code == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("tau,v\n0,1\nx,2\n1,3\n")
    assert _run(["fit", "--input", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "line 3" in capsys.readouterr().err
    assert _run(["fit", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 1


def test_fit_outputs(tmp_path):
    assert _run(["synth", "--segments", "2", "--samples", "60", "--continuous", "on", "--seed", "1",
                 "--out", str(tmp_path / "s")]) == 0
    assert _run(["fit", "--input", str(tmp_path / "s" / "samples.csv"), "--truth", str(tmp_path / "s" / "truth.json"),
                 "--t-max", "160", "--max-inner-iters", "300", "--out", str(tmp_path / "f")]) == 0
    report = io.read_json(tmp_path / "f" / "report.json")
    assert {"final_theta", "loss_trace", "T_trace", "endpoint_trace", "sup_error", "iterations"} <= set(report)
    theta = SegmentSet.from_json((tmp_path / "f" / "theta.json").read_text())
    truth = SegmentSet.from_json((tmp_path / "s" / "truth.json").read_text())
    assert fit.sup_error(theta, truth) == pytest.approx(report["sup_error"])
    rows = (tmp_path / "f" / "curve.csv").read_text().splitlines()
    assert rows[0] == "tau,fitted,truth" and len(rows) == 1 + cli.CURVE_POINTS


def test_frozen_endpoint_fit_from_the_cli(tmp_path):
    assert _run(["synth", "--samples", "60", "--noise", "0.02", "--out", str(tmp_path / "s")]) == 0
    assert _run(["fit", "--input", str(tmp_path / "s" / "samples.csv"), "--normalization", "off",
                 "--smoothing", "off", "--init", "uniform", "--t-max", "40", "--max-inner-iters", "50",
                 "--out", str(tmp_path / "f")]) == 0
    report = io.read_json(tmp_path / "f" / "report.json")
    assert report["endpoint_moved"] is False
    assert all(g == 0.0 for g in report["endpoint_grad_trace"])


def test_train_then_coeffs(tmp_path):
    assert _run(["train", "--samples", "120", "--epochs", "2", "--out", str(tmp_path / "t")]) == 0
    report = io.read_json(tmp_path / "t" / "report.json")
    assert len(report["train_loss"]) == 3
    assert _run(["coeffs", "--params", str(tmp_path / "t" / "params.json"), "--count", "4",
                 "--out", str(tmp_path / "c")]) == 0
    assert len(list((tmp_path / "c").glob("curve_*.csv"))) == 4
    # bias-free heads map a zero input to a flat zero curve
    assert _run(["train", "--samples", "60", "--epochs", "1", "--bias", "off", "--out", str(tmp_path / "nb")]) == 0
    assert _run(["coeffs", "--params", str(tmp_path / "nb" / "params.json"), "--zero", "--count", "1",
                 "--out", str(tmp_path / "z")]) == 0
    coeffs = io.read_json(tmp_path / "z" / "coefficients.json")
    rows = np.loadtxt(tmp_path / "z" / "curve_000.csv", delimiter=",", skiprows=1)
    assert coeffs and np.all(rows[:, 1:] == 0.0)


def test_ablate_and_gradcheck(tmp_path):
    assert _run(["ablate", "--task", "constant", "--samples", "80", "--epochs", "1", "--axes", "n",
                 "--n-values", "2,3", "--out", str(tmp_path / "a")]) == 0
    rows = (tmp_path / "a" / "ablation.csv").read_text().splitlines()
    assert len(rows) == 3
    assert _run(["gradcheck", "--trials", "2", "--module", "plf", "--out", str(tmp_path / "g")]) == 0
    checks = io.read_json(tmp_path / "g" / "gradcheck.json")
    assert checks


def test_default_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert _run(["synth", "--samples", "10"]) == 0
    assert (tmp_path / "env" / "synth" / "manifest.json").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ppln", "synth", "--samples", "10", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "ppln", "synth", "--samples", "1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "ppln", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
