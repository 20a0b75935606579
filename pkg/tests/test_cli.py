import csv
import json
import time

import numpy as np
import pytest

from eprc.cli import CSV_COLUMNS, RunConfig, main
from eprc.container import deserialize


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    out = d / "m.eprc"
    t = time.perf_counter()
    rc = main(["train", "--arch", "mlp", "--data", "synthetic", "--lambda", "1e-2", "--steps", "2000",
               "--out", str(out), "--metrics", str(d / "m.jsonl")])
    return rc, out, time.perf_counter() - t, d


def test_train_smoke(trained, capsys):
    rc, out, seconds, d = trained
    assert rc == 0
    assert seconds < 60
    art = deserialize(out.read_bytes())
    assert art.spec.name == "mlp"
    record = json.loads((d / "m.eprc.json").read_text())
    assert record["config"]["lam"] == 1e-2 and record["size"]["total_bytes"] == out.stat().st_size
    assert (d / "m.jsonl").read_text().count("\n") >= 2


def test_refuses_to_overwrite(trained, capsys):
    _, out, _, d = trained
    rc = main(["train", "--arch", "mlp", "--data", "synthetic", "--steps", "1", "--out", str(out)])
    assert rc == 2
    assert "--force" in capsys.readouterr().err


def test_eval_matches_training_report(trained, capsys):
    _, out, _, d = trained
    record = json.loads((d / "m.eprc.json").read_text())
    assert main(["eval", str(out), "--data", "synthetic"]) == 0
    text = capsys.readouterr().out
    assert f"{record['error_rate']:.4f}" in text


def test_eval_architecture_mismatch(trained, capsys):
    _, out, _, _ = trained
    assert main(["eval", str(out), "--data", "synthetic", "--arch", "lenet300"]) == 2
    assert "mlp" in capsys.readouterr().err


def test_info_and_decompress(trained, tmp_path, capsys):
    _, out, _, _ = trained
    assert main(["info", str(out)]) == 0
    text = capsys.readouterr().out
    assert "group dense" in text and "ratio" in text
    npz = tmp_path / "p.npz"
    assert main(["decompress", str(out), "--out", str(npz)]) == 0
    params = np.load(npz)
    art = deserialize(out.read_bytes())
    for k, v in art.parameters().items():
        np.testing.assert_array_equal(params[k], v)
    assert main(["decompress", str(out), "--out", str(npz)]) == 2


def test_identical_config_identical_bytes(tmp_path):
    outs = []
    for i in range(2):
        p = tmp_path / f"{i}.eprc"
        assert main(["train", "--arch", "mlp", "--hidden", "8", "--data", "synthetic", "--train-size", "500",
                     "--lambda", "0", "--steps", "50", "--out", str(p)]) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_sweep_csv(tmp_path):
    path = tmp_path / "s.csv"
    rc = main(["sweep", "--arch", "mlp", "--hidden", "8", "--data", "synthetic", "--train-size", "500",
               "--steps", "30", "--lambda", "0,1e-3,0.1", "--csv", str(path)])
    assert rc == 0
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == CSV_COLUMNS
    assert [float(r["lambda"]) for r in rows] == [0, 1e-3, 0.1]


def test_sweep_decoder_comparison(tmp_path):
    path = tmp_path / "cmp.csv"
    rc = main(["sweep", "--arch", "smallconv", "--ell", "25", "--data", "synthetic", "--train-size", "200",
               "--batch-size", "16", "--steps", "3", "--lambda", "1e-4,1e-3", "--csv", str(path),
               "--compare", "scalar,dft"])
    assert rc == 0
    for mode in ("scalar", "dft"):
        rows = list(csv.DictReader((tmp_path / f"cmp-{mode}.csv").open()))
        assert len(rows) == 2 and all(float(r["total_bytes"]) > 0 for r in rows)


def test_config_errors(tmp_path, capsys):
    assert main(["train", "--arch", "vgg", "--out", str(tmp_path / "x")]) == 2
    assert main(["train", "--lambda", "-1", "--out", str(tmp_path / "x")]) == 2
    assert main(["train", "--arch", "smallconv", "--ell", "3", "--out", str(tmp_path / "x")]) == 2
    assert main(["sweep", "--lambda", "1e-3", "--csv", str(tmp_path / "x.csv")]) == 2


def test_missing_data_exit_code(tmp_path):
    rc = main(["train", "--data", "mnist", "--data-dir", str(tmp_path), "--steps", "1",
               "--out", str(tmp_path / "x.eprc")])
    assert rc == 3


def test_corrupt_container_exit_code(tmp_path):
    p = tmp_path / "bad.eprc"
    p.write_bytes(b"nope")
    assert main(["info", str(p)]) == 3


def test_run_config_decoder_targets():
    spec = RunConfig(arch="smallconv", ell=25).validate().model_spec()
    assert spec.group("conv").decoder == "dft" and spec.group("conv").ell == 25
    spec = RunConfig(arch="lenet300", decoder="affine").model_spec()
    assert spec.group("dense").decoder == "affine"
