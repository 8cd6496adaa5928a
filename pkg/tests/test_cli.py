import csv
import json

import numpy as np
import pytest

from tobitl.cli import main

from conftest import noiseless_dataset

SMALL = ["--grid", "0.05,9", "--n-starts", "2", "--no-plots"]


@pytest.fixture()
def exact_files(tmp_path):
    d, beta = noiseless_dataset(n=40, seed=1)
    data = tmp_path / "exact.csv"
    d.to_csv(data)
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps(d.schema().to_dict()))
    return data, schema, beta


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_fit_recovers_exact_fit(exact_files, tmp_path):
    data, schema, beta = exact_files
    out = tmp_path / "fit"
    rc = main(["fit", "--data", str(data), "--schema", str(schema), "--out", str(out),
               "--weight", "trimmed:0.2", "--weight", "winsorized:0.2", "--grid", "0.05,9"])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    for label in ("trimmed:0.2", "winsorized:0.2"):
        est = report["estimates"][label]["estimate"]
        np.testing.assert_allclose(list(est.values()), beta, atol=1e-6)
    assert report["data"]["n"] == 40
    assert report["config"]["grid"]["m"] == 9
    assert "numpy" in report["versions"]
    assert len(_rows(out / "estimates.csv")) == 8
    assert len(_rows(out / "process.csv")) == 9
    assert (out / "process.png").stat().st_size > 0


def test_fit_missing_instrument(tmp_path, exact_files, capsys):
    data, _, _ = exact_files
    schema = tmp_path / "bad.json"
    schema.write_text(json.dumps({"response": "y", "exogenous": ["x1"], "endogenous": "w"}))
    rc = main(["fit", "--data", str(data), "--schema", str(schema), "--out", str(tmp_path)])
    assert rc == 4
    assert "instrument" in capsys.readouterr().err


def test_fit_data_error_exit_code(tmp_path, exact_files):
    _, schema, _ = exact_files
    bad = tmp_path / "neg.csv"
    bad.write_text("y,x1,w,z1\n-1,0,1,2\n1,1,2,3\n2,2,3,1\n1,3,1,1\n2,1,1,0\n")
    assert main(["fit", "--data", str(bad), "--schema", str(schema),
                 "--out", str(tmp_path)]) == 2


def test_fit_numerical_error_exit_code(tmp_path, exact_files):
    _, schema, _ = exact_files
    bad = tmp_path / "flat.csv"
    rows = "\n".join(f"{i % 3},{i},{i * 0.5},1" for i in range(12))
    bad.write_text("y,x1,w,z1\n" + rows + "\n")
    assert main(["fit", "--data", str(bad), "--schema", str(schema),
                 "--out", str(tmp_path)]) == 3


def test_simulate_reproducible(tmp_path):
    args = ["simulate", "--n", "50,100", "--r", "10", "--seed", "3",
            "--weight", "trimmed:0.2", *SMALL]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_text()
    assert a == (tmp_path / "b" / "metrics.csv").read_text()
    rows = _rows(tmp_path / "a" / "metrics.csv")
    assert {r["n"] for r in rows} == {"50", "100"}
    assert len(_rows(tmp_path / "a" / "emse_curves.csv")) == 2
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["config"]["runs"][0]["seed"] == 3


def test_simulate_plot(tmp_path):
    rc = main(["simulate", "--n", "30", "--r", "2", "--seed", "1", "--grid", "0.05,9",
               "--n-starts", "1", "--weight", "trimmed:0.2", "--out", str(tmp_path)])
    assert rc == 0 and (tmp_path / "emse_curves.png").exists()


@pytest.mark.parametrize("extra", [["--r", "0", "--seed", "1"], ["--r", "2"],
                                   ["--seed", "1", "--data", "x.csv"],
                                   ["--seed", "1", "--weight", "bogus:1"],
                                   ["--seed", "1", "--grid", "0.05"]])
def test_simulate_config_errors(extra, tmp_path, capsys):
    assert main(["simulate", "--n", "30", "--out", str(tmp_path), *extra]) == 4
    assert "Traceback" not in capsys.readouterr().err


def test_unknown_flag_exit_code(capsys):
    assert main(["fit", "--bogus"]) == 4
    assert main([]) == 4


def test_bootstrap_identity_zero(exact_files, tmp_path):
    data, schema, _ = exact_files
    rc = main(["bootstrap", "--data", str(data), "--schema", str(schema), "--b", "1",
               "--seed", "0", "--identity-resample", "--weight", "trimmed:0.2",
               "--out", str(tmp_path), *SMALL])
    assert rc == 0
    out = json.loads((tmp_path / "brmse.json").read_text())
    assert all(v == 0.0 for v in out["results"][0]["brmse"].values())
    assert len(_rows(tmp_path / "replicates.csv")) == 1


def test_bootstrap_errors(exact_files, tmp_path):
    data, schema, _ = exact_files
    base = ["bootstrap", "--data", str(data), "--schema", str(schema), "--b", "2",
            "--out", str(tmp_path)]
    assert main(base + ["--seed", "0", "--scheme", "wild"]) == 4
    assert main(base) == 4
    assert main(base + ["--seed", "0", "--scheme", "moving_block", "--block-len", "0"]) == 4


def test_threads_env(exact_files, tmp_path, monkeypatch):
    data, schema, _ = exact_files
    monkeypatch.setenv("TOBITL_THREADS", "two")
    rc = main(["bootstrap", "--data", str(data), "--schema", str(schema), "--b", "2",
               "--seed", "0", "--out", str(tmp_path)])
    assert rc == 4
