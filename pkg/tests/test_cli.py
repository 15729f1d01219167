import csv
import json

import numpy as np
import pytest

from qpflow.cli import main

from conftest import DATA


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    assert all(len(r) == len(header) for r in body)
    return header, np.array([[float(x) for x in r] for r in body])


def test_inspect_case14(tmp_path, capsys):
    assert main(["inspect", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "inspect.json").read_text())
    assert (report["N"], report["S"], report["n_qubits"], report["N_pad"]) == (14, 27, 4, 16)
    assert report["C"] == 21
    assert "C=21" in capsys.readouterr().out


def test_inspect_two_bus(tmp_path):
    assert main(["inspect", "--case", str(DATA / "case2.json"), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "inspect.json").read_text())
    assert (report["N"], report["S"]) == (2, 3)


def test_missing_case_exits_2(tmp_path, capsys):
    assert main(["inspect", "--case", str(tmp_path / "nope.m"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_bad_case_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.m"
    bad.write_text("mpc.bus = [1 3 0 0;\n")
    assert main(["inspect", "--case", str(bad), "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_invalid_option_value_exits_2(tmp_path):
    assert main(["solve", "--decay", "2", "--iters", "2", "--instances", "1", "--out", str(tmp_path)]) == 2


def test_solve_outputs(tmp_path, capsys):
    args = ["solve", "--instances", "2", "--iters", "15", "--out", str(tmp_path), "--seed", "3"]
    assert main(args) == 0
    header, body = read_csv(tmp_path / "trace_000.csv")
    assert header == ["iter", "objective", "nmae", "grad_norm", "alpha"]
    assert body.shape == (15, 5)
    header, agg = read_csv(tmp_path / "aggregate.csv")
    assert header == ["iter", "mean_nmae", "std_nmae", "active"]
    assert agg.shape == (15, 4) and np.all(agg[:, 2] >= 0)
    summary = json.loads((tmp_path / "solve_summary.json").read_text())
    assert len(summary["instances"]) == 2
    assert all(r["nr_converged"] for r in summary["instances"])
    assert "mean final NMAE" in capsys.readouterr().out


def test_solve_zero_perturbation_from_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sigma_v": 0.0, "sigma_p_frac": 0.0, "iters": 7, "instances": 1}))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    _, body = read_csv(tmp_path / "trace_000.csv")
    assert len(body) == 7


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iters": 7, "instances": 1}))
    assert main(["solve", "--config", str(cfg), "--iters", "4", "--out", str(tmp_path)]) == 0
    _, body = read_csv(tmp_path / "trace_000.csv")
    assert len(body) == 4


def test_grad_tol_reason_recorded(tmp_path):
    assert main(["solve", "--instances", "1", "--iters", "50", "--grad-tol", "1e9", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "solve_summary.json").read_text())
    assert summary["instances"][0]["reason"] == "grad_tol"
    assert summary["instances"][0]["iterations"] == 1


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    common = ["--instances", "10", "--seed", "2", "--out", str(out)]
    assert main(["train", "--model", "qml", "--iters", "3"] + common) == 0
    assert main(["train", "--model", "dnn", "--iters", "20"] + common) == 0
    return out


def test_train_artifacts(trained):
    qml = json.loads((trained / "qml_model.json").read_text())
    assert qml["model"] == "qml" and len(qml["theta"]) == 52
    dnn = json.loads((trained / "dnn_model.json").read_text())
    assert dnn["model"] == "dnn" and dnn["n_weights"] == 742
    header, body = read_csv(trained / "qml_trace.csv")
    assert header[0] == "iter" and len(body) == 3
    header, body = read_csv(trained / "instances.csv")
    assert len(header) == 27 and body.shape == (10, 27)


def test_train_is_deterministic(trained, tmp_path):
    args = ["train", "--model", "qml", "--iters", "3", "--instances", "10", "--seed", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    assert (tmp_path / "qml_model.json").read_bytes() == (trained / "qml_model.json").read_bytes()


def test_train_divergence_exits_1(tmp_path, capsys):
    args = ["train", "--model", "dnn", "--iters", "50", "--step-size", "1", "--instances", "5", "--out", str(tmp_path)]
    assert main(args) == 1
    assert "diverged" in capsys.readouterr().err


def test_eval_both_models(trained, tmp_path, capsys):
    args = ["eval", "--model", str(trained / "qml_model.json"), "--model", str(trained / "dnn_model.json"),
            "--out", str(tmp_path)]
    assert main(args) == 0
    header, body = read_csv(tmp_path / "eval.csv")
    assert header == ["instance", "qml_nmae", "dnn_nmae"]
    assert body.shape == (2, 3)  # 20 % of 10 instances
    assert "QML better on" in capsys.readouterr().out
    first = (tmp_path / "eval.csv").read_text()
    assert main(args) == 0
    assert (tmp_path / "eval.csv").read_text() == first


def test_eval_single_model(trained, tmp_path):
    assert main(["eval", "--model", str(trained / "qml_model.json"), "--out", str(tmp_path)]) == 0
    header, _ = read_csv(tmp_path / "eval.csv")
    assert header == ["instance", "qml_nmae"]


def test_eval_case_mismatch(trained, tmp_path, capsys):
    args = ["eval", "--model", str(trained / "dnn_model.json"), "--case", str(DATA / "case2.json"),
            "--out", str(tmp_path)]
    assert main(args) == 2
    assert "specifications" in capsys.readouterr().err


def test_eval_bad_artifact(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{not json")
    assert main(["eval", "--model", str(bad), "--out", str(tmp_path)]) == 2
