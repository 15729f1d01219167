"""Command-line entry point: ``qpflow {inspect,solve,train,eval}``.

Every option can also come from a JSON file given with ``--config``; flags
win over the file, which wins over the built-in defaults.  Outputs are CSV
and JSON files under ``--out``.  Exit status is 0 on success, 1 on numerical
failure (divergence, non-finite values) and 2 on bad input.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baseline_dnn import DivergenceError, DnnModel, MlpConfig, evaluate_dnn, train_dnn
from .case_ingest import CaseError, builtin_case, load_case
from .grid_model import batch_to_csv, build_specs, nmae, sample_instances, solve_newton_raphson
from .solver import QpfProblem, TrainConfig, evaluate, solve_single, train_qml
from .vqc import AnsatzConfig, EmbeddingConfig, QmlModel, fit_flat_init
from .xbm import decompose

log = logging.getLogger("qpflow")

TRAIN_FRACTION = 0.8

# built-in defaults per command; ``alpha0=None`` means N, ``mu_alpha=None`` follows the step size
DEFAULTS = {
    "common": {"case": "case14", "seed": 0, "out": "qpflow_out", "shots": 0, "batch_size": 0,
               "grad_tol": 0.01, "sigma_v": 0.05, "sigma_p_frac": 0.2, "alpha0": None, "mu_alpha": None,
               "flat_restarts": 10},
    "solve": {"layers": 3, "step_size": 5e-5, "decay": 1.0, "iters": 20000, "instances": 10},
    "train_qml": {"layers": 6, "step_size": 5e-5, "decay": 0.9995, "iters": 10000, "instances": 100,
                  "repetitions": 1},
    "train_dnn": {"hidden": [10, 10], "step_size": 5e-5, "decay": 0.9999, "iters": 20000, "instances": 100},
    "eval": {"instances": 100},
    "inspect": {},
}


class InputError(Exception):
    """Bad user input; reported with exit status 2."""


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", help="MATPOWER .m or JSON case file, or a built-in name (default case14)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="JSON file with option defaults")
    common.add_argument("--shots", type=int, help="measurement shots per group (0 = exact)")
    common.add_argument("-v", "--verbose", action="store_true")

    opt = argparse.ArgumentParser(add_help=False)
    opt.add_argument("--layers", type=int)
    opt.add_argument("--step-size", type=float, dest="step_size")
    opt.add_argument("--decay", type=float)
    opt.add_argument("--iters", type=int)
    opt.add_argument("--grad-tol", type=float, dest="grad_tol")
    opt.add_argument("--batch-size", type=int, dest="batch_size")

    parser = argparse.ArgumentParser(prog="qpflow", description="AC power flow with a simulated variational circuit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("inspect", parents=[common], help="summarize a case and its measurement groups")
    p = sub.add_parser("solve", parents=[common, opt], help="single-instance fits over perturbed instances")
    p.add_argument("--instances", type=int, help="number of perturbed instances K")
    p = sub.add_parser("train", parents=[common, opt], help="train a QML or DNN model on an 80/20 split")
    p.add_argument("--model", choices=("qml", "dnn"), required=True)
    p.add_argument("--instances", type=int, help="total instances before the 80/20 split")
    p = sub.add_parser("eval", parents=[common], help="compare trained models on the held-out instances")
    p.add_argument("--model", action="append", required=True, help="model artifact JSON (repeatable)")
    p.add_argument("--instances", type=int)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    key = args.command if args.command != "train" else f"train_{args.model}"
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[key])
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise InputError("config file must hold a JSON object")
        doc = {k.replace("-", "_"): v for k, v in doc.items()}
        cfg.update(doc)
        explicit = set(doc)
    else:
        explicit = set()
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "config", "verbose"):
            cfg[k] = v
            explicit.add(k)
    cfg["_explicit"] = sorted(explicit)
    return cfg


def _load(name: str):
    path = Path(name)
    try:
        if path.suffix in (".m", ".json") or path.exists():
            return load_case(path)
        return builtin_case(name)
    except FileNotFoundError as exc:
        raise InputError(f"case file not found: {name}") from exc


def _train_config(cfg: dict) -> TrainConfig:
    mu = float(cfg["step_size"])
    try:
        return TrainConfig(mu_theta=mu, mu_alpha=mu if cfg["mu_alpha"] is None else float(cfg["mu_alpha"]),
                           decay=float(cfg["decay"]), max_iters=int(cfg["iters"]),
                           grad_tol=float(cfg["grad_tol"]), batch_size=int(cfg["batch_size"]),
                           seed=int(cfg["seed"]))
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _instances(specs, cfg: dict, count: int):
    if count < 1:
        raise InputError("--instances must be positive")
    batch = sample_instances(specs, count, seed=int(cfg["seed"]), sigma_v=float(cfg["sigma_v"]),
                             sigma_p_frac=float(cfg["sigma_p_frac"]))
    if batch.resampled:
        log.warning("resampled %d NR-infeasible instance(s)", batch.resampled)
    return batch


def _alpha0(cfg: dict, n: int) -> float:
    return float(n if cfg["alpha0"] is None else cfg["alpha0"])


# ---------------------------------------------------------------------------


def cmd_inspect(cfg: dict) -> int:
    case = _load(cfg["case"])
    specs = build_specs(case)
    decomp = decompose(specs)
    report = {
        "N": case.n_buses,
        "S": specs.s_count,
        "bus_types": case.type_counts(),
        "n_qubits": specs.n_qubits,
        "N_pad": specs.n_pad,
        "C": decomp.c,
        "groups": decomp.summary()["groups"],
    }
    print(f"buses N={report['N']}  specs S={report['S']}  qubits={report['n_qubits']}  N_pad={report['N_pad']}")
    print("bus types: " + ", ".join(f"{k}={v}" for k, v in report["bus_types"].items()))
    print(f"XBM groups C={decomp.c}")
    for g in report["groups"]:
        print(f"  offset {g['offset']:>3} {g['part']:<8} gates={len(g['gates'])} max nnz={max(g['nnz'])}")
    _write(Path(cfg["out"]) / "inspect.json", json.dumps(report, indent=1))
    return 0


def _aggregate(traces) -> str:
    """Per-iteration mean and standard deviation of NMAE; finished runs hold their last value."""
    length = max(len(t) for t in traces)
    cols = []
    for t in traces:
        x = t.column("nmae")
        cols.append(np.concatenate([x, np.full(length - len(x), x[-1])]))
    arr = np.array(cols)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "mean_nmae", "std_nmae", "active"])
    active = np.array([[k < len(t) for t in traces] for k in range(length)]).sum(axis=1)
    for k in range(length):
        w.writerow([k, repr(float(arr[:, k].mean())), repr(float(arr[:, k].std())), int(active[k])])
    return buf.getvalue()


def cmd_solve(cfg: dict) -> int:
    case = _load(cfg["case"])
    specs = build_specs(case)
    decomp = decompose(specs)
    problem = QpfProblem(specs, decomp, AnsatzConfig(specs.n_qubits, int(cfg["layers"])),
                         shots=int(cfg["shots"]), seed=int(cfg["seed"]))
    train = _train_config(cfg)
    batch = _instances(specs, cfg, int(cfg["instances"]))
    theta0, fid = fit_flat_init(problem.ansatz, specs.n_buses, seed=int(cfg["seed"]),
                                restarts=int(cfg["flat_restarts"]))
    log.info("flat-profile fidelity %.4f", fid)
    out = Path(cfg["out"])
    traces, rows = [], []
    for k, b in enumerate(batch.instances):
        res = solve_single(problem, b, train, theta0=theta0, alpha0=_alpha0(cfg, specs.n_buses))
        if not np.isfinite(res.trace.column("objective")).all():
            print(f"instance {k}: objective became non-finite", file=sys.stderr)
            return 1
        _write(out / f"trace_{k:03d}.csv", res.trace.to_csv())
        traces.append(res.trace)
        v = res.voltage(problem)
        nr = solve_newton_raphson(specs, b)
        rows.append({
            "instance": k,
            "final_nmae": float(res.trace.records[-1]["nmae"]),
            "voltage_nmae": nmae(specs.values(v), b),
            "alpha": res.alpha,
            "iterations": len(res.trace),
            "reason": res.trace.reason,
            "nr_converged": nr.converged,
            "nr_mismatch": nr.mismatch,
        })
        print(f"instance {k}: NMAE {rows[-1]['final_nmae']:.4f} after {len(res.trace)} iterations ({res.trace.reason})")
    _write(out / "aggregate.csv", _aggregate(traces))
    finals = np.array([r["final_nmae"] for r in rows])
    summary = {"instances": rows, "mean_final_nmae": float(finals.mean()), "std_final_nmae": float(finals.std()),
               "flat_fidelity": fid, "config": cfg}
    _write(out / "solve_summary.json", json.dumps(summary, indent=1))
    print(f"mean final NMAE {finals.mean():.4f} (std {finals.std():.4f}) over {len(rows)} instances")
    return 0


def _split(batch):
    n_train = int(round(TRAIN_FRACTION * len(batch)))
    if not 0 < n_train < len(batch):
        raise InputError("need at least two instances for a train/test split")
    return batch.split(n_train)


def cmd_train(cfg: dict) -> int:
    case = _load(cfg["case"])
    specs = build_specs(case)
    batch = _instances(specs, cfg, int(cfg["instances"]))
    train_set, test_set = _split(batch)
    train = _train_config(cfg)
    out = Path(cfg["out"])
    _write(out / "instances.csv", batch_to_csv(batch, specs))
    meta = {"seed": int(cfg["seed"]), "instances": int(cfg["instances"]), "case": str(cfg["case"]),
            "sigma_v": float(cfg["sigma_v"]), "sigma_p_frac": float(cfg["sigma_p_frac"]),
            "n_train": len(train_set), "S": specs.s_count}
    if cfg["model"] == "qml":
        decomp = decompose(specs)
        problem = QpfProblem(specs, decomp, AnsatzConfig(specs.n_qubits, int(cfg["layers"])),
                             EmbeddingConfig(specs.s_count, specs.n_qubits, int(cfg["repetitions"])),
                             shots=int(cfg["shots"]), seed=int(cfg["seed"]))
        theta0, _ = fit_flat_init(problem.ansatz, specs.n_buses, seed=int(cfg["seed"]),
                                  restarts=int(cfg["flat_restarts"]))
        model, trace = train_qml(problem, train_set.instances, train, theta0=theta0,
                                 alpha0=_alpha0(cfg, specs.n_buses))
        if not np.isfinite(trace.column("objective")).all():
            print("training diverged: objective became non-finite", file=sys.stderr)
            return 1
        model.meta.update(meta)
        model.meta["n_weights"] = len(model.theta)
        text = model.to_json()
        train_err = evaluate(model, decomp, train_set.instances)
    else:
        mlp = MlpConfig(specs.s_count, tuple(int(h) for h in cfg["hidden"]), 2 * specs.n_pad)
        try:
            model, trace = train_dnn(mlp, specs, train_set.instances, train)
        except DivergenceError as exc:
            print(f"training diverged: {exc}", file=sys.stderr)
            return 1
        model.meta.update(meta)
        text = model.to_json()
        train_err = evaluate_dnn(model, specs, train_set.instances)
    _write(out / f"{cfg['model']}_model.json", text)
    _write(out / f"{cfg['model']}_trace.csv", trace.to_csv())
    print(f"{cfg['model']}: {model.meta['n_weights']} weights, {len(trace)} iterations ({trace.reason}), "
          f"train NMAE {train_err.mean():.4f}")
    return 0


def _load_artifact(path: str):
    try:
        text = Path(path).read_text()
        kind = json.loads(text).get("model")
    except (OSError, json.JSONDecodeError, AttributeError) as exc:
        raise InputError(f"cannot read model artifact {path}: {exc}") from exc
    if kind == "qml":
        return "qml", QmlModel.from_json(text)
    if kind == "dnn":
        return "dnn", DnnModel.from_json(text)
    raise InputError(f"{path}: unknown model kind {kind!r}")


def cmd_eval(cfg: dict) -> int:
    models = dict(_load_artifact(p) for p in cfg["model"])
    case = _load(cfg["case"])
    specs = build_specs(case)
    for kind, m in models.items():
        s_len = m.embedding.s_len if kind == "qml" else m.config.input_dim
        if s_len != specs.s_count:
            raise InputError(f"{kind} model expects {s_len} specifications, case has {specs.s_count}")
        # regenerate the held-out split the model was trained beside, unless told otherwise
        for key in ("seed", "instances", "sigma_v", "sigma_p_frac"):
            if key in m.meta and key not in cfg["_explicit"]:
                cfg[key] = m.meta[key]
    _, test_set = _split(_instances(specs, cfg, int(cfg["instances"])))
    cols = {}
    if "qml" in models:
        cols["qml_nmae"] = evaluate(models["qml"], decompose(specs), test_set.instances,
                                    shots=int(cfg["shots"]), seed=int(cfg["seed"]))
    if "dnn" in models:
        cols["dnn_nmae"] = evaluate_dnn(models["dnn"], specs, test_set.instances)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance"] + list(cols))
    for k in range(len(test_set)):
        w.writerow([k] + [repr(float(c[k])) for c in cols.values()])
    _write(Path(cfg["out"]) / "eval.csv", buf.getvalue())
    for name, c in cols.items():
        print(f"{name}: mean {c.mean():.4f}  median {np.median(c):.4f}")
    if len(cols) == 2:
        wins = int(np.sum(cols["qml_nmae"] < cols["dnn_nmae"]))
        print(f"QML better on {wins}/{len(test_set)}")
    return 0


COMMANDS = {"inspect": cmd_inspect, "solve": cmd_solve, "train": cmd_train, "eval": cmd_eval}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](resolve(args))
    except (InputError, CaseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
