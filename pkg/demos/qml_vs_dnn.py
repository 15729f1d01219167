"""Train the data-embedded circuit and the small MLP on the same instances.

Usage: python demos/qml_vs_dnn.py [qml_iterations] [dnn_iterations] [seed]

Both models minimise the physics residual of their predicted voltages over 80
training instances and are scored on 20 held-out ones.  The defaults are short
(a couple of minutes); the acceptance suite runs the full-length version.
"""
import sys

import numpy as np

from qpflow.baseline_dnn import MlpConfig, evaluate_dnn, train_dnn
from qpflow.case_ingest import builtin_case
from qpflow.grid_model import build_specs, sample_instances
from qpflow.solver import QpfProblem, TrainConfig, evaluate, train_qml
from qpflow.vqc import AnsatzConfig, EmbeddingConfig, fit_flat_init
from qpflow.xbm import decompose

qml_iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
dnn_iters = int(sys.argv[2]) if len(sys.argv) > 2 else 5000
seed = int(sys.argv[3]) if len(sys.argv) > 3 else 0

specs = build_specs(builtin_case("case14"))
decomp = decompose(specs)
train, test = sample_instances(specs, 100, seed=seed).split(80)

problem = QpfProblem(specs, decomp, AnsatzConfig(4, 6), EmbeddingConfig(specs.s_count, 4), seed=seed)
theta0, _ = fit_flat_init(problem.ansatz, specs.n_buses, seed=seed)
qml, qml_trace = train_qml(problem, train.instances, TrainConfig(decay=0.9995, max_iters=qml_iters, seed=seed),
                           theta0=theta0, alpha0=float(specs.n_buses))
dnn, dnn_trace = train_dnn(MlpConfig(specs.s_count), specs, train.instances,
                           TrainConfig(decay=0.9999, max_iters=dnn_iters, seed=seed))

for name, trace in (("QML", qml_trace), ("DNN", dnn_trace)):
    curve = trace.column("nmae")
    marks = np.linspace(0, len(curve) - 1, 6).astype(int)
    print(f"{name} training NMAE: " + "  ".join(f"{curve[k]:.3f}" for k in marks))

q_err = evaluate(qml, decomp, test.instances)
d_err = evaluate_dnn(dnn, specs, test.instances)
print(f"test NMAE  QML mean {q_err.mean():.3f}  DNN mean {d_err.mean():.3f}  (QML alpha {qml.alpha:.3g})")
print(f"QML better on {int(np.sum(q_err < d_err))}/{len(test)} test instances")
