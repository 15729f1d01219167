"""Gradient-descent solvers for the variational power-flow fit.

The model voltage is ``v = sqrt(alpha) psi(theta[, b])`` and every specification
is predicted as ``alpha F_s`` with ``F_s = <psi|H_s|psi>``.  The least-squares
objective is assembled from two measurable expectations::

    f = alpha^2 Gt - 2 alpha G + sum_s b_s^2
    G  = <psi| sum_s b_s H_s |psi>          (one pass over the XBM groups)
    Gt = <psi (x) psi| sum_s H_s (x) H_s |psi (x) psi>   (two replicas)

Weight gradients come from the parameter-shift rule: ``dG`` shifts the circuit
directly, ``dGt`` shifts one replica and doubles the result (the quartic
observable is symmetric under swapping replicas).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .grid_model import SpecSet, nmae
from .qsim import CircuitSpec, Slot, StateVector, run_circuit_batch, shifted_unitaries
from .vqc import (AnsatzConfig, EmbeddingConfig, Normalizer, QmlModel, build_ansatz, build_embedding,
                  fit_flat_init, normalize_data, pad_data, psr_shifts)
from .xbm import XbmDecomposition, batch_expectations, measure_G, measure_G_tilde

TRACE_FIELDS = ("iter", "objective", "nmae", "grad_norm", "alpha")


@dataclass
class QpfProblem:
    specs: SpecSet
    decomp: XbmDecomposition
    ansatz_cfg: AnsatzConfig
    embedding_cfg: EmbeddingConfig | None = None
    shots: int = 0  # 0 = exact expectations
    seed: int = 0

    @cached_property
    def ansatz(self) -> CircuitSpec:
        return build_ansatz(self.ansatz_cfg)

    @cached_property
    def embedding(self) -> CircuitSpec | None:
        return None if self.embedding_cfg is None else build_embedding(self.embedding_cfg)

    @cached_property
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    @property
    def n_buses(self) -> int:
        return self.specs.n_buses

    def embed(self, data: np.ndarray | None) -> np.ndarray | None:
        """Initial states ``W(b)|0>`` for (already normalized) data rows, or None."""
        if self.embedding is None or data is None:
            return None
        data = np.atleast_2d(pad_data(data, self.embedding_cfg))
        return run_circuit_batch(self.embedding, data=data)

    def states(self, thetas: np.ndarray, data: np.ndarray | None = None) -> np.ndarray:
        """Amplitudes for rows of weights (B, P), sharing one data vector."""
        init = self.embed(data)
        return run_circuit_batch(self.ansatz, weights=thetas, initial=None if init is None else init[0])

    def expectations(self, amps: np.ndarray) -> np.ndarray:
        return batch_expectations(self.decomp, amps, self.shots, self.rng)


@dataclass
class TrainConfig:
    mu_theta: float = 5e-5
    mu_alpha: float = 5e-5
    decay: float = 1.0
    max_iters: int = 20000
    grad_tol: float = 0.01
    alpha_cap: float | None = None  # None: 1.1**2 * N
    batch_size: int = 0  # 0: full batch
    seed: int = 0
    quartic_grad: str = "replica"  # or "chain"

    def __post_init__(self):
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.alpha_cap is not None and not self.alpha_cap > 0:
            raise ValueError("alpha_cap must be positive")
        if self.quartic_grad not in ("replica", "chain"):
            raise ValueError("quartic_grad must be 'replica' or 'chain'")

    def cap(self, n_buses: int) -> float:
        return 1.1 ** 2 * n_buses if self.alpha_cap is None else self.alpha_cap


@dataclass
class TrainTrace:
    records: list[dict] = field(default_factory=list)
    reason: str = ""

    def append(self, **rec):
        if self.records and rec["iter"] <= self.records[-1]["iter"]:
            raise ValueError("trace iterations must increase")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for r in self.records:
            writer.writerow([r["iter"]] + [repr(float(r[k])) for k in TRACE_FIELDS[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainTrace":
        rows = list(csv.DictReader(io.StringIO(text)))
        trace = cls()
        for r in rows:
            trace.append(iter=int(r["iter"]), **{k: float(r[k]) for k in TRACE_FIELDS[1:]})
        return trace


def _check_single_use(circ: CircuitSpec) -> None:
    seen = set()
    for g in circ.gates:
        if isinstance(g.param, Slot) and g.param.source == "weight":
            if g.param.index in seen:
                raise ValueError(f"weight {g.param.index} feeds several gates; shift rule needs one")
            seen.add(g.param.index)


# ---------------------------------------------------------------------------
# single-point API (protocol-level measurements)


def _state(problem: QpfProblem, theta, data=None) -> StateVector:
    amps = problem.states(np.asarray(theta, dtype=float)[None, :], data)[0]
    return StateVector(amps, problem.ansatz.n_qubits)


def objective(problem: QpfProblem, theta, alpha: float, b, data=None) -> float:
    """``alpha^2 Gt - 2 alpha G + ||b||^2`` with G and Gt measured group by group."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    b = np.asarray(b, dtype=float)
    psi = _state(problem, theta, data)
    rng = problem.rng
    g = measure_G(psi, problem.decomp, b, problem.shots, rng)
    gt = measure_G_tilde(psi, problem.decomp, shots=problem.shots, seed=rng)
    return alpha ** 2 * gt - 2 * alpha * g + float(b @ b)


def grad_alpha(problem: QpfProblem, theta, alpha: float, b, data=None) -> float:
    b = np.asarray(b, dtype=float)
    psi = _state(problem, theta, data)
    rng = problem.rng
    g = measure_G(psi, problem.decomp, b, problem.shots, rng)
    gt = measure_G_tilde(psi, problem.decomp, shots=problem.shots, seed=rng)
    return 2 * alpha * gt - 2 * g


def psr_grad_theta(problem: QpfProblem, theta, alpha: float, b, data=None, literal: bool = False,
                   quartic_grad: str = "replica") -> np.ndarray:
    """Weight gradient of the objective from ``2P`` shifted circuit evaluations.

    ``literal=True`` measures every shifted term through the group-by-group and
    two-replica protocol; the default evaluates the same group measurements in
    one vectorized batch.
    """
    _check_single_use(problem.ansatz)
    theta = np.asarray(theta, dtype=float)
    b = np.asarray(b, dtype=float)
    p = len(theta)
    if not literal:
        _, grads = _instance_terms(problem, theta, alpha, b[None, :],
                                   None if data is None else np.atleast_2d(data), quartic_grad)
        return grads["theta"][0]
    rng = problem.rng
    n = problem.ansatz.n_qubits
    amps = problem.states(psr_shifts(theta), data)
    psi = StateVector(amps[0], n)
    d_g = np.empty(p)
    d_gt = np.empty(p)
    for k in range(p):
        plus, minus = StateVector(amps[1 + k], n), StateVector(amps[1 + p + k], n)
        d_g[k] = 0.5 * (measure_G(plus, problem.decomp, b, problem.shots, rng)
                        - measure_G(minus, problem.decomp, b, problem.shots, rng))
        d_gt[k] = (measure_G_tilde(plus, problem.decomp, other=psi, shots=problem.shots, seed=rng)
                   - measure_G_tilde(minus, problem.decomp, other=psi, shots=problem.shots, seed=rng))
    return alpha ** 2 * d_gt - 2 * alpha * d_g


# ---------------------------------------------------------------------------
# vectorized per-instance terms


def _instance_terms(problem: QpfProblem, theta: np.ndarray, alpha: float, bs: np.ndarray,
                    data: np.ndarray | None, quartic_grad: str = "replica", init: np.ndarray | None = None):
    """Objective pieces and gradients for each instance row of ``bs``.

    ``init`` may carry precomputed embedded states in place of ``data``.
    Returns ``(values, grads)`` dicts of per-instance arrays.
    """
    t_count, _ = bs.shape
    p = len(theta)
    # all 2P+1 shifted circuits as dense unitaries, shared by every instance
    mats = shifted_unitaries(problem.ansatz, theta)
    rows, dim = mats.shape[:2]
    if init is None:
        init = problem.embed(data)
    if init is None:
        amps = np.broadcast_to(mats[:, :, 0], (t_count, rows, dim)).reshape(-1, dim)
    else:
        amps = (init @ mats.reshape(rows * dim, dim).T).reshape(-1, dim)
    f_all = problem.expectations(amps).reshape(t_count, rows, -1)
    f0, fp, fm = f_all[:, 0], f_all[:, 1:p + 1], f_all[:, p + 1:]
    if problem.shots > 0:
        # independent second replica for the quartic terms
        f0_b = problem.expectations(amps.reshape(t_count, rows, -1)[:, 0]).reshape(t_count, -1)
    else:
        f0_b = f0
    g0 = np.einsum("ts,ts->t", f0, bs)
    gt0 = np.einsum("ts,ts->t", f0, f0_b)
    d_g = 0.5 * np.einsum("tps,ts->tp", fp - fm, bs)
    if quartic_grad == "replica":
        # shift replica one, hold replica two, double
        d_gt = 2 * 0.5 * np.einsum("tps,ts->tp", fp - fm, f0_b)
    else:
        d_gt = np.einsum("ts,tps->tp", 2 * f0, 0.5 * (fp - fm))
    values = {
        "f": alpha ** 2 * gt0 - 2 * alpha * g0 + np.einsum("ts,ts->t", bs, bs),
        "G": g0,
        "Gt": gt0,
        "F": f0,
    }
    grads = {
        "theta": alpha ** 2 * d_gt - 2 * alpha * d_g[:, :],
        "alpha": 2 * alpha * gt0 - 2 * g0,
    }
    return values, grads


@dataclass
class SolveResult:
    theta: np.ndarray
    alpha: float
    trace: TrainTrace
    converged: bool

    def voltage(self, problem: QpfProblem, data=None) -> np.ndarray:
        """Bus voltages ``sqrt(alpha) psi_1``, rotated so the slack angle is zero."""
        psi = problem.states(self.theta[None, :], data)[0][: problem.n_buses]
        v = math.sqrt(self.alpha) * psi
        slack = problem.specs.slack_position()
        return v * np.exp(-1j * np.angle(v[slack]))


def _descend(problem: QpfProblem, bs: np.ndarray, data: np.ndarray | None, cfg: TrainConfig,
             theta: np.ndarray, alpha: float, trace: TrainTrace):
    _check_single_use(problem.ansatz)
    cap = cfg.cap(problem.n_buses)
    alpha = min(max(alpha, 0.0), cap)
    rng = np.random.default_rng(cfg.seed)
    t_count = len(bs)
    full = cfg.batch_size <= 0 or cfg.batch_size >= t_count
    init_all = problem.embed(data)
    best = (math.inf, theta.copy(), alpha)
    converged = False
    trace.reason = "max_iters"
    for k in range(cfg.max_iters):
        idx = np.arange(t_count) if full else rng.integers(0, t_count, cfg.batch_size)
        vals, grads = _instance_terms(problem, theta, alpha, bs[idx], None, cfg.quartic_grad,
                                      None if init_all is None else init_all[idx])
        g_theta = grads["theta"].mean(axis=0)
        g_alpha = float(grads["alpha"].mean())
        obj = float(vals["f"].mean())
        err = float(np.mean([nmae(alpha * f, b) for f, b in zip(vals["F"], bs[idx])]))
        norm = float(np.sqrt(g_theta @ g_theta + g_alpha ** 2))
        trace.append(iter=k, objective=obj, nmae=err, grad_norm=norm, alpha=alpha)
        if not np.isfinite(obj):
            trace.reason = "diverged"
            break
        if obj < best[0]:
            best = (obj, theta.copy(), alpha)
        if norm < cfg.grad_tol:
            converged = True
            trace.reason = "grad_tol"
            break
        scale = cfg.decay ** k
        theta = theta - cfg.mu_theta * scale * g_theta
        alpha = min(max(alpha - cfg.mu_alpha * scale * g_alpha, 0.0), cap)
    if not converged:
        _, theta, alpha = best
    return theta, alpha, converged


def initial_point(problem: QpfProblem, seed: int = 0) -> tuple[np.ndarray, float]:
    """Flat-profile weights and ``alpha = sqrt(N)``."""
    theta, _ = fit_flat_init(problem.ansatz, problem.n_buses, seed=seed)
    return theta, math.sqrt(problem.n_buses)


def solve_single(problem: QpfProblem, b, cfg: TrainConfig, theta0=None, alpha0: float | None = None,
                 data=None) -> SolveResult:
    """Fit one PF instance by projected gradient descent on (theta, alpha)."""
    if theta0 is None or alpha0 is None:
        t0, a0 = initial_point(problem, cfg.seed)
        theta0 = t0 if theta0 is None else theta0
        alpha0 = a0 if alpha0 is None else alpha0
    bs = np.atleast_2d(np.asarray(b, dtype=float))
    data = None if data is None else np.atleast_2d(data)
    trace = TrainTrace()
    theta, alpha, ok = _descend(problem, bs, data, cfg, np.array(theta0, dtype=float), float(alpha0), trace)
    return SolveResult(theta, alpha, trace, ok)


def train_qml(problem: QpfProblem, instances: np.ndarray, cfg: TrainConfig, theta0=None,
              alpha0: float | None = None, normalizer: Normalizer | None = None) -> tuple[QmlModel, TrainTrace]:
    """Fit one set of weights to many PF instances embedded as circuit inputs.

    Each instance contributes its own embedding and its own specification
    values; per-instance gradients are averaged over the (mini-)batch.
    """
    if problem.embedding_cfg is None:
        raise ValueError("training needs a data-embedding block")
    instances = np.asarray(instances, dtype=float)
    if normalizer is None:
        data, normalizer = normalize_data(instances)
    else:
        data = normalizer(instances)
    if theta0 is None or alpha0 is None:
        t0, a0 = initial_point(problem, cfg.seed)
        theta0 = t0 if theta0 is None else theta0
        alpha0 = a0 if alpha0 is None else alpha0
    trace = TrainTrace()
    theta, alpha, ok = _descend(problem, instances, data, cfg, np.array(theta0, dtype=float), float(alpha0), trace)
    model = QmlModel(problem.ansatz_cfg, problem.embedding_cfg, normalizer, theta, alpha,
                     meta={"converged": ok, "iterations": len(trace), "reason": trace.reason})
    return model, trace


def predict(model: QmlModel, decomp: XbmDecomposition, instances: np.ndarray,
            shots: int = 0, seed: int = 0) -> np.ndarray:
    """Predicted specification vectors ``alpha F_s(theta, b_t)``, shape (T, S)."""
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    data = pad_data(model.normalizer(instances), model.embedding)
    init = run_circuit_batch(build_embedding(model.embedding), data=data)
    amps = run_circuit_batch(build_ansatz(model.ansatz), weights=model.theta, initial=init)
    f = batch_expectations(decomp, amps, shots, np.random.default_rng(seed))
    return model.alpha * f


def evaluate(model: QmlModel, decomp: XbmDecomposition, instances: np.ndarray,
             shots: int = 0, seed: int = 0) -> np.ndarray:
    """Per-instance NMAE of the model's predictions."""
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    b_hat = predict(model, decomp, instances, shots, seed)
    return np.array([nmae(bh, b) for bh, b in zip(b_hat, instances)])
