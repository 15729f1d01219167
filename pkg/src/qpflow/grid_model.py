"""Grid physics: admittance matrix, quadratic specification matrices, PF instances.

Every power-flow specification is written as a Hermitian quadratic form
``v^H H_s v = b_s`` over the bus-voltage vector.  Per bus, in bus order:

* slack: squared voltage magnitude
* pv:    active injection, squared voltage magnitude
* pq:    active injection, reactive injection

giving ``S = 2N - 1`` specifications.  Matrices are zero-padded to the next
power of two so they act on a register of ``ceil(log2 N)`` qubits.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .case_ingest import CaseData

KINDS = ("p_inj", "q_inj", "vmag_sq")


def padded_size(n: int) -> int:
    return 1 << max(0, math.ceil(math.log2(n))) if n > 1 else 1


def build_ybus(case: CaseData) -> np.ndarray:
    """Bus admittance matrix (per unit) from the standard pi-model branch equations."""
    idx = case.bus_index()
    n = case.n_buses
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if br.status != "on":
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        half = 0.5j * br.b_charge
        tau = br.tap * np.exp(1j * br.shift)
        y[f, f] += (ys + half) / (tau * np.conj(tau))
        y[t, t] += ys + half
        y[f, t] += -ys / np.conj(tau)
        y[t, f] += -ys / tau
    for k, bus in enumerate(case.buses):
        y[k, k] += complex(bus.shunt_gs, bus.shunt_bs)
    isolated = [case.buses[k].id for k in range(n) if n > 1 and not np.any(y[k])]
    if isolated:
        warnings.warn(f"isolated buses with empty admittance rows: {isolated}", stacklevel=2)
    return y


@dataclass
class SpecSet:
    """Specification matrices ``h`` (S x N_pad x N_pad), values ``b`` and labels."""

    h: np.ndarray
    b: np.ndarray
    kinds: tuple[tuple[str, int], ...]  # (kind, bus id)
    n_buses: int
    y: np.ndarray
    bus_types: tuple[str, ...]
    bus_ids: tuple[int, ...]

    @property
    def s_count(self) -> int:
        return len(self.kinds)

    @property
    def n_pad(self) -> int:
        return self.h.shape[1]

    @property
    def n_qubits(self) -> int:
        return int(round(math.log2(self.n_pad)))

    def kind_mask(self, kind: str) -> np.ndarray:
        return np.array([k == kind for k, _ in self.kinds])

    def values(self, v: np.ndarray) -> np.ndarray:
        """Evaluate every ``v^H H_s v`` for a voltage vector (padded or not).

        Accepts a single vector or a stack of them along the first axis.
        """
        v = np.asarray(v, dtype=complex)
        if v.shape[-1] < self.n_pad:
            pad = [(0, 0)] * (v.ndim - 1) + [(0, self.n_pad - v.shape[-1])]
            v = np.pad(v, pad)
        return np.einsum("...i,sij,...j->...s", v.conj(), self.h, v).real

    def slack_position(self) -> int:
        return self.bus_types.index("slack")


def injection_matrices(y: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Active and reactive injection matrices for bus ``n``."""
    size = y.shape[0]
    e = np.zeros((size, size))
    e[n, n] = 1.0
    a = y.conj().T @ e
    return (a + a.conj().T) / 2, (a - a.conj().T) / 2j


def build_specs(case: CaseData, y: np.ndarray | None = None) -> SpecSet:
    if y is None:
        y = build_ybus(case)
    n = case.n_buses
    n_pad = padded_size(n)
    gen_at = {g.bus: g for g in case.gens}
    mats, vals, kinds = [], [], []

    def add(kind, bus_id, mat, val):
        padded = np.zeros((n_pad, n_pad), dtype=complex)
        padded[:n, :n] = mat
        mats.append(padded)
        vals.append(val)
        kinds.append((kind, bus_id))

    for k, bus in enumerate(case.buses):
        gen = gen_at.get(bus.id)
        p_net = (gen.p_gen if gen else 0.0) - bus.p_demand
        q_net = (gen.q_gen if gen else 0.0) - bus.q_demand
        h_p, h_q = injection_matrices(y, k)
        e = np.zeros((n, n))
        e[k, k] = 1.0
        if bus.bus_type == "slack":
            add("vmag_sq", bus.id, e, bus.v_set ** 2)
        elif bus.bus_type == "pv":
            add("p_inj", bus.id, h_p, p_net)
            add("vmag_sq", bus.id, e, bus.v_set ** 2)
        else:
            add("p_inj", bus.id, h_p, p_net)
            add("q_inj", bus.id, h_q, q_net)
    return SpecSet(
        h=np.array(mats), b=np.array(vals, dtype=float), kinds=tuple(kinds), n_buses=n, y=y,
        bus_types=tuple(b.bus_type for b in case.buses), bus_ids=tuple(b.id for b in case.buses),
    )


def specset_to_json(specs: SpecSet) -> str:
    """Debug dump; complex entries as ``[re, im]`` pairs."""
    doc = {
        "n_buses": specs.n_buses,
        "n_pad": specs.n_pad,
        "kinds": [list(k) for k in specs.kinds],
        "b": specs.b.tolist(),
        "h": np.stack([specs.h.real, specs.h.imag], axis=-1).tolist(),
    }
    return json.dumps(doc)


# ---------------------------------------------------------------------------
# Instances


@dataclass
class InstanceBatch:
    instances: np.ndarray  # (T, S)
    seed: int
    sigma_v: float
    sigma_p_frac: float
    resampled: int = 0

    def __len__(self):
        return len(self.instances)

    def split(self, n_train: int) -> tuple["InstanceBatch", "InstanceBatch"]:
        head = InstanceBatch(self.instances[:n_train], self.seed, self.sigma_v, self.sigma_p_frac)
        tail = InstanceBatch(self.instances[n_train:], self.seed, self.sigma_v, self.sigma_p_frac)
        return head, tail


def perturb(specs: SpecSet, rng: np.random.Generator, sigma_v: float = 0.05,
            sigma_p_frac: float = 0.2, base_b: np.ndarray | None = None) -> np.ndarray:
    """One perturbed specification vector (voltage magnitudes perturbed before squaring)."""
    b = specs.b if base_b is None else base_b
    out = np.empty_like(b)
    is_v = specs.kind_mask("vmag_sq")
    noise = rng.standard_normal(b.shape)
    out[is_v] = (np.sqrt(b[is_v]) + sigma_v * noise[is_v]) ** 2
    out[~is_v] = b[~is_v] + sigma_p_frac * np.abs(b[~is_v]) * noise[~is_v]
    return out


def sample_instances(specs: SpecSet, t_count: int, seed: int, sigma_v: float = 0.05,
                     sigma_p_frac: float = 0.2, screen: bool = True,
                     max_tries: int = 100) -> InstanceBatch:
    """Draw ``t_count`` perturbed PF instances.

    With ``screen`` on, draws for which Newton-Raphson does not converge from a
    flat start are rejected and redrawn.
    """
    if t_count < 1:
        raise ValueError("t_count must be at least 1")
    rng = np.random.default_rng(seed)
    rows, rejected = [], 0
    while len(rows) < t_count:
        b = perturb(specs, rng, sigma_v, sigma_p_frac)
        if screen and not solve_newton_raphson(specs, b).converged:
            rejected += 1
            if rejected > max_tries * t_count:
                raise RuntimeError("too many infeasible instances; noise level too high?")
            continue
        rows.append(b)
    return InstanceBatch(np.array(rows), seed, sigma_v, sigma_p_frac, resampled=rejected)


def batch_to_csv(batch: InstanceBatch, specs: SpecSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"{kind}_{bus}" for kind, bus in specs.kinds])
    for row in batch.instances:
        writer.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def batch_from_csv(text: str, seed: int = -1) -> InstanceBatch:
    rows = list(csv.reader(io.StringIO(text)))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return InstanceBatch(data, seed, float("nan"), float("nan"))


# ---------------------------------------------------------------------------
# Newton-Raphson oracle


@dataclass
class VoltageSolution:
    v: np.ndarray
    converged: bool
    iterations: int
    mismatch: float = field(default=math.inf)


def _spec_targets(specs: SpecSet, b: np.ndarray):
    n = specs.n_buses
    p = np.zeros(n)
    q = np.zeros(n)
    vm = np.ones(n)
    pos = {bid: k for k, bid in enumerate(specs.bus_ids)}
    for (kind, bus), val in zip(specs.kinds, b):
        k = pos[bus]
        if kind == "p_inj":
            p[k] = val
        elif kind == "q_inj":
            q[k] = val
        else:
            vm[k] = math.sqrt(max(val, 0.0))
    return p, q, vm


def flat_start(specs: SpecSet, b: np.ndarray | None = None) -> np.ndarray:
    """Flat voltage profile, with magnitude setpoints applied on slack/pv buses."""
    _, _, vm = _spec_targets(specs, specs.b if b is None else b)
    return vm.astype(complex)


def solve_newton_raphson(specs: SpecSet, b: np.ndarray, v0: np.ndarray | None = None,
                         tol: float = 1e-8, max_iter: int = 50) -> VoltageSolution:
    """Polar Newton-Raphson on the P/Q mismatch equations; slack angle pinned to 0.

    Never raises on numerical trouble: a singular Jacobian or blow-up simply
    yields ``converged=False``.
    """
    y = specs.y
    n = specs.n_buses
    p_sp, q_sp, vm_sp = _spec_targets(specs, np.asarray(b, dtype=float))
    types = np.array(specs.bus_types)
    slack = specs.slack_position()
    pvpq = np.flatnonzero(types != "slack")
    pq = np.flatnonzero(types == "pq")

    v = flat_start(specs, b) if v0 is None else np.asarray(v0, dtype=complex)[:n].copy()
    if not np.any(v):
        raise ValueError("initial voltage vector must be nonzero")
    v = v * np.exp(-1j * np.angle(v[slack]))
    va, vm = np.angle(v), np.abs(v)
    fixed = types != "pq"
    vm[fixed] = vm_sp[fixed]
    v = vm * np.exp(1j * va)

    def mismatch(v):
        s = v * np.conj(y @ v)
        return np.concatenate([s.real[pvpq] - p_sp[pvpq], s.imag[pq] - q_sp[pq]])

    with np.errstate(all="ignore"):
        f = mismatch(v)
        it = 0
        while True:
            err = np.max(np.abs(f)) if f.size else 0.0
            if not np.isfinite(err):
                return VoltageSolution(v, False, it, math.inf)
            if err < tol:
                return VoltageSolution(v, True, it, err)
            if it >= max_iter:
                return VoltageSolution(v, False, it, err)
            ibus = y @ v
            vnorm = v / np.abs(v)
            ds_dvm = np.diag(v) @ np.conj(y @ np.diag(vnorm)) + np.diag(np.conj(ibus) * vnorm)
            ds_dva = 1j * np.diag(v) @ np.conj(np.diag(ibus) - y @ np.diag(v))
            jac = np.block([
                [ds_dva.real[np.ix_(pvpq, pvpq)], ds_dvm.real[np.ix_(pvpq, pq)]],
                [ds_dva.imag[np.ix_(pq, pvpq)], ds_dvm.imag[np.ix_(pq, pq)]],
            ])
            try:
                dx = np.linalg.solve(jac, -f)
            except np.linalg.LinAlgError:
                return VoltageSolution(v, False, it, err)
            va[pvpq] += dx[: len(pvpq)]
            vm[pq] += dx[len(pvpq):]
            v = vm * np.exp(1j * va)
            f = mismatch(v)
            it += 1


def nmae(b_hat: np.ndarray, b: np.ndarray) -> float:
    """Normalized mean absolute error ``||b_hat - b||_1 / ||b||_1``."""
    b_hat = np.asarray(b_hat, dtype=float)
    b = np.asarray(b, dtype=float)
    if b_hat.shape != b.shape:
        raise ValueError(f"shape mismatch {b_hat.shape} vs {b.shape}")
    ref = np.abs(b).sum()
    if ref == 0:
        raise ValueError("reference vector has zero l1 norm")
    return float(np.abs(b_hat - b).sum() / ref)
