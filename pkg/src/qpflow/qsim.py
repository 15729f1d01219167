"""Exact statevector simulation over a small gate alphabet.

Qubit 0 is the most significant bit of the basis index, so the amplitude
array reshaped to ``(2,) * n`` has qubit ``q`` on axis ``q``.  Rotations use
the half-angle convention ``R_P(t) = exp(-i t P / 2)``.

Besides the single-state API (:func:`apply_gate`, :func:`run_circuit`), the
``*_batch`` functions push a stack of states through a circuit at once; the
optimizers use them to evaluate all parameter shifts in one pass.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

MAX_QUBITS = 12

_INV_SQRT2 = 1 / np.sqrt(2)
FIXED_GATES = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _INV_SQRT2,
    "SDG": np.array([[1, 0], [0, -1j]], dtype=complex),
}
ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + tuple(FIXED_GATES) + ("CNOT",)


def rotation_matrices(kind: str, angles) -> np.ndarray:
    """Stack of 2x2 rotation matrices, shape ``angles.shape + (2, 2)``."""
    t = np.asarray(angles, dtype=float) / 2
    c, s = np.cos(t), np.sin(t)
    out = np.empty(t.shape + (2, 2), dtype=complex)
    if kind == "RX":
        out[..., 0, 0] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
        out[..., 1, 1] = c
    elif kind == "RY":
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
    elif kind == "RZ":
        out[..., 0, 0] = np.exp(-1j * t)
        out[..., 0, 1] = 0
        out[..., 1, 0] = 0
        out[..., 1, 1] = np.exp(1j * t)
    else:
        raise ValueError(f"{kind} is not a rotation")
    return out


class Slot(NamedTuple):
    """Symbolic gate parameter bound at run time: ``source`` is 'weight' or 'data'."""

    source: str
    index: int


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    control: int | None = None
    param: float | Slot | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind}")
        if (self.kind == "CNOT") != (self.control is not None):
            raise ValueError("control qubit is required for CNOT and only for CNOT")
        if self.control is not None and self.control == self.target:
            raise ValueError("control and target must differ")
        if (self.kind in ROTATIONS) != (self.param is not None):
            raise ValueError(f"{self.kind}: parameter given for a fixed gate or missing for a rotation")

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.target,) if self.control is None else (self.control, self.target)

    def matrix(self, value: float | None = None) -> np.ndarray:
        """The 2x2 (or 4x4 with control first) matrix of this gate."""
        if self.kind == "CNOT":
            return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
        if self.kind in FIXED_GATES:
            return FIXED_GATES[self.kind]
        if value is None:
            value = self.param
        return rotation_matrices(self.kind, value)

    def dagger(self) -> list["Gate"]:
        """Gates implementing the adjoint of this one."""
        if self.kind == "SDG":
            return [Gate("SDG", self.target)] * 3  # S = SDG^3
        if self.kind in ROTATIONS:
            if isinstance(self.param, Slot):
                raise ValueError("cannot invert a gate with an unbound parameter")
            return [Gate(self.kind, self.target, param=-self.param)]
        return [self]


@dataclass
class CircuitSpec:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def __post_init__(self):
        for g in self.gates:
            if max(g.qubits) >= self.n_qubits or min(g.qubits) < 0:
                raise ValueError(f"gate {g} acts outside {self.n_qubits} qubits")

    def slot_count(self, source: str) -> int:
        idx = [g.param.index for g in self.gates if isinstance(g.param, Slot) and g.param.source == source]
        return max(idx) + 1 if idx else 0

    @property
    def n_weights(self) -> int:
        return self.slot_count("weight")

    @property
    def n_data(self) -> int:
        return self.slot_count("data")

    def then(self, other: "CircuitSpec") -> "CircuitSpec":
        """This circuit followed by ``other`` on the same register."""
        if other.n_qubits != self.n_qubits:
            raise ValueError("register sizes differ")
        return CircuitSpec(self.n_qubits, list(self.gates) + list(other.gates))

    def inverse(self) -> "CircuitSpec":
        gates = [h for g in reversed(self.gates) for h in g.dagger()]
        return CircuitSpec(self.n_qubits, gates)


@dataclass(frozen=True)
class StateVector:
    amps: np.ndarray
    n_qubits: int

    def __post_init__(self):
        if self.amps.shape != (1 << self.n_qubits,):
            raise ValueError("amplitude vector length must be 2**n_qubits")

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))


def _check_n(n: int) -> None:
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"qubit count must lie in [1, {MAX_QUBITS}], got {n}")


def zero_state(n: int) -> StateVector:
    _check_n(n)
    amps = np.zeros(1 << n, dtype=complex)
    amps[0] = 1.0
    return StateVector(amps, n)


# ---------------------------------------------------------------------------
# batched kernels: ``amps`` has shape (B, 2**n)


def _apply_1q_batch(amps: np.ndarray, mats: np.ndarray, q: int, n: int) -> np.ndarray:
    b = amps.shape[0]
    view = amps.reshape(b, 1 << q, 2, 1 << (n - q - 1))
    x0, x1 = view[:, :, 0, :], view[:, :, 1, :]
    if mats.ndim == 3:
        mats = mats[:, None, None, :, :]
    out = np.empty_like(view)
    out[:, :, 0, :] = mats[..., 0, 0] * x0 + mats[..., 0, 1] * x1
    out[:, :, 1, :] = mats[..., 1, 0] * x0 + mats[..., 1, 1] * x1
    return out.reshape(b, -1)


@lru_cache(maxsize=None)
def _cnot_perm(control: int, target: int, n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    cbit, tbit = 1 << (n - 1 - control), 1 << (n - 1 - target)
    return np.where(idx & cbit, idx ^ tbit, idx)


def _apply_cnot_batch(amps: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    return amps[:, _cnot_perm(control, target, n)]


def apply_gate_batch(amps: np.ndarray, gate: Gate, n: int, values=None) -> np.ndarray:
    """Apply one gate to a stack of states; ``values`` gives per-row angles (or a scalar)."""
    if gate.kind == "CNOT":
        return _apply_cnot_batch(amps, gate.control, gate.target, n)
    if gate.kind in FIXED_GATES:
        return _apply_1q_batch(amps, FIXED_GATES[gate.kind], gate.target, n)
    if values is None:
        values = gate.param
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return _apply_1q_batch(amps, rotation_matrices(gate.kind, values), gate.target, n)
    if np.all(values == values[0]):
        return _apply_1q_batch(amps, rotation_matrices(gate.kind, values[0]), gate.target, n)
    return _apply_1q_batch(amps, rotation_matrices(gate.kind, values), gate.target, n)


def run_circuit_batch(circ: CircuitSpec, weights: np.ndarray | None = None,
                      data: np.ndarray | None = None, initial: np.ndarray | None = None) -> np.ndarray:
    """Run ``circ`` for a batch of bindings.

    ``weights`` is (B, P) and ``data`` is (B, D); either may be 1-D to share a
    binding across the batch.  Returns amplitudes of shape (B, 2**n).
    """
    n = circ.n_qubits
    binds = {"weight": weights, "data": data}
    batch = 1
    for arr in (weights, data, initial):
        if arr is not None and np.ndim(arr) == 2:
            batch = max(batch, np.shape(arr)[0])
    for source, count in (("weight", circ.n_weights), ("data", circ.n_data)):
        arr = binds[source]
        have = 0 if arr is None else np.shape(arr)[-1]
        if have != count:
            raise ValueError(f"circuit expects {count} {source} values, got {have}")
    if initial is None:
        amps = np.zeros((batch, 1 << n), dtype=complex)
        amps[:, 0] = 1.0
    else:
        amps = np.broadcast_to(initial, (batch, 1 << n)).astype(complex)
    for gate in circ.gates:
        values = None
        if isinstance(gate.param, Slot):
            arr = np.asarray(binds[gate.param.source], dtype=float)
            values = arr[..., gate.param.index]
        amps = apply_gate_batch(amps, gate, n, values)
    return amps


# ---------------------------------------------------------------------------
# single-state API


def apply_gate(state: StateVector, gate: Gate, value: float | None = None) -> StateVector:
    n = state.n_qubits
    if max(gate.qubits) >= n:
        raise ValueError(f"gate {gate} acts outside {n} qubits")
    needs_value = isinstance(gate.param, Slot)
    if needs_value and value is None:
        raise ValueError(f"{gate.kind} on slot {gate.param} needs a value")
    if value is not None and gate.kind not in ROTATIONS:
        raise ValueError(f"{gate.kind} takes no parameter")
    out = apply_gate_batch(state.amps[None, :], gate, n, value)
    return StateVector(out[0], n)


def run_circuit(circ: CircuitSpec, weights=(), data=()) -> StateVector:
    weights = np.asarray(weights, dtype=float)
    data = np.asarray(data, dtype=float)
    amps = run_circuit_batch(circ, weights if weights.size or circ.n_weights else None,
                             data if data.size or circ.n_data else None)
    return StateVector(amps[0], circ.n_qubits)


def apply_circuit(state: StateVector, circ: CircuitSpec) -> StateVector:
    """Apply a parameter-free circuit to an existing state."""
    amps = run_circuit_batch(circ, initial=state.amps)
    return StateVector(amps[0], state.n_qubits)


def kron_state(a: StateVector, b: StateVector) -> StateVector:
    n = a.n_qubits + b.n_qubits
    if n > MAX_QUBITS:
        raise ValueError(f"joint register of {n} qubits exceeds {MAX_QUBITS}")
    return StateVector(np.kron(a.amps, b.amps), n)


def exact_expectation(state: StateVector, diag) -> float:
    diag = np.asarray(diag, dtype=float)
    if diag.shape != state.amps.shape:
        raise ValueError("diagonal observable length does not match the state")
    return float(state.probabilities() @ diag)


def sample_indices(probs: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    p = np.clip(probs, 0, None)
    return rng.choice(len(p), size=shots, p=p / p.sum())


def sampled_expectation(state: StateVector, diag, shots: int, seed: int | np.random.Generator = 0) -> float:
    """Monte-Carlo estimate of a diagonal observable from ``shots`` basis samples."""
    if shots < 1:
        raise ValueError("shots must be positive")
    diag = np.asarray(diag, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = sample_indices(state.probabilities(), shots, rng)
    return float(diag[idx].mean())


def circuit_unitary(circ: CircuitSpec, weights=None, data=None) -> np.ndarray:
    """Dense unitary of a circuit (columns are images of basis states)."""
    n = circ.n_qubits
    amps = np.eye(1 << n, dtype=complex)
    binds = {"weight": weights, "data": data}
    for gate in circ.gates:
        values = None
        if isinstance(gate.param, Slot):
            values = float(np.asarray(binds[gate.param.source])[gate.param.index])
        amps = apply_gate_batch(amps, gate, n, values)
    # row k of ``amps`` is U|k>, i.e. column k of U
    return amps.T


@lru_cache(maxsize=None)
def _lifted(kind: str, q: int, n: int) -> np.ndarray:
    """Dense 2**n matrix of a fixed one-qubit gate or Pauli on qubit ``q``."""
    one = {"I": np.eye(2), "PX": np.array([[0, 1], [1, 0]]), "PY": np.array([[0, -1j], [1j, 0]]),
           "PZ": np.diag([1, -1])}.get(kind, FIXED_GATES.get(kind))
    return np.kron(np.kron(np.eye(1 << q), one), np.eye(1 << (n - q - 1))).astype(complex)


@lru_cache(maxsize=None)
def _dense_fixed(gate: Gate, n: int) -> np.ndarray:
    if gate.kind == "CNOT":
        return np.eye(1 << n, dtype=complex)[_cnot_perm(gate.control, gate.target, n)]
    return _lifted(gate.kind, gate.target, n)


@lru_cache(maxsize=None)
def _dense_rotation(kind: str, q: int, n: int, value: float) -> np.ndarray:
    return dense_gate(Gate(kind, q, param=value), n)


def dense_gate(gate: Gate, n: int, value: float | None = None) -> np.ndarray:
    """Full 2**n matrix of one gate."""
    if gate.kind not in ROTATIONS:
        return _dense_fixed(gate, n)
    t = (gate.param if value is None else value) / 2
    return np.cos(t) * _lifted("I", 0, n) - 1j * np.sin(t) * _lifted("P" + gate.kind[1], gate.target, n)


def shifted_unitaries(circ: CircuitSpec, weights, shift: float = np.pi / 2) -> np.ndarray:
    """Unitaries of ``circ`` at ``weights`` and at every single-weight shift.

    Rows follow :func:`qpflow.vqc.psr_shifts`: unshifted, then ``+shift`` on
    each weight, then ``-shift``.  Every weight must drive exactly one rotation
    and the circuit may not read data slots.  A rotation shifted by ``s``
    equals the unshifted one followed by ``R(s)`` (same axis), so with ``A``
    the prefix ending at that gate the shifted circuit is ``U A^H R(s) A``.
    """
    if circ.n_data:
        raise ValueError("shifted_unitaries takes weight-only circuits")
    n = circ.n_qubits
    weights = np.asarray(weights, dtype=float)
    p = circ.n_weights
    prefix = np.empty((p, 1 << n, 1 << n), dtype=complex)
    kicks = np.empty((2, p, 1 << n, 1 << n), dtype=complex)
    seen = np.zeros(p, dtype=bool)
    u = np.eye(1 << n, dtype=complex)
    for gate in circ.gates:
        if isinstance(gate.param, Slot):
            k = gate.param.index
            if seen[k]:
                raise ValueError(f"weight {k} drives more than one gate")
            seen[k] = True
            u = dense_gate(gate, n, weights[k]) @ u
            prefix[k] = u
            kicks[0, k] = _dense_rotation(gate.kind, gate.target, n, shift)
            kicks[1, k] = _dense_rotation(gate.kind, gate.target, n, -shift)
        else:
            u = dense_gate(gate, n) @ u
    shifted = u @ np.conj(np.swapaxes(prefix, 1, 2)) @ kicks @ prefix
    return np.concatenate([u[None], shifted[0], shifted[1]])


def dump_amplitudes_csv(state: StateVector) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "re", "im"])
    for k, a in enumerate(state.amps):
        writer.writerow([k, repr(float(a.real)), repr(float(a.imag))])
    return buf.getvalue()
