"""Extended Bell measurement (XBM) of power-flow observables.

Every Hermitian ``H`` on ``n`` qubits splits by index offset ``d = j XOR k``
into components holding the entries ``H[j, j ^ d]``.  The real and imaginary
parts of each component are diagonalized by a short circuit: a CNOT fan-out
from the lowest set bit ``l`` of ``d`` onto the other set bits, then ``H`` (real
part) or ``SDG`` + ``H`` (imaginary part) on ``l``.  Writing ``W_i`` for that
circuit and ``U_i = W_i^H``::

    H_s = sum_i U_i diag(lam_i^s) U_i^H

where the circuits are shared by every specification matrix and only the real
diagonals ``lam_i^s`` depend on ``s``.  Measuring ``<psi|H_s|psi>`` then costs
one basis measurement of ``W_i |psi>`` per group, whatever the number of specs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid_model import SpecSet
from .qsim import CircuitSpec, Gate, StateVector, apply_circuit, circuit_unitary, kron_state, \
    sample_indices

ATOL = 1e-12


class DecompositionError(RuntimeError):
    pass


@dataclass
class XbmGroup:
    offset: int
    part: str  # 'diagonal', 'real' or 'imag'
    circuit: CircuitSpec  # applied to the state before measurement (U_i^H)
    lambdas: np.ndarray  # (S, 2**n) real

    @cached_property
    def rotation(self) -> np.ndarray:
        """Dense matrix of the measurement circuit, i.e. ``U_i^H``."""
        return circuit_unitary(self.circuit)

    def nnz(self) -> list[int]:
        return [int(np.count_nonzero(row)) for row in self.lambdas]


@dataclass
class XbmDecomposition:
    groups: list[XbmGroup]
    n_qubits: int
    s_count: int

    @property
    def c(self) -> int:
        return len(self.groups)

    @cached_property
    def rotations(self) -> np.ndarray:
        return np.array([g.rotation for g in self.groups])

    @cached_property
    def lambdas(self) -> np.ndarray:
        """All diagonals stacked as (C, S, 2**n)."""
        return np.array([g.lambdas for g in self.groups])

    @cached_property
    def stacked_lambdas(self) -> np.ndarray:
        """Diagonals as a (C * 2**n, S) matrix for batched contraction."""
        return np.ascontiguousarray(self.lambdas.transpose(0, 2, 1).reshape(-1, self.s_count))

    def reconstruct(self, s: int) -> np.ndarray:
        """``sum_i U_i diag(lam_i^s) U_i^H`` for one spec."""
        out = np.zeros((1 << self.n_qubits,) * 2, dtype=complex)
        for g in self.groups:
            w = g.rotation
            out += w.conj().T @ np.diag(g.lambdas[s]) @ w
        return out

    def summary(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "s_count": self.s_count,
            "C": self.c,
            "groups": [
                {
                    "offset": g.offset,
                    "part": g.part,
                    "gates": [[x.kind, x.target, x.control] for x in g.circuit.gates],
                    "nnz": g.nnz(),
                }
                for g in self.groups
            ],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=1)


def qubit_of_bit(bit: int, n: int) -> int:
    # qubit 0 is the most significant bit
    return n - 1 - bit


def group_circuit(offset: int, part: str, n: int) -> CircuitSpec:
    if part == "diagonal":
        return CircuitSpec(n, [])
    bits = [k for k in range(n) if offset >> k & 1]
    lead = qubit_of_bit(bits[0], n)
    gates = [Gate("CNOT", qubit_of_bit(k, n), control=lead) for k in bits[1:]]
    if part == "imag":
        gates.append(Gate("SDG", lead))
    gates.append(Gate("H", lead))
    return CircuitSpec(n, gates)


def offset_component(h: np.ndarray, offset: int, part: str) -> np.ndarray:
    """Entries of ``h`` at index offset ``offset``: real part, or ``i`` times the imaginary part."""
    dim = h.shape[-1]
    idx = np.arange(dim)
    mask = (idx[:, None] ^ idx[None, :]) == offset
    if part == "imag":
        return 1j * np.where(mask, h.imag, 0.0)
    return np.where(mask, h.real, 0.0).astype(complex)


def decompose(specs: SpecSet, atol: float = ATOL) -> XbmDecomposition:
    h = specs.h
    dim = h.shape[-1]
    n = specs.n_qubits
    idx = np.arange(dim)
    xor = idx[:, None] ^ idx[None, :]
    support = np.any(np.abs(h) > 0, axis=0)
    offsets = sorted(set(xor[support].tolist()) | {0})

    groups = []
    for d in offsets:
        parts = ("diagonal",) if d == 0 else ("real", "imag")
        for part in parts:
            comps = np.array([offset_component(hs, d, part) for hs in h])
            if not np.any(np.abs(comps) > 0):
                continue
            circ = group_circuit(d, part, n)
            w = circuit_unitary(circ)
            rotated = w @ comps @ w.conj().T
            off_diag = rotated - np.einsum("sii->si", rotated)[:, :, None] * np.eye(dim)
            if np.max(np.abs(off_diag)) > atol or np.max(np.abs(np.einsum("sii->si", rotated).imag)) > atol:
                raise DecompositionError(f"offset {d} ({part}) is not diagonalized by its circuit")
            lam = np.einsum("sii->si", rotated).real.copy()
            lam[np.abs(lam) < atol] = 0.0
            if np.any(lam):
                groups.append(XbmGroup(d, part, circ, lam))
    if not groups:
        raise DecompositionError("all specification matrices are zero")
    return XbmDecomposition(groups, n, len(h))


# ---------------------------------------------------------------------------
# protocol-level measurements on a single state


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _expect(state: StateVector, diag: np.ndarray, shots: int, rng) -> float:
    probs = state.probabilities()
    if shots <= 0:
        return float(probs @ diag)
    return float(diag[sample_indices(probs, shots, rng)].mean())


def measure_G(state: StateVector, decomp: XbmDecomposition, b, shots: int = 0, seed=0) -> float:
    """``<psi| sum_s b_s H_s |psi>`` as a sum of one measurement per group (serial)."""
    b = np.asarray(b, dtype=float)
    if b.shape != (decomp.s_count,):
        raise ValueError(f"expected {decomp.s_count} specification values, got {b.shape}")
    rng = _rng(seed)
    total = 0.0
    for g in decomp.groups:
        rotated = apply_circuit(state, g.circuit)
        total += _expect(rotated, b @ g.lambdas, shots, rng)
    return total


def measure_F_s(state: StateVector, decomp: XbmDecomposition, shots: int = 0, seed=0) -> np.ndarray:
    """Per-spec expectations ``<psi|H_s|psi>``; one rotated state per group serves all specs."""
    rng = _rng(seed)
    out = np.zeros(decomp.s_count)
    for g in decomp.groups:
        probs = apply_circuit(state, g.circuit).probabilities()
        if shots > 0:
            counts = np.bincount(sample_indices(probs, shots, rng), minlength=len(probs))
            probs = counts / shots
        out += g.lambdas @ probs
    return out


def pair_diagonal(gi: XbmGroup, gj: XbmGroup) -> np.ndarray:
    """``sum_s lam_i^s (x) lam_j^s`` flattened to the joint register."""
    return np.einsum("sa,sb->ab", gi.lambdas, gj.lambdas).ravel()


def measure_G_tilde(state: StateVector, decomp: XbmDecomposition, other: StateVector | None = None,
                    symmetric: bool = True, shots: int = 0, seed=0) -> float:
    """Quartic term ``sum_s F_s^2`` measured on two replicas of the circuit.

    For every group pair (i, j) the first replica is rotated by group i and the
    second by group j, and the joint state is measured on ``sum_s lam_i^s (x) lam_j^s``.
    With identical replicas only pairs ``i <= j`` are measured and the off-diagonal
    ones counted twice.  Passing ``other`` gives the mixed term
    ``sum_s <a|H_s|a><b|H_s|b>``, which needs the full double loop.
    """
    rng = _rng(seed)
    second = state if other is None else other
    use_symmetry = symmetric and other is None
    rot_a = [apply_circuit(state, g.circuit) for g in decomp.groups]
    rot_b = rot_a if other is None else [apply_circuit(second, g.circuit) for g in decomp.groups]
    total = 0.0
    for i, gi in enumerate(decomp.groups):
        for j, gj in enumerate(decomp.groups):
            if use_symmetry and j < i:
                continue
            joint = kron_state(rot_a[i], rot_b[j])
            value = _expect(joint, pair_diagonal(gi, gj), shots, rng)
            total += value if (not use_symmetry or i == j) else 2 * value
    return total


# ---------------------------------------------------------------------------
# vectorized group measurements over a batch of states (used by the optimizers)


def group_probabilities(decomp: XbmDecomposition, amps: np.ndarray) -> np.ndarray:
    """Outcome distributions of every group circuit, shape (B, C, 2**n)."""
    c, dim = decomp.c, amps.shape[-1]
    rotated = (amps @ decomp.rotations.reshape(c * dim, dim).T).reshape(-1, c, dim)
    return rotated.real ** 2 + rotated.imag ** 2


def sample_probabilities(probs: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Replace each distribution by the empirical frequencies of ``shots`` draws."""
    flat = probs.reshape(-1, probs.shape[-1])
    flat = np.clip(flat, 0, None)
    flat = flat / flat.sum(axis=1, keepdims=True)
    counts = np.array([rng.multinomial(shots, p) for p in flat])
    return (counts / shots).reshape(probs.shape)


def batch_expectations(decomp: XbmDecomposition, amps: np.ndarray, shots: int = 0,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """``F_s`` for a batch of states via the group measurements, shape (B, S)."""
    probs = group_probabilities(decomp, amps)
    if shots > 0:
        probs = sample_probabilities(probs, shots, rng or np.random.default_rng())
    return probs.reshape(len(probs), -1) @ decomp.stacked_lambdas
