import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpflow.qsim import (CircuitSpec, Gate, Slot, StateVector, apply_circuit, apply_gate, circuit_unitary,
                         dump_amplitudes_csv, exact_expectation, kron_state, rotation_matrices, run_circuit,
                         run_circuit_batch, sampled_expectation, zero_state)

from conftest import random_state

PAULI = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}
P0, P1 = np.diag([1.0, 0]), np.diag([0, 1.0])


def embed(op, q, n):
    """Dense Kronecker lift of a one-qubit operator, qubit 0 leftmost."""
    mats = [np.eye(2)] * n
    mats[q] = op
    out = np.array([[1.0]])
    for m in mats:
        out = np.kron(out, m)
    return out


def oracle_gate(kind, target, control, angle, n):
    if kind == "CNOT":
        return embed(P0, control, n) + embed(P1, control, n) @ embed(PAULI["X"], target, n)
    if kind in ("RX", "RY", "RZ"):
        # exp(-i t P / 2) via the Pauli identity
        p = PAULI[kind[1]]
        one = np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * p
        return embed(one, target, n)
    one = {"X": PAULI["X"], "H": np.array([[1, 1], [1, -1]]) / np.sqrt(2), "SDG": np.diag([1, -1j])}[kind]
    return embed(one, target, n)


def random_circuit(rng, n, depth):
    gates, angles = [], []
    for _ in range(depth):
        kind = rng.choice(["RX", "RY", "RZ", "H", "X", "SDG", "CNOT"])
        t = int(rng.integers(n))
        if kind == "CNOT":
            if n < 2:
                continue
            c = int(rng.choice([q for q in range(n) if q != t]))
            gates.append(Gate("CNOT", t, control=c))
            angles.append(None)
        elif kind.startswith("R"):
            a = float(rng.uniform(-2 * np.pi, 2 * np.pi))
            gates.append(Gate(kind, t, param=a))
            angles.append(a)
        else:
            gates.append(Gate(kind, t))
            angles.append(None)
    return CircuitSpec(n, gates), angles


def oracle_unitary(circ, angles):
    n = circ.n_qubits
    u = np.eye(1 << n, dtype=complex)
    for g, a in zip(circ.gates, angles):
        u = oracle_gate(g.kind, g.target, g.control, a, n) @ u
    return u


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_circuit_matches_dense_oracle(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        circ, angles = random_circuit(rng, n, 25)
        psi = random_state(rng, n)
        out = apply_circuit(StateVector(psi, n), circ).amps
        np.testing.assert_allclose(out, oracle_unitary(circ, angles) @ psi, atol=1e-12)
        np.testing.assert_allclose(circuit_unitary(circ), oracle_unitary(circ, angles), atol=1e-12)


def test_qubit_zero_is_most_significant():
    state = apply_gate(zero_state(3), Gate("X", 0))
    assert state.amps[0b100] == 1


def test_cnot_truth_table():
    circ = CircuitSpec(2, [Gate("CNOT", 1, control=0)])
    u = circuit_unitary(circ)
    for src, dst in [(0, 0), (1, 1), (2, 3), (3, 2)]:
        assert u[dst, src] == 1


def test_half_angle_convention():
    state = apply_gate(zero_state(1), Gate("RY", 0, param=np.pi))
    np.testing.assert_allclose(state.amps, [0, 1], atol=1e-15)
    state = apply_gate(zero_state(1), Gate("RX", 0, param=np.pi / 2))
    np.testing.assert_allclose(state.probabilities(), [0.5, 0.5])


def test_rotation_period():
    m = rotation_matrices("RZ", 2 * np.pi)
    np.testing.assert_allclose(m, -np.eye(2), atol=1e-15)


@pytest.mark.parametrize("kind", ["X", "H", "SDG", "CNOT", "RX", "RY", "RZ"])
def test_gate_matrices_unitary(kind):
    gate = Gate(kind, 1, control=0 if kind == "CNOT" else None, param=0.37 if kind.startswith("R") else None)
    m = gate.matrix()
    np.testing.assert_allclose(m @ m.conj().T, np.eye(len(m)), atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(kind=st.sampled_from(["RX", "RY", "RZ"]), angle=st.floats(-50, 50, allow_nan=False))
def test_rotations_unitary(kind, angle):
    m = rotation_matrices(kind, angle)
    np.testing.assert_allclose(m @ m.conj().T, np.eye(2), atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 6))
def test_norm_preserved(seed, n):
    rng = np.random.default_rng(seed)
    circ, _ = random_circuit(rng, n, 30)
    out = apply_circuit(StateVector(random_state(rng, n), n), circ)
    assert out.norm() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_inverse_undoes_circuit(seed):
    rng = np.random.default_rng(seed)
    circ, _ = random_circuit(rng, 3, 20)
    u = circuit_unitary(circ.then(circ.inverse()))
    np.testing.assert_allclose(u, np.eye(8), atol=1e-12)


def test_slot_binding_and_batch():
    circ = CircuitSpec(2, [Gate("RY", 0, param=Slot("weight", 0)), Gate("RZ", 1, param=Slot("data", 0)),
                           Gate("CNOT", 1, control=0), Gate("RX", 1, param=Slot("weight", 1))])
    assert circ.n_weights == 2 and circ.n_data == 1
    rng = np.random.default_rng(0)
    w = rng.uniform(0, 6, (7, 2))
    x = rng.uniform(0, 6, (7, 1))
    batch = run_circuit_batch(circ, w, x)
    for k in range(7):
        np.testing.assert_allclose(batch[k], run_circuit(circ, w[k], x[k]).amps, atol=1e-14)
        bound = [Gate("RY", 0, param=w[k, 0]), Gate("RZ", 1, param=x[k, 0]), Gate("CNOT", 1, control=0),
                 Gate("RX", 1, param=w[k, 1])]
        np.testing.assert_allclose(batch[k], run_circuit(CircuitSpec(2, bound)).amps, atol=1e-14)


def test_shared_binding_broadcasts():
    circ = CircuitSpec(1, [Gate("RY", 0, param=Slot("weight", 0)), Gate("RZ", 0, param=Slot("data", 0))])
    out = run_circuit_batch(circ, np.array([0.3]), np.array([[0.1], [0.2], [0.3]]))
    assert out.shape == (3, 2)
    np.testing.assert_allclose(np.abs(out), np.abs(out[[0]]).repeat(3, 0))


def test_wrong_binding_length():
    circ = CircuitSpec(1, [Gate("RY", 0, param=Slot("weight", 0))])
    with pytest.raises(ValueError):
        run_circuit_batch(circ, np.zeros(2))


def test_unbound_slot_single_state():
    with pytest.raises(ValueError):
        apply_gate(zero_state(1), Gate("RY", 0, param=Slot("weight", 0)))


@pytest.mark.parametrize("kwargs", [
    dict(kind="FOO", target=0),
    dict(kind="CNOT", target=0),
    dict(kind="CNOT", target=0, control=0),
    dict(kind="RY", target=0),
    dict(kind="H", target=0, param=0.1),
])
def test_invalid_gates(kwargs):
    with pytest.raises(ValueError):
        Gate(**kwargs)


def test_gate_outside_register():
    with pytest.raises(ValueError):
        CircuitSpec(2, [Gate("X", 2)])
    with pytest.raises(ValueError):
        apply_gate(zero_state(2), Gate("X", 3))


@pytest.mark.parametrize("n", [0, 13])
def test_qubit_count_bounds(n):
    with pytest.raises(ValueError):
        zero_state(n)


def test_kron_state_ordering(rng):
    a, b = random_state(rng, 2), random_state(rng, 3)
    joint = kron_state(StateVector(a, 2), StateVector(b, 3))
    assert joint.n_qubits == 5
    # first register occupies the high bits
    np.testing.assert_allclose(joint.amps.reshape(4, 8), np.outer(a, b))


def test_kron_state_limit():
    with pytest.raises(ValueError):
        kron_state(zero_state(7), zero_state(6))


def test_exact_expectation(rng):
    psi = StateVector(random_state(rng, 3), 3)
    diag = rng.normal(size=8)
    assert exact_expectation(psi, diag) == pytest.approx(np.vdot(psi.amps, np.diag(diag) @ psi.amps).real)
    with pytest.raises(ValueError):
        exact_expectation(psi, diag[:4])


def test_sampled_expectation_seeded(rng):
    psi = StateVector(random_state(rng, 3), 3)
    diag = rng.normal(size=8)
    assert sampled_expectation(psi, diag, 1000, seed=4) == sampled_expectation(psi, diag, 1000, seed=4)
    with pytest.raises(ValueError):
        sampled_expectation(psi, diag, 0)


def test_sampled_expectation_within_standard_error():
    rng = np.random.default_rng(8)
    shots = 200_000
    for k in range(10):
        psi = StateVector(random_state(rng, 4), 4)
        diag = rng.normal(size=16)
        exact = exact_expectation(psi, diag)
        sd = np.sqrt(psi.probabilities() @ diag ** 2 - exact ** 2)
        assert abs(sampled_expectation(psi, diag, shots, seed=k) - exact) < 5 * sd / np.sqrt(shots)


def test_sampled_expectation_converges_with_shots():
    rng = np.random.default_rng(9)
    psi = StateVector(random_state(rng, 4), 4)
    diag = rng.normal(size=16)
    exact = exact_expectation(psi, diag)
    errs = [np.mean([abs(sampled_expectation(psi, diag, shots, seed=k) - exact) for k in range(5)])
            for shots in (100, 10_000, 1_000_000)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.01


def test_amplitude_csv():
    text = dump_amplitudes_csv(apply_gate(zero_state(2), Gate("H", 1)))
    lines = text.strip().splitlines()
    assert lines[0] == "index,re,im" and len(lines) == 5
    assert float(lines[2].split(",")[1]) == pytest.approx(1 / np.sqrt(2))
