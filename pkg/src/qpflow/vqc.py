"""Circuit builders for the trainable ansatz and the data-embedding block."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .qsim import CircuitSpec, Gate, Slot, shifted_unitaries

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class AnsatzConfig:
    """Hardware-efficient ansatz: an initial rotation layer, then ``layers`` blocks
    of per-qubit rotations followed by a cyclic CNOT ring.

    With the defaults the weight count is ``n + 2 n L`` (28 for n=4, L=3).
    """

    n_qubits: int
    layers: int
    initial: tuple[str, ...] = ("RY",)
    rotations: tuple[str, ...] = ("RY", "RZ")
    entanglement: str = "cyclic_cnot"

    @property
    def n_params(self) -> int:
        return self.n_qubits * (len(self.initial) + len(self.rotations) * self.layers)


@dataclass(frozen=True)
class EmbeddingConfig:
    s_len: int
    n_qubits: int
    repetitions: int = 1
    gates: tuple[str, ...] = ("RY",)

    @property
    def depth(self) -> int:
        return math.ceil(self.s_len / self.n_qubits)

    @property
    def n_slots(self) -> int:
        return self.depth * self.n_qubits


def cnot_ring(n: int) -> list[Gate]:
    if n < 2:
        return []
    if n == 2:
        return [Gate("CNOT", 1, control=0), Gate("CNOT", 0, control=1)]
    return [Gate("CNOT", (q + 1) % n, control=q) for q in range(n)]


def build_ansatz(cfg: AnsatzConfig) -> CircuitSpec:
    n = cfg.n_qubits
    gates = []
    k = 0

    def rotation_layer(kind):
        nonlocal k
        for q in range(n):
            gates.append(Gate(kind, q, param=Slot("weight", k)))
            k += 1

    for kind in cfg.initial:
        rotation_layer(kind)
    for _ in range(cfg.layers):
        for kind in cfg.rotations:
            rotation_layer(kind)
        if cfg.entanglement == "cyclic_cnot":
            gates.extend(cnot_ring(n))
        else:
            raise ValueError(f"unknown entanglement pattern {cfg.entanglement}")
    return CircuitSpec(n, gates)


def build_embedding(cfg: EmbeddingConfig) -> CircuitSpec:
    """Data block: qubit ``q`` carries entries ``q*d .. q*d + d - 1`` of the padded data.

    Repetitions re-upload the same slots.  Gate kinds cycle through ``cfg.gates``
    along the depth of each qubit.
    """
    n, d = cfg.n_qubits, cfg.depth
    gates = []
    for _ in range(cfg.repetitions):
        for k in range(d):
            kind = cfg.gates[k % len(cfg.gates)]
            for q in range(n):
                gates.append(Gate(kind, q, param=Slot("data", q * d + k)))
    return CircuitSpec(n, gates)


def pad_data(b: np.ndarray, cfg: EmbeddingConfig) -> np.ndarray:
    """Zero-pad (the last axis of) ``b`` up to the embedding slot count."""
    b = np.asarray(b, dtype=float)
    extra = cfg.n_slots - b.shape[-1]
    if extra < 0:
        raise ValueError("data longer than the embedding")
    return np.pad(b, [(0, 0)] * (b.ndim - 1) + [(0, extra)])


@dataclass
class Normalizer:
    """Per-entry affine map onto ``[0, 2 pi]`` fitted on a training batch."""

    offset: np.ndarray
    scale: np.ndarray

    def __call__(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        live = self.scale > 0
        out = np.zeros_like(b)
        out[..., live] = TWO_PI * (b[..., live] - self.offset[live]) / self.scale[live]
        return np.clip(out, 0.0, TWO_PI)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return self.offset + np.asarray(z, dtype=float) * self.scale / TWO_PI

    def to_dict(self) -> dict:
        return {"offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        return cls(np.array(doc["offset"], dtype=float), np.array(doc["scale"], dtype=float))


def normalize_data(instances: np.ndarray) -> tuple[np.ndarray, Normalizer]:
    instances = np.asarray(instances, dtype=float)
    if instances.ndim != 2 or len(instances) == 0:
        raise ValueError("need a nonempty (T, S) batch")
    lo, hi = instances.min(axis=0), instances.max(axis=0)
    norm = Normalizer(lo, hi - lo)
    return norm(instances), norm


def flat_profile(n_buses: int, n_qubits: int) -> np.ndarray:
    phi = np.zeros(1 << n_qubits)
    phi[:n_buses] = 1 / np.sqrt(n_buses)
    return phi


def psr_shifts(theta: np.ndarray) -> np.ndarray:
    """Rows ``theta``, then ``theta + pi/2 e_p`` for all p, then ``theta - pi/2 e_p``."""
    p = len(theta)
    shift = np.pi / 2 * np.eye(p)
    return np.vstack([theta[None, :], theta + shift, theta - shift])


def fit_flat_init(ansatz: CircuitSpec, n_buses: int, target: float = 0.99,
                  max_iter: int = 2000, step: float = 0.5, restarts: int = 10,
                  seed: int = 0) -> tuple[np.ndarray, float]:
    """Weights whose state approximates the flat voltage profile.

    Gradient ascent on the fidelity ``|<phi_flat|psi(theta)>|^2`` with
    parameter-shift gradients, restarted from uniformly random angles until the
    fidelity reaches ``target``.  Each restart gets ``max_iter`` steps.  Returns
    the best weights seen and their fidelity, which may fall short of
    ``target`` once the restarts run out.
    """
    n = ansatz.n_qubits
    if (1 << n) < n_buses:
        raise ValueError(f"{n} qubits cannot hold {n_buses} buses")
    phi = flat_profile(n_buses, n)
    rng = np.random.default_rng(seed)
    p = ansatz.n_weights
    best, best_fid = np.zeros(p), -1.0
    for _ in range(restarts):
        theta = rng.uniform(0.0, TWO_PI, p)
        for _ in range(max_iter):
            amps = shifted_unitaries(ansatz, theta)[:, :, 0]
            fid = np.abs(amps @ phi) ** 2
            if fid[0] > best_fid:
                best, best_fid = theta.copy(), float(fid[0])
            if fid[0] >= target:
                return best, best_fid
            grad = 0.5 * (fid[1:p + 1] - fid[p + 1:])
            theta = theta + step * grad
    return best, best_fid


@dataclass
class QmlModel:
    """Everything needed to run inference with a trained data-embedded circuit."""

    ansatz: AnsatzConfig
    embedding: EmbeddingConfig
    normalizer: Normalizer
    theta: np.ndarray
    alpha: float
    meta: dict = field(default_factory=dict)

    def circuit(self) -> CircuitSpec:
        return build_embedding(self.embedding).then(build_ansatz(self.ansatz))

    def to_json(self) -> str:
        doc = {
            "model": "qml",
            "ansatz": asdict(self.ansatz),
            "embedding": asdict(self.embedding),
            "normalizer": self.normalizer.to_dict(),
            "theta": self.theta.tolist(),
            "alpha": float(self.alpha),
            "meta": self.meta,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "QmlModel":
        doc = json.loads(text)
        if doc.get("model") != "qml":
            raise ValueError("not a QML model artifact")
        a, e = doc["ansatz"], doc["embedding"]
        a["initial"], a["rotations"] = tuple(a["initial"]), tuple(a["rotations"])
        e["gates"] = tuple(e["gates"])
        return cls(AnsatzConfig(**a), EmbeddingConfig(**e), Normalizer.from_dict(doc["normalizer"]),
                   np.array(doc["theta"], dtype=float), float(doc["alpha"]), doc.get("meta", {}))
