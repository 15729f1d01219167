"""Classical baseline: a small ReLU network mapping specifications to voltages.

The network outputs the real and imaginary parts of a padded voltage vector
and is trained on the same physics residual as the quantum model,
``sum_s (v^H H_s v - b_s)^2``, with hand-written backpropagation.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid_model import SpecSet, nmae
from .solver import TrainConfig, TrainTrace
from .vqc import Normalizer, normalize_data


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden: tuple[int, ...] = (10, 10)
    output_dim: int = 32

    def __post_init__(self):
        widths = (self.input_dim,) + tuple(self.hidden) + (self.output_dim,)
        if min(widths) < 1:
            raise ValueError("all layer widths must be at least 1")
        if self.output_dim % 2:
            raise ValueError("output holds real and imaginary halves; width must be even")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(self.hidden) + (self.output_dim,)

    @property
    def n_weights(self) -> int:
        w = self.widths
        return sum((a + 1) * b for a, b in zip(w[:-1], w[1:]))


@dataclass
class MlpWeights:
    mats: list[np.ndarray]  # (fan_out, fan_in)
    biases: list[np.ndarray]

    def check(self, cfg: MlpConfig) -> None:
        w = cfg.widths
        shapes = [(b, a) for a, b in zip(w[:-1], w[1:])]
        if [m.shape for m in self.mats] != shapes or [b.shape for b in self.biases] != [(s[0],) for s in shapes]:
            raise ValueError("weight shapes do not match the network configuration")

    def flat(self) -> np.ndarray:
        return np.concatenate([x.ravel() for pair in zip(self.mats, self.biases) for x in pair])

    @classmethod
    def from_flat(cls, cfg: MlpConfig, vec: np.ndarray) -> "MlpWeights":
        w = cfg.widths
        mats, biases, k = [], [], 0
        for a, b in zip(w[:-1], w[1:]):
            mats.append(vec[k:k + a * b].reshape(b, a))
            k += a * b
            biases.append(vec[k:k + b].copy())
            k += b
        if k != len(vec):
            raise ValueError("flat weight vector has the wrong length")
        return cls(mats, biases)


def init_weights(cfg: MlpConfig, seed: int = 0) -> MlpWeights:
    """Uniform in ``+-1/sqrt(fan_in)`` for every weight and bias."""
    rng = np.random.default_rng(seed)
    w = cfg.widths
    mats, biases = [], []
    for a, b in zip(w[:-1], w[1:]):
        bound = 1 / math.sqrt(a)
        mats.append(rng.uniform(-bound, bound, (b, a)))
        biases.append(rng.uniform(-bound, bound, b))
    return MlpWeights(mats, biases)


def _layers(weights: MlpWeights, x: np.ndarray):
    """Forward pass keeping pre-activations; ``x`` is (T, input_dim)."""
    acts, pre = [x], []
    last = len(weights.mats) - 1
    for k, (m, c) in enumerate(zip(weights.mats, weights.biases)):
        z = acts[-1] @ m.T + c
        pre.append(z)
        acts.append(z if k == last else np.maximum(z, 0.0))
    return acts, pre


def forward(cfg: MlpConfig, weights: MlpWeights, x: np.ndarray) -> np.ndarray:
    """Complex voltages for (a batch of) normalized inputs."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != cfg.input_dim:
        raise ValueError(f"expected {cfg.input_dim} inputs, got {x.shape[-1]}")
    out = _layers(weights, np.atleast_2d(x))[0][-1]
    half = cfg.output_dim // 2
    v = out[:, :half] + 1j * out[:, half:]
    return v if x.ndim > 1 else v[0]


def _spec_values(specs: SpecSet, v: np.ndarray) -> np.ndarray:
    return np.einsum("ti,sij,tj->ts", v.conj(), _padded(specs, v.shape[-1]), v).real


def _padded(specs: SpecSet, dim: int) -> np.ndarray:
    h = specs.h
    if dim == h.shape[-1]:
        return h
    if dim < specs.n_buses:
        raise ValueError("network output holds fewer voltages than buses")
    out = np.zeros((len(h), dim, dim), dtype=complex)
    k = min(dim, h.shape[-1])
    out[:, :k, :k] = h[:, :k, :k]
    return out


def loss_and_grad(cfg: MlpConfig, weights: MlpWeights, specs: SpecSet, x: np.ndarray,
                  bs: np.ndarray) -> tuple[float, MlpWeights, np.ndarray, np.ndarray]:
    """Batch-averaged residual loss, its gradient, predicted specs and voltages."""
    acts, pre = _layers(weights, x)
    half = cfg.output_dim // 2
    out = acts[-1]
    v = out[:, :half] + 1j * out[:, half:]
    h = _padded(specs, half)
    hv = (v @ h.reshape(-1, half).T).reshape(len(v), len(h), half)  # (T, S, N)
    f = np.einsum("ti,tsi->ts", v.conj(), hv).real
    r = f - bs
    t_count = len(x)
    loss = float(np.sum(r ** 2)) / t_count
    # dF_s/dRe v = 2 Re(H_s v), dF_s/dIm v = 2 Im(H_s v)
    dv = np.einsum("ts,tsi->ti", 4 * r, hv) / t_count
    # ``dv`` packs dL/dRe v + i dL/dIm v
    delta = np.concatenate([dv.real, dv.imag], axis=1)
    g_mats, g_biases = [None] * len(weights.mats), [None] * len(weights.mats)
    for k in range(len(weights.mats) - 1, -1, -1):
        g_mats[k] = delta.T @ acts[k]
        g_biases[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ weights.mats[k]) * (pre[k - 1] > 0)
    return loss, MlpWeights(g_mats, g_biases), f, v


@dataclass
class DnnModel:
    config: MlpConfig
    weights: MlpWeights
    normalizer: Normalizer
    meta: dict = field(default_factory=dict)

    def predict_voltages(self, instances: np.ndarray) -> np.ndarray:
        return forward(self.config, self.weights, self.normalizer(np.atleast_2d(instances)))

    def to_json(self) -> str:
        doc = {
            "model": "dnn",
            "config": asdict(self.config),
            "n_weights": self.config.n_weights,
            "mats": [m.tolist() for m in self.weights.mats],
            "biases": [b.tolist() for b in self.weights.biases],
            "normalizer": self.normalizer.to_dict(),
            "meta": self.meta,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DnnModel":
        doc = json.loads(text)
        if doc.get("model") != "dnn":
            raise ValueError("not a DNN model artifact")
        c = doc["config"]
        cfg = MlpConfig(c["input_dim"], tuple(c["hidden"]), c["output_dim"])
        weights = MlpWeights([np.array(m, dtype=float) for m in doc["mats"]],
                             [np.array(b, dtype=float) for b in doc["biases"]])
        weights.check(cfg)
        return cls(cfg, weights, Normalizer.from_dict(doc["normalizer"]), doc.get("meta", {}))


def train_dnn(cfg: MlpConfig, specs: SpecSet, instances: np.ndarray, train: TrainConfig,
              normalizer: Normalizer | None = None, weights: MlpWeights | None = None) -> tuple[DnnModel, TrainTrace]:
    """Gradient descent with step ``mu_theta * decay**k`` on the residual loss.

    Raises :class:`DivergenceError` once the objective exceeds 1000 times its
    starting value.  The trace's ``alpha`` column holds the mean ``||v||^2``.
    """
    instances = np.asarray(instances, dtype=float)
    if normalizer is None:
        x_all, normalizer = normalize_data(instances)
    else:
        x_all = normalizer(instances)
    weights = init_weights(cfg, train.seed) if weights is None else weights
    weights.check(cfg)
    vec = weights.flat()
    rng = np.random.default_rng(train.seed)
    t_count = len(instances)
    full = train.batch_size <= 0 or train.batch_size >= t_count
    trace = TrainTrace()
    trace.reason = "max_iters"
    best = (math.inf, vec.copy())
    first = None
    for k in range(train.max_iters):
        idx = np.arange(t_count) if full else rng.integers(0, t_count, train.batch_size)
        w = MlpWeights.from_flat(cfg, vec)
        loss, grad, f, v = loss_and_grad(cfg, w, specs, x_all[idx], instances[idx])
        g = grad.flat()
        norm = float(np.linalg.norm(g))
        scale = float(np.mean(np.sum(np.abs(v) ** 2, axis=1)))
        err = float(np.mean([nmae(fi, bi) for fi, bi in zip(f, instances[idx])]))
        trace.append(iter=k, objective=loss, nmae=err, grad_norm=norm, alpha=scale)
        first = loss if first is None else first
        if not np.isfinite(loss) or loss > 1e3 * first:
            raise DivergenceError(f"objective {loss:.3g} at iteration {k} exceeds 1000x the initial {first:.3g}; "
                                  "lower the step size")
        if loss < best[0]:
            best = (loss, vec.copy())
        if norm < train.grad_tol:
            trace.reason = "grad_tol"
            best = (loss, vec.copy())
            break
        vec = vec - train.mu_theta * train.decay ** k * g
    model = DnnModel(cfg, MlpWeights.from_flat(cfg, best[1]), normalizer,
                     meta={"iterations": len(trace), "reason": trace.reason, "n_weights": cfg.n_weights})
    return model, trace


def evaluate_dnn(model: DnnModel, specs: SpecSet, instances: np.ndarray) -> np.ndarray:
    instances = np.atleast_2d(np.asarray(instances, dtype=float))
    v = model.predict_voltages(instances)
    b_hat = _spec_values(specs, v)
    return np.array([nmae(bh, b) for bh, b in zip(b_hat, instances)])
