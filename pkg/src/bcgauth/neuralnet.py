"""Small convolutional verifier written directly in numpy.

The network sees a ``(2, 3, T)`` BCG tensor (sensor source, axis, time).
The six sensor/axis rows are treated as input channels of a 1-D
convolution along time, so every kernel spans the full sensor/axis plane.
Topology and training settings come from a :class:`CnnGenome`; the output
is a single sigmoid unit read as the confidence that a segment belongs to
the enrolled subject.

Everything runs in float64 so finite-difference gradient checks can be
held to tight tolerances.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

RATE_HZ = 50
MODEL_FORMAT_VERSION = 1

TRAIT_DOMAINS: dict[str, tuple] = {
    "n_conv_layers": (1, 2, 3),
    "filters_per_layer": (4, 8, 16, 32),
    "kernel_time": (3, 5, 7, 9, 11),
    "pool_time": (1, 2, 3),
    "conv_activation": ("relu", "tanh"),
    "n_dense_layers": (1, 2),
    "dense_units": (16, 32, 64, 128),
    "dropout_rate": (0.0, 0.25, 0.5),
    "learning_rate": (1e-2, 1e-3, 1e-4),
    "batch_size": (16, 32, 64),
}

MOMENTUM = 0.9
DEFAULT_EPOCHS = 100


class InvalidGenomeError(ValueError):
    """Genome outside its trait domains, or one that collapses the time axis."""


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class CnnGenome:
    """The ten hyperparameter traits that define a verifier network."""

    n_conv_layers: int = 1
    filters_per_layer: int = 8
    kernel_time: int = 7
    pool_time: int = 3
    conv_activation: str = "relu"
    n_dense_layers: int = 1
    dense_units: int = 32
    dropout_rate: float = 0.25
    learning_rate: float = 1e-2
    batch_size: int = 32

    def traits(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CnnGenome":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidGenomeError(f"unknown traits: {sorted(unknown)}")
        return cls(**d)

    def check_domains(self) -> None:
        for name, domain in TRAIT_DOMAINS.items():
            if getattr(self, name) not in domain:
                raise InvalidGenomeError(
                    f"trait {name}={getattr(self, name)!r} not in {domain}"
                )

    def time_lengths(self, w_s: int) -> list[int]:
        """Time-axis length after each conv and pool stage, input first."""
        t = w_s * RATE_HZ
        lengths = [t]
        for _ in range(self.n_conv_layers):
            t = t - self.kernel_time + 1
            lengths.append(t)
            if t < 1:
                break
            t = t // self.pool_time
            lengths.append(t)
            if t < 1:
                break
        return lengths

    def is_valid(self, w_s: int) -> bool:
        try:
            self.validate(w_s)
        except InvalidGenomeError:
            return False
        return True

    def validate(self, w_s: int) -> None:
        self.check_domains()
        lengths = self.time_lengths(w_s)
        if min(lengths) < 1:
            raise InvalidGenomeError(
                f"time axis collapses for w={w_s}: stage lengths {lengths}"
            )


DEFAULT_GENOME = CnnGenome()


def genome_to_json(genome: CnnGenome) -> str:
    return json.dumps(genome.traits(), indent=2, sort_keys=True) + "\n"


def genome_from_json(text: str) -> CnnGenome:
    d = json.loads(text)
    if "genome" in d and isinstance(d["genome"], dict):
        d = d["genome"]
    return CnnGenome.from_dict(d)


@dataclass
class TrainSet:
    """Positive (enrolled subject) and negative (other subjects) tensors."""

    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        self.positives = np.asarray(self.positives, dtype=np.float64)
        self.negatives = np.asarray(self.negatives, dtype=np.float64)

    def check(self) -> None:
        if len(self.positives) == 0 or len(self.negatives) == 0:
            raise TrainingError(
                f"both classes must be non-empty "
                f"(got {len(self.positives)} positives, {len(self.negatives)} negatives)"
            )


@dataclass
class TrainReport:
    epochs_run: int
    loss_curve: list[float]
    final_loss: float
    seed: int
    train_accuracy: float = field(default=float("nan"))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce_from_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    # log(1 + exp(z)) - y*z, stable for large |z|
    return np.logaddexp(0.0, z) - y * z


def _maxpool(a: np.ndarray, p: int):
    """Non-overlapping max pool along axis 1; the remainder is dropped.

    Returns pooled values and the winning offset (first maximum) per cell.
    """
    tp = a.shape[1] // p
    out = a[:, 0 : tp * p : p].copy()
    idx = np.zeros(out.shape, dtype=np.int8)
    for j in range(1, p):
        cand = a[:, j : tp * p : p]
        better = cand > out
        np.copyto(out, cand, where=better)
        idx[better] = j
    return out, idx


def class_weights(labels: np.ndarray) -> np.ndarray:
    """Per-example weights giving each class present half the batch's weight.

    A batch of ``p`` positives and ``n`` negatives gets weights
    ``B/(2p)`` and ``B/(2n)`` so both classes sum to ``B/2``. A batch
    holding a single class is weighted 1/2 per example, so the per-class
    total is still ``B/2``.
    """
    labels = np.asarray(labels)
    b = len(labels)
    w = np.empty(b, dtype=np.float64)
    for cls in (0, 1):
        m = labels == cls
        c = int(m.sum())
        if c:
            w[m] = b / (2.0 * c)
    return w


class CnnModel:
    """Genome-parameterized CNN with a single sigmoid output."""

    def __init__(self, genome: CnnGenome, w_s: int, params: list[np.ndarray]):
        self.genome = genome
        self.w_s = int(w_s)
        self.params = params

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (2, 3, self.w_s * RATE_HZ)

    # ---- layout -------------------------------------------------------
    def _conv_params(self):
        g = self.genome
        return [(self.params[2 * i], self.params[2 * i + 1]) for i in range(g.n_conv_layers)]

    def _dense_params(self):
        g = self.genome
        off = 2 * g.n_conv_layers
        n = g.n_dense_layers + 1
        return [(self.params[off + 2 * i], self.params[off + 2 * i + 1]) for i in range(n)]

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params))

    # ---- forward / backward ------------------------------------------
    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ValueError(
                f"expected input shape {self.input_shape} or (N, *{self.input_shape}), got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains non-finite values")
        n, _, _, t = x.shape
        # (N, 2, 3, T) -> (N, T, 6): time-major so conv windows are contiguous
        return np.ascontiguousarray(x.reshape(n, 6, t).transpose(0, 2, 1))

    def _forward(self, h: np.ndarray, rng: np.random.Generator | None = None):
        """Forward pass on (N, T, 6) input; returns logits and a backprop cache."""
        g = self.genome
        cache = {"conv": [], "dense": []}
        for w, b in self._conv_params():
            c_in, k, f = w.shape
            n, t, _ = h.shape
            t_out = t - k + 1
            cols = sliding_window_view(h, k, axis=1).reshape(n * t_out, c_in * k)
            z = (cols @ w.reshape(c_in * k, f) + b).reshape(n, t_out, f)
            a = _act(g.conv_activation, z)
            p = g.pool_time
            if p > 1:
                out, idx = _maxpool(a, p)
            else:
                idx = None
                out = a
            cache["conv"].append((h.shape, cols, z, a, idx))
            h = out
        n = h.shape[0]
        cache["flat_shape"] = h.shape
        h = h.reshape(n, -1)
        dense = self._dense_params()
        for w, b in dense[:-1]:
            z = h @ w + b
            a = np.maximum(z, 0.0)
            mask = None
            if rng is not None and g.dropout_rate > 0.0:
                keep = 1.0 - g.dropout_rate
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            cache["dense"].append((h, z, mask))
            h = a
        w, b = dense[-1]
        logits = (h @ w + b)[:, 0]
        cache["last_in"] = h
        return logits, cache

    def _backward(self, dlogits: np.ndarray, cache) -> list[np.ndarray]:
        g = self.genome
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        off = 2 * g.n_conv_layers
        dense = self._dense_params()
        n_dense = len(dense)

        w, _ = dense[-1]
        h = cache["last_in"]
        d = dlogits[:, None]
        grads[off + 2 * (n_dense - 1)] = h.T @ d
        grads[off + 2 * (n_dense - 1) + 1] = d.sum(axis=0)
        dh = d @ w.T
        for i in range(n_dense - 2, -1, -1):
            w, _ = dense[i]
            h_in, z, mask = cache["dense"][i]
            if mask is not None:
                dh = dh * mask
            dz = dh * (z > 0.0)
            grads[off + 2 * i] = h_in.T @ dz
            grads[off + 2 * i + 1] = dz.sum(axis=0)
            dh = dz @ w.T

        dh = dh.reshape(cache["flat_shape"])
        convs = self._conv_params()
        for i in range(len(convs) - 1, -1, -1):
            w, _ = convs[i]
            c_in, k, f = w.shape
            in_shape, cols, z, a, idx = cache["conv"][i]
            n, t_out, _ = z.shape
            p = g.pool_time
            if p > 1:
                da = np.zeros_like(a)
                tp = t_out // p
                for j in range(p):
                    da[:, j : tp * p : p] = dh * (idx == j)
            else:
                da = dh
            dz = (da * _act_grad(g.conv_activation, z, a)).reshape(n * t_out, f)
            grads[2 * i] = (cols.T @ dz).reshape(c_in, k, f)
            grads[2 * i + 1] = dz.sum(axis=0)
            if i > 0:
                dcols = (dz @ w.reshape(c_in * k, f).T).reshape(n, t_out, c_in, k)
                dh = np.zeros(in_shape)
                for j in range(k):
                    dh[:, j : j + t_out, :] += dcols[:, :, :, j]
        return grads

    def activation_pattern(self, x: np.ndarray) -> bytes:
        """Fingerprint of every ReLU sign and max-pool winner for one input.

        Two parameter settings with the same fingerprint lie on the same
        smooth piece of the loss surface.
        """
        _, cache = self._forward(self._prepare(x))
        parts = []
        for _, _, z, _, idx in cache["conv"]:
            if self.genome.conv_activation == "relu":
                parts.append(np.packbits(z > 0).tobytes())
            if idx is not None:
                parts.append(idx.astype(np.int16).tobytes())
        for _, z, _ in cache["dense"]:
            parts.append(np.packbits(z > 0).tobytes())
        return b"|".join(parts)

    def logits(self, x: np.ndarray, batch: int = 128) -> np.ndarray:
        h = self._prepare(x)
        out = [self._forward(h[i : i + batch])[0] for i in range(0, len(h), batch)]
        return np.concatenate(out) if out else np.zeros(0)

    def predict(self, x: np.ndarray, batch: int = 128) -> np.ndarray:
        """Confidence in [0, 1] for each tensor in ``x`` (dropout off)."""
        return _sigmoid(self.logits(x, batch))

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None,
                       rng: np.random.Generator | None = None):
        h = self._prepare(x)
        return self._loss_and_grads(h, np.asarray(y, dtype=np.float64), weights, rng)

    def _loss_and_grads(self, h, y, weights, rng):
        logits, cache = self._forward(h, rng)
        n = len(y)
        if weights is None:
            weights = np.ones(n)
        loss = float(np.sum(weights * _bce_from_logits(logits, y)) / n)
        dlogits = weights * (_sigmoid(logits) - y) / n
        return loss, self._backward(dlogits, cache)

    # ---- serialization -----------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "bcgauth-cnn",
            "version": MODEL_FORMAT_VERSION,
            "w_s": self.w_s,
            "genome": self.genome.traits(),
            "params": [{"shape": list(p.shape), "data": p.ravel().tolist()} for p in self.params],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CnnModel":
        if d.get("format") != "bcgauth-cnn" or d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError("not a bcgauth model file (format/version mismatch)")
        genome = CnnGenome.from_dict(d["genome"])
        params = [np.asarray(p["data"], dtype=np.float64).reshape(p["shape"]) for p in d["params"]]
        model = cls(genome, d["w_s"], params)
        ref = build_model(genome, d["w_s"], seed=0)
        if [p.shape for p in ref.params] != [p.shape for p in params]:
            raise ValueError("parameter shapes do not match the stored genome")
        return model

    def save(self, path: str | Path) -> None:
        from .io_utils import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CnnModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_model(genome: CnnGenome, w_s: int, seed: int) -> CnnModel:
    """Initialise a model for ``w_s``-second segments.

    Weights are uniform in ``±sqrt(6/fan_in)`` for ReLU layers and
    ``±sqrt(3/fan_in)`` for tanh layers and the output unit; biases are zero.
    """
    genome.validate(w_s)
    rng = np.random.default_rng(seed)
    params: list[np.ndarray] = []
    relu_conv = genome.conv_activation == "relu"

    def uniform(shape, fan_in, relu):
        limit = math.sqrt((6.0 if relu else 3.0) / fan_in)
        return rng.uniform(-limit, limit, size=shape)

    c_in = 6
    for _ in range(genome.n_conv_layers):
        k, f = genome.kernel_time, genome.filters_per_layer
        params.append(uniform((c_in, k, f), c_in * k, relu_conv))
        params.append(np.zeros(f))
        c_in = f
    flat = genome.time_lengths(w_s)[-1] * genome.filters_per_layer
    for _ in range(genome.n_dense_layers):
        params.append(uniform((flat, genome.dense_units), flat, True))
        params.append(np.zeros(genome.dense_units))
        flat = genome.dense_units
    params.append(uniform((flat, 1), flat, False))
    params.append(np.zeros(1))
    return CnnModel(genome, w_s, params)


def forward(model: CnnModel, x: np.ndarray) -> float:
    """Confidence for a single segment tensor."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ValueError(f"expected shape {model.input_shape}, got {x.shape}")
    return float(model.predict(x)[0])


def train(model: CnnModel, data: TrainSet, seed: int, epochs: int = DEFAULT_EPOCHS,
          class_weighting: bool = True) -> TrainReport:
    """Mini-batch gradient descent with momentum on class-weighted BCE.

    The model is updated in place. Shuffling and dropout both draw from a
    generator seeded with ``seed``, so identical inputs give identical
    parameters.
    """
    data.check()
    g = model.genome
    x = np.concatenate([data.positives, data.negatives])
    y = np.concatenate([np.ones(len(data.positives)), np.zeros(len(data.negatives))])
    h_all = model._prepare(x)
    n = len(y)
    rng = np.random.default_rng(seed)
    velocity = [np.zeros_like(p) for p in model.params]
    lr = g.learning_rate
    bs = g.batch_size

    curve: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            yb = y[idx]
            wb = class_weights(yb) if class_weighting else None
            loss, grads = model._loss_and_grads(h_all[idx], yb, wb, rng)
            for p, v, gr in zip(model.params, velocity, grads):
                v *= MOMENTUM
                v -= lr * gr
                p += v
            total += loss * len(idx)
            count += len(idx)
        curve.append(total / count)

    conf = model.predict(x)
    acc = float(np.mean((conf > 0.5) == (y == 1)))
    return TrainReport(
        epochs_run=epochs,
        loss_curve=curve,
        final_loss=curve[-1] if curve else float("nan"),
        seed=seed,
        train_accuracy=acc,
    )


def grad_check(model: CnnModel, x: np.ndarray, label: int, seed: int = 0,
               per_param: int = 8, step: float = 1e-5, floor: float = 1e-8) -> float:
    """Largest relative error between backprop and central differences.

    Samples up to ``per_param`` entries from each parameter array. An entry
    is skipped when the ``±step`` perturbation changes the activation
    pattern (a ReLU or max-pool kink lies inside the stencil), or when both
    gradients are below ``floor``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.array([float(label)])
    _, grads = model.loss_and_grads(x, y)
    rng = np.random.default_rng(seed)
    worst = 0.0

    def loss_at() -> float:
        return model.loss_and_grads(x, y)[0]

    for p, gr in zip(model.params, grads):
        flat = p.reshape(-1)
        gflat = gr.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_param, flat.size), replace=False)
        for j in picks:
            orig = flat[j]
            flat[j] = orig + step
            lp, pat_p = loss_at(), model.activation_pattern(x)
            flat[j] = orig - step
            lm, pat_m = loss_at(), model.activation_pattern(x)
            flat[j] = orig
            if pat_p != pat_m:
                continue
            num = (lp - lm) / (2 * step)
            ana = gflat[j]
            scale = max(abs(num), abs(ana))
            if scale < floor:
                continue
            worst = max(worst, abs(num - ana) / scale)
    return worst


def accuracy_at(model: CnnModel, x: np.ndarray, y: Sequence[int], threshold: float = 0.5) -> float:
    conf = model.predict(x)
    return float(np.mean((conf > threshold) == (np.asarray(y) == 1)))
