"""Dense classifier head built from a chromosome, plus joint training.

The head is a plain MLP: rectifier hidden layers whose widths come from an
Architecture, ending in a single sigmoid unit for binary classification.
Training runs mini-batch SGD jointly through the head, a global average
pool, and the spatial attention gate in front of it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import data as _data
from .attention import SpatialAttention, attention_backward, attention_forward, attention_init
from .errors import ConfigError, ShapeError, ValidationError
from .tensor import Tensor, global_avg_pool

BCE_EPS = 1e-7

CHECKPOINT_FORMAT = "evoattn-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is malformed or internally inconsistent."""


@dataclass(frozen=True)
class Architecture:
    """Hidden-layer widths of a classifier head; the search genotype."""

    hidden_widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.hidden_widths)
        object.__setattr__(self, "hidden_widths", widths)
        if len(widths) < 1:
            raise ValidationError("architecture needs at least one hidden layer")
        if any(w < 1 for w in widths):
            raise ValidationError(f"layer widths must be >= 1, got {widths}")

    @classmethod
    def parse(cls, text: str) -> "Architecture":
        """Parse a dash-separated width list such as '66-805-218-382'."""
        try:
            widths = tuple(int(part) for part in text.strip().split("-"))
        except ValueError as exc:
            raise ValidationError(f"cannot parse architecture {text!r}") from exc
        return cls(widths)

    def __str__(self) -> str:
        return "-".join(str(w) for w in self.hidden_widths)

    def __len__(self) -> int:
        return len(self.hidden_widths)


class MlpHead:
    """Hidden layers from an Architecture plus a width-1 sigmoid output layer.

    Weight matrices are fan_in x fan_out, biases are per-output vectors.
    Parameters live in float64; they are rounded to float32 only when
    serialized into a checkpoint.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValidationError("weights and biases must be non-empty and parallel")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValidationError(f"layer {i} has inconsistent shapes {w.shape}, {b.shape}")
            if i > 0 and weights[i - 1].shape[1] != w.shape[0]:
                raise ValidationError(f"layer {i} fan_in {w.shape[0]} breaks the chain")
        if weights[-1].shape[1] != 1:
            raise ValidationError("output layer must have width 1")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpHead":
        return MlpHead([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass(frozen=True)
class HeadCache:
    activations: list[np.ndarray]  # layer inputs, index 0 is the feature vector
    pre_activations: list[np.ndarray]


def build_head(arch: Architecture, input_dim: int, rng: np.random.Generator) -> MlpHead:
    """Glorot-uniform weights, zero biases, deterministic given the rng state."""
    if input_dim < 1:
        raise ValidationError(f"input_dim must be >= 1, got {input_dim}")
    dims = [input_dim, *arch.hidden_widths, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpHead(weights, biases)


def _sigmoid_scalar(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _head_forward_vec(head: MlpHead, v: np.ndarray):
    activations = [v]
    pre_activations = []
    a = v
    last = len(head.weights) - 1
    for i, (w, b) in enumerate(zip(head.weights, head.biases)):
        z = a @ w + b
        pre_activations.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        activations.append(a)
    prob = _sigmoid_scalar(float(a[0]))
    return prob, HeadCache(activations, pre_activations)


def _head_backward_vec(head: MlpHead, cache: HeadCache, d_logit: float):
    grads_w = [None] * len(head.weights)
    grads_b = [None] * len(head.biases)
    d = np.array([d_logit], dtype=np.float64)
    d_input = None
    for i in reversed(range(len(head.weights))):
        grads_w[i] = np.outer(cache.activations[i], d)
        grads_b[i] = d.copy()
        d_prev = head.weights[i] @ d
        if i == 0:
            d_input = d_prev
        else:
            d = d_prev * (cache.pre_activations[i - 1] > 0)
    return grads_w, grads_b, d_input


def head_forward(head: MlpHead, features: Tensor):
    """Forward pass on a rank-1 feature tensor; returns (probability, cache)."""
    if features.rank != 1:
        raise ShapeError(f"features must be rank 1, got rank {features.rank}")
    if features.size != head.input_dim:
        raise ShapeError(f"feature length {features.size} != input_dim {head.input_dim}")
    return _head_forward_vec(head, features.array.astype(np.float64))


def bce_loss(prob: float, label: int) -> float:
    """Binary cross-entropy with the probability clamped to [eps, 1 - eps]."""
    if label not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {label}")
    p = min(max(prob, BCE_EPS), 1.0 - BCE_EPS)
    return -(label * math.log(p) + (1 - label) * math.log(1.0 - p))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


TRAIN_HISTORY_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"


def history_to_csv(history: list[EpochStats]) -> str:
    lines = [TRAIN_HISTORY_HEADER]
    for rec in history:
        lines.append(f"{rec.epoch},{rec.train_loss!r},{rec.train_acc!r},{rec.val_loss!r},{rec.val_acc!r}")
    return "\n".join(lines) + "\n"


@dataclass
class CompositeModel:
    """Spatial attention gate followed by a pooled dense head."""

    attention: SpatialAttention
    head: MlpHead

    @property
    def input_dim(self) -> int:
        return self.head.input_dim

    @property
    def kernel_size(self) -> int:
        return self.attention.kernel_size

    @property
    def architecture(self) -> Architecture:
        return Architecture(self.head.hidden_widths)

    def copy(self) -> "CompositeModel":
        return CompositeModel(self.attention, self.head.copy())


def build_composite(arch: Architecture, input_dim: int, kernel_size: int, seed: int) -> CompositeModel:
    """Deterministically initialize attention gate and head from one seed."""
    rng = np.random.default_rng(seed)
    layer = attention_init(kernel_size, rng)
    head = build_head(arch, input_dim, rng)
    return CompositeModel(layer, head)


@dataclass(frozen=True)
class _CompositeCache:
    attention: object
    head: HeadCache
    shape: tuple[int, ...]


def composite_forward(model: CompositeModel, x: Tensor):
    gated, _, att_cache = attention_forward(model.attention, x)
    pooled = global_avg_pool(gated)
    prob, head_cache = head_forward(model.head, pooled)
    return prob, _CompositeCache(att_cache, head_cache, x.shape)


def predict_prob(model: CompositeModel, x: Tensor) -> float:
    prob, _ = composite_forward(model, x)
    return prob


def predict(model: CompositeModel, x: Tensor, threshold: float = 0.5) -> int:
    """1 iff the predicted probability is >= threshold (boundary inclusive)."""
    return 1 if predict_prob(model, x) >= threshold else 0


def _evaluate(model: CompositeModel, samples, threshold: float = 0.5):
    total_loss = 0.0
    correct = 0
    for x, label in samples:
        prob, _ = composite_forward(model, x)
        total_loss += bce_loss(prob, label)
        correct += int((1 if prob >= threshold else 0) == label)
    n = len(samples)
    return total_loss / n, correct / n


def accuracy_on(model: CompositeModel, samples, threshold: float = 0.5) -> float:
    """Fraction of samples classified correctly."""
    if not samples:
        raise ConfigError("cannot evaluate an empty sample list")
    return _evaluate(model, samples, threshold)[1]


def _batch_gradients(model: CompositeModel, batch):
    att = model.attention
    k = att.kernel_size
    acc_kernel = np.zeros((k, k, 2))
    acc_bias = 0.0
    acc_w = [np.zeros_like(w) for w in model.head.weights]
    acc_b = [np.zeros_like(b) for b in model.head.biases]
    loss = 0.0
    for x, label in batch:
        prob, cache = composite_forward(model, x)
        loss += bce_loss(prob, label)
        d_logit = prob - label  # sigmoid + BCE
        grads_w, grads_b, d_vec = _head_backward_vec(model.head, cache.head, d_logit)
        h, w, c = cache.shape
        d_gated = Tensor.from_array(np.broadcast_to(d_vec / (h * w), (h, w, c)))
        _, d_kernel, d_bias = attention_backward(att, cache.attention, d_gated)
        acc_kernel += d_kernel.array
        acc_bias += d_bias
        for i in range(len(acc_w)):
            acc_w[i] += grads_w[i]
            acc_b[i] += grads_b[i]
    n = len(batch)
    return loss / n, acc_kernel / n, acc_bias / n, [g / n for g in acc_w], [g / n for g in acc_b]


def train(model: CompositeModel, train_samples, val_samples, config: TrainConfig):
    """Mini-batch SGD over shuffled batches; returns (trained copy, history).

    Shuffling is reseeded from config.seed, so identical inputs give a
    bit-identical history. The input model is never modified; epochs == 0
    returns an untouched copy and an empty history.
    """
    model = model.copy()
    history: list[EpochStats] = []
    if config.epochs == 0:
        return model, history
    if not train_samples:
        raise ConfigError("training split is empty")
    if not val_samples:
        raise ConfigError("validation split is empty")
    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_samples))
        for start in range(0, len(order), config.batch_size):
            batch = [train_samples[i] for i in order[start:start + config.batch_size]]
            _, g_kernel, g_bias, g_w, g_b = _batch_gradients(model, batch)
            kernel64 = model.attention.kernel.array.astype(np.float64) - lr * g_kernel
            model.attention = SpatialAttention(
                kernel=Tensor.from_array(kernel64),
                bias=model.attention.bias - lr * g_bias,
            )
            for i in range(len(model.head.weights)):
                model.head.weights[i] -= lr * g_w[i]
                model.head.biases[i] -= lr * g_b[i]
        train_loss, train_acc = _evaluate(model, train_samples)
        val_loss, val_acc = _evaluate(model, val_samples)
        history.append(EpochStats(epoch, train_loss, train_acc, val_loss, val_acc))
    return model, history


def _checkpoint_tensors(model: CompositeModel):
    entries = [
        ("attention.kernel", model.attention.kernel),
        ("attention.bias", Tensor((1,), [np.float32(model.attention.bias)])),
    ]
    for i, (w, b) in enumerate(zip(model.head.weights, model.head.biases)):
        entries.append((f"head.layer{i}.weight", Tensor.from_array(w)))
        entries.append((f"head.layer{i}.bias", Tensor.from_array(b)))
    return entries


def save_checkpoint(model: CompositeModel, path) -> None:
    """Single binary file: one JSON header line, then one FMAP blob per tensor."""
    entries = _checkpoint_tensors(model)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kernel_size": model.kernel_size,
        "input_dim": model.input_dim,
        "hidden_widths": list(model.head.hidden_widths),
        "tensors": [name for name, _ in entries],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, t in entries:
            _data.fmap_write(t, f)


def load_checkpoint(path) -> CompositeModel:
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: not a checkpoint header") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")
        tensors = {name: _data.fmap_read(f) for name in header["tensors"]}

    k = int(header["kernel_size"])
    kernel = tensors["attention.kernel"]
    if kernel.shape != (k, k, 2):
        raise CheckpointError(f"{path}: kernel shape {kernel.shape} != ({k}, {k}, 2)")
    bias = float(tensors["attention.bias"].array[0])
    attention = SpatialAttention(kernel=kernel, bias=bias)

    widths = [int(w) for w in header["hidden_widths"]]
    dims = [int(header["input_dim"]), *widths, 1]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = tensors[f"head.layer{i}.weight"]
        b = tensors[f"head.layer{i}.bias"]
        if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise CheckpointError(f"{path}: layer {i} shapes {w.shape}, {b.shape} do not chain")
        weights.append(w.array.astype(np.float64))
        biases.append(b.array.astype(np.float64))
    return CompositeModel(attention, MlpHead(weights, biases))
