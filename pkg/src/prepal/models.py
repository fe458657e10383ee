"""Classifier heads trained on frozen representations.

A ProbeModel is a softmax classifier with zero or more ReLU hidden
layers. Everything is plain numpy in float64; training is full-batch (or
minibatch) Adam with early stopping on training loss, and is bitwise
deterministic for a fixed (data, config, seed) triple.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import atomic_write_bytes
from .errors import (
    FormatError,
    NumericalFailureError,
    UnsupportedModelError,
    ValidationError,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_CKPT_MAGIC = b"PRBM"


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings. minibatch_size=0 means full batch."""

    learning_rate: float = 1e-2
    max_epochs: int = 500
    minibatch_size: int = 0
    early_stop_patience: int = 20
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be at least 1")
        if self.minibatch_size < 0:
            raise ValidationError("minibatch_size must be 0 (full batch) or positive")
        if self.early_stop_patience < 1:
            raise ValidationError("early_stop_patience must be at least 1")


@dataclass
class ProbeModel:
    """Softmax classifier; widths=() is plain multinomial logistic regression."""

    feature_dim: int
    num_classes: int
    widths: tuple
    dropout_rate: float
    weights: list
    biases: list

    @property
    def is_linear(self) -> bool:
        return len(self.widths) == 0

    def logits(self, features: np.ndarray) -> np.ndarray:
        act = np.asarray(features, dtype=np.float64)
        if act.shape[-1] != self.feature_dim:
            raise ValidationError(
                f"feature width {act.shape[-1]} does not match model d={self.feature_dim}"
            )
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            act = np.maximum(act @ w + b, 0.0)
        return act @ self.weights[-1] + self.biases[-1]

    def hidden_activations(self, features: np.ndarray) -> np.ndarray:
        """Representation feeding the output layer; the input itself if linear."""
        act = np.asarray(features, dtype=np.float64)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            act = np.maximum(act @ w + b, 0.0)
        return act


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def init_model(
    feature_dim: int,
    num_classes: int,
    widths: tuple = (),
    dropout_rate: float = 0.0,
    seed: int = 0,
) -> ProbeModel:
    """Weights ~ N(0, 1/fan_in), biases zero, drawn layer by layer."""
    if num_classes < 2:
        raise ValidationError("num_classes must be at least 2")
    if not (0.0 <= dropout_rate < 1.0):
        raise ValidationError("dropout_rate must be in [0, 1)")
    rng = np.random.default_rng(seed)
    dims = [feature_dim, *widths, num_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return ProbeModel(
        feature_dim=feature_dim,
        num_classes=num_classes,
        widths=tuple(int(w) for w in widths),
        dropout_rate=float(dropout_rate),
        weights=weights,
        biases=biases,
    )


def _forward(model: ProbeModel, x: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    acts = [x]
    pre = []
    act = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = act @ w + b
        pre.append(z)
        act = np.maximum(z, 0.0)
        acts.append(act)
    logits = act @ model.weights[-1] + model.biases[-1]
    return acts, pre, logits


def _backward(model: ProbeModel, acts, pre, logits, labels):
    """Mean cross-entropy gradients, layer order matching the weights lists."""
    n = len(labels)
    probs = softmax(logits)
    g = probs
    g[np.arange(n), labels] -= 1.0
    g /= n
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ g
        grads_b[layer] = g.sum(axis=0)
        if layer > 0:
            g = (g @ model.weights[layer].T) * (pre[layer - 1] > 0)
    return grads_w, grads_b


def train_probe(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    config: TrainConfig,
    widths: tuple = (),
    dropout_rate: float = 0.0,
) -> ProbeModel:
    """Fit from a fresh seeded init; returns the lowest-training-loss epoch.

    The returned parameters always have loss <= the loss at initialization
    because the init itself is the first candidate.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2:
        raise ValidationError(f"features must be 2-D, got shape {x.shape}")
    if len(x) != len(y):
        raise ValidationError(f"{len(x)} feature rows but {len(y)} labels")
    if len(x) == 0:
        raise ValidationError("cannot train on an empty labeled set")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValidationError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{y.min()}, {y.max()}]"
        )
    if len(np.unique(y)) == 1:
        warnings.warn(
            f"training set contains a single class ({int(y[0])}); "
            "the fitted model is degenerate",
            stacklevel=2,
        )

    model = init_model(
        x.shape[1], num_classes, widths=widths, dropout_rate=dropout_rate,
        seed=config.rng_seed,
    )
    rng = np.random.default_rng(config.rng_seed)

    params = model.weights + model.biases
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    step = 0

    def full_loss():
        return cross_entropy(model.logits(x), y)

    best_loss = full_loss()
    if not np.isfinite(best_loss):
        raise NumericalFailureError("non-finite loss at initialization", epoch=0)
    best_params = [p.copy() for p in params]
    since_best = 0

    n = len(x)
    batch = config.minibatch_size if 0 < config.minibatch_size < n else n

    for epoch in range(1, config.max_epochs + 1):
        if batch == n:
            order = np.arange(n)
        else:
            order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            acts, pre, logits = _forward(model, x[idx])
            grads_w, grads_b = _backward(model, acts, pre, logits, y[idx])
            grads = grads_w + grads_b
            step += 1
            bc1 = 1.0 - ADAM_BETA1 ** step
            bc2 = 1.0 - ADAM_BETA2 ** step
            for p, g, mom, vel in zip(params, grads, m_state, v_state):
                mom *= ADAM_BETA1
                mom += (1 - ADAM_BETA1) * g
                vel *= ADAM_BETA2
                vel += (1 - ADAM_BETA2) * g * g
                p -= config.learning_rate * (mom / bc1) / (
                    np.sqrt(vel / bc2) + ADAM_EPS
                )

        loss = full_loss()
        if not np.isfinite(loss):
            raise NumericalFailureError(
                f"non-finite training loss at epoch {epoch}", epoch=epoch
            )
        if loss < best_loss:
            best_loss = loss
            best_params = [p.copy() for p in params]
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                break

    k = len(model.weights)
    model.weights = best_params[:k]
    model.biases = best_params[k:]
    return model


def predict_proba(model: ProbeModel, features: np.ndarray) -> np.ndarray:
    return softmax(model.logits(features))


def accuracy(model: ProbeModel, features: np.ndarray, labels: np.ndarray) -> float:
    preds = model.logits(features).argmax(axis=1)
    return float((preds == np.asarray(labels, dtype=np.int64)).mean())


def predict_proba_mc(
    model: ProbeModel,
    features: np.ndarray,
    m: int,
    seed: int,
    mask_rows=None,
    total_rows: int | None = None,
) -> np.ndarray:
    """m stochastic forward passes with inverted dropout; shape (m, n, K).

    Dropout masks are keyed by a document's global row id, not by its
    position in `features`: pass mask_rows (global ids per row) and
    total_rows when scoring a pool subset, and permuting or slicing the
    candidate set permutes/slices the outputs accordingly.
    """
    if model.dropout_rate <= 0.0:
        raise ValidationError("MC sampling requires a model with dropout_rate > 0")
    if m < 2:
        raise ValidationError("m must be at least 2")
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    if mask_rows is None:
        mask_rows = np.arange(n)
    else:
        mask_rows = np.asarray(mask_rows, dtype=np.int64)
        if len(mask_rows) != n:
            raise ValidationError("mask_rows must have one entry per feature row")
    total = n if total_rows is None else int(total_rows)
    if total < (mask_rows.max() + 1 if n else 0):
        raise ValidationError("total_rows smaller than the largest mask row id")

    keep = 1.0 - model.dropout_rate
    rng = np.random.default_rng(seed)
    out = np.empty((m, n, model.num_classes))
    # one pass per MC sample; masks are drawn for the full row-id range and
    # sliced, so scores do not depend on candidate order or subset
    for j in range(m):
        mask = (rng.random((total, x.shape[1])) < keep)[mask_rows]
        act = x * mask / keep
        for layer, (w, b) in enumerate(zip(model.weights[:-1], model.biases[:-1])):
            act = np.maximum(act @ w + b, 0.0)
            hmask = (rng.random((total, act.shape[1])) < keep)[mask_rows]
            act = act * hmask / keep
        logits = act @ model.weights[-1] + model.biases[-1]
        out[j] = softmax(logits)
    return out


def flat_parameters(model: ProbeModel) -> np.ndarray:
    """All parameters as one vector: per layer, W row-major then b."""
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def with_flat_parameters(model: ProbeModel, flat: np.ndarray) -> ProbeModel:
    needed = sum(w.size for w in model.weights) + sum(b.size for b in model.biases)
    if needed != len(flat):
        raise ValidationError(
            f"parameter vector has {len(flat)} entries, model needs {needed}"
        )
    weights, biases = [], []
    pos = 0
    for w, b in zip(model.weights, model.biases):
        weights.append(flat[pos:pos + w.size].reshape(w.shape).copy())
        pos += w.size
        biases.append(flat[pos:pos + b.size].copy())
        pos += b.size
    return ProbeModel(
        feature_dim=model.feature_dim,
        num_classes=model.num_classes,
        widths=model.widths,
        dropout_rate=model.dropout_rate,
        weights=weights,
        biases=biases,
    )


def example_loss(model: ProbeModel, x: np.ndarray, y: int) -> float:
    """Cross-entropy of a single example."""
    logits = model.logits(np.asarray(x, dtype=np.float64)[None, :])
    return cross_entropy(logits, np.asarray([y]))


def loss_gradient(model: ProbeModel, x: np.ndarray, y: int) -> np.ndarray:
    """Analytic gradient of example_loss for a linear probe, flattened
    like flat_parameters (W row-major, then b)."""
    if not model.is_linear:
        raise UnsupportedModelError(
            "per-example gradient scores are defined for linear probes only"
        )
    return training_gradients(model, np.asarray(x, dtype=np.float64)[None, :], [y])


def training_gradients(model: ProbeModel, features: np.ndarray, labels) -> np.ndarray:
    """Gradient of the mean cross-entropy over a batch, flattened like
    flat_parameters. Works for any depth; the optimizer uses the same
    backward pass."""
    xb = np.asarray(features, dtype=np.float64)
    yb = np.asarray(labels, dtype=np.int64)
    acts, pre, logits = _forward(model, xb)
    grads_w, grads_b = _backward(model, acts, pre, logits, yb)
    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.ravel())
        parts.append(gb.ravel())
    return np.concatenate(parts)


def batch_loss(model: ProbeModel, features: np.ndarray, labels) -> float:
    """Mean cross-entropy of a batch; the quantity training_gradients differentiates."""
    logits = model.logits(np.asarray(features, dtype=np.float64))
    return cross_entropy(logits, np.asarray(labels, dtype=np.int64))


def save_model(model: ProbeModel, path: str) -> None:
    """Checkpoint: magic, JSON header, then float32 parameter payload."""
    header = json.dumps({
        "feature_dim": model.feature_dim,
        "num_classes": model.num_classes,
        "widths": list(model.widths),
        "dropout_rate": model.dropout_rate,
    }).encode("utf-8")
    payload = flat_parameters(model).astype("<f4").tobytes()
    blob = _CKPT_MAGIC + struct.pack("<I", len(header)) + header + payload
    atomic_write_bytes(path, blob)


def load_model(path: str) -> ProbeModel:
    with open(path, "rb") as handle:
        raw = handle.read()
    if len(raw) < 8 or raw[:4] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint")
    (header_len,) = struct.unpack_from("<I", raw, 4)
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    skeleton = init_model(
        header["feature_dim"],
        header["num_classes"],
        widths=tuple(header["widths"]),
        dropout_rate=header["dropout_rate"],
        seed=0,
    )
    flat = np.frombuffer(raw[8 + header_len:], dtype="<f4").astype(np.float64)
    expected = sum(w.size for w in skeleton.weights) + sum(
        b.size for b in skeleton.biases
    )
    if len(flat) != expected:
        raise FormatError(
            f"{path}: payload holds {len(flat)} parameters, header implies {expected}"
        )
    return with_flat_parameters(skeleton, flat)
