"""A fully-connected ReLU network with hand-written backprop.

The last hidden layer is the feature layer ``h`` whose geometry the collapse
metrics inspect; the final affine map is the linear classifier ``W h + b``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .datagen import make_rng

CHECKPOINT_FORMAT = "nclab-checkpoint"
CHECKPOINT_VERSION = 1


class NumericError(FloatingPointError):
    pass


class TrainingDiverged(NumericError):
    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class Architecture:
    input_dim: int = 2
    hidden_widths: tuple[int, ...] = (64, 64)
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError(f"invalid architecture {self}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @property
    def feature_dim(self) -> int:
        return self.hidden_widths[-1]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.num_classes]


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 200
    weight_decay: float = 0.0
    early_stop_patience: int = 10
    early_stop_min_delta: float = 1e-4
    seed: int = 0
    lr_milestones: tuple[int, ...] = ()
    lr_gamma: float = 0.1
    warmup_epochs: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch_size, max_epochs and early_stop_patience must be >= 1")
        if self.weight_decay < 0 or self.early_stop_min_delta < 0:
            raise ValueError("weight_decay and early_stop_min_delta must be >= 0")
        object.__setattr__(self, "lr_milestones", tuple(sorted(int(e) for e in self.lr_milestones)))
        if not 0 < self.lr_gamma <= 1:
            raise ValueError("lr_gamma must lie in (0, 1]")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during ``epoch`` (1-based).

        Linear warmup over the first ``warmup_epochs`` epochs, then a step
        decay by ``lr_gamma`` after each milestone epoch.
        """
        passed = sum(1 for m in self.lr_milestones if epoch > m)
        ramp = min(1.0, epoch / self.warmup_epochs) if self.warmup_epochs else 1.0
        return self.learning_rate * ramp * self.lr_gamma**passed


@dataclass
class ModelState:
    """Layer parameters; the last (weight, bias) pair is the classifier head.

    Weights are stored ``(fan_out, fan_in)`` so a layer computes ``x @ W.T + b``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def classifier_weights(self) -> np.ndarray:
        return self.weights[-1]

    @property
    def classifier_bias(self) -> np.ndarray:
        return self.biases[-1]

    @property
    def architecture(self) -> Architecture:
        sizes = [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]
        return Architecture(sizes[0], tuple(sizes[1:-1]), sizes[-1])

    def copy(self) -> "ModelState":
        return ModelState([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def zeros_like(self) -> "ModelState":
        return ModelState([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


@dataclass
class FeatureBatch:
    features: np.ndarray
    labels: np.ndarray
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=np.int64)
        m = self.features.shape[0]
        if self.features.ndim != 2 or self.labels.shape != (m,):
            raise ValueError("features must be m x p with m labels")
        if self.groups is not None and self.groups.shape != (m,):
            raise ValueError("groups must have one entry per feature row")


def init_model(arch: Architecture, seed: int = 0) -> ModelState:
    """He-normal weights (variance 2 / fan_in), zero biases."""
    rng = make_rng(seed, 3)
    sizes = arch.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return ModelState(weights, biases)


def _forward_cache(model: ModelState, inputs: np.ndarray):
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.weights[0].shape[1]:
        raise ValueError(f"expected inputs of width {model.weights[0].shape[1]}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("non-finite input")
    activations = [x]
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        activations.append(np.maximum(activations[-1] @ w.T + b, 0.0))
    logits = activations[-1] @ model.weights[-1].T + model.biases[-1]
    return activations, logits


def forward(model: ModelState, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Return (penultimate features, logits)."""
    activations, logits = _forward_cache(model, inputs)
    return activations[-1], logits


def feature_batch(model: ModelState, inputs, labels, groups=None) -> FeatureBatch:
    features, _ = forward(model, inputs)
    return FeatureBatch(features, labels, groups)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(model: ModelState, inputs, labels) -> float:
    _, logits = forward(model, inputs)
    labels = np.asarray(labels, dtype=np.int64)
    return float(-log_softmax(logits)[np.arange(len(labels)), labels].mean())


def loss_and_gradients(model: ModelState, inputs, labels) -> tuple[float, ModelState]:
    """Mean softmax cross-entropy and its exact gradient w.r.t. every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    m = len(labels)
    if m == 0:
        raise ValueError("empty batch")
    activations, logits = _forward_cache(model, inputs)
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(m), labels].mean())
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")

    delta = np.exp(logp)
    delta[np.arange(m), labels] -= 1.0
    delta /= m
    n_layers = len(model.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for layer in range(n_layers - 1, -1, -1):
        a_in = activations[layer]
        gw[layer] = delta.T @ a_in
        gb[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer]) * (a_in > 0)
    return loss, ModelState(gw, gb)


def sgd_step(
    model: ModelState,
    grads: ModelState,
    hyper: TrainHyper,
    velocity: Optional[ModelState] = None,
    lr: Optional[float] = None,
):
    """One heavy-ball momentum step; returns (new model, new velocity).

    ``v <- momentum * v + (g + weight_decay * w)`` then ``w <- w - lr * v``.
    Weight decay touches weight matrices only, not biases. ``lr`` overrides
    ``hyper.learning_rate`` (used by the step schedule).
    """
    lr = hyper.learning_rate if lr is None else lr
    if velocity is None:
        velocity = model.zeros_like()
    new_w, new_b, vel_w, vel_b = [], [], [], []
    for w, g, v in zip(model.weights, grads.weights, velocity.weights):
        if w.shape != g.shape:
            raise ValueError("gradient shape mismatch")
        step = g + hyper.weight_decay * w if hyper.weight_decay else g
        v = hyper.momentum * v + step if hyper.momentum else step
        vel_w.append(v)
        new_w.append(w - lr * v)
    for b, g, v in zip(model.biases, grads.biases, velocity.biases):
        v = hyper.momentum * v + g if hyper.momentum else g
        vel_b.append(v)
        new_b.append(b - lr * v)
    return ModelState(new_w, new_b), ModelState(vel_w, vel_b)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    extra: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    final: ModelState
    early_stopped: ModelState
    early_stop_epoch: int
    history: list[EpochLog]


EpochCallback = Callable[[int, ModelState], Optional[dict]]


def train(
    model: ModelState,
    train_x,
    train_y,
    val_x,
    val_y,
    hyper: TrainHyper,
    epoch_callback: Optional[EpochCallback] = None,
) -> TrainResult:
    """Mini-batch SGD for ``hyper.max_epochs`` epochs.

    Early stopping is simulated rather than acted on: the checkpoint with the
    lowest validation loss is tracked until ``early_stop_patience`` epochs pass
    without an improvement larger than ``early_stop_min_delta``; that snapshot
    is frozen as the early-stopped model while training carries on to the last
    epoch.
    """
    train_x = np.asarray(train_x, dtype=float)
    train_y = np.asarray(train_y, dtype=np.int64)
    val_x = np.asarray(val_x, dtype=float)
    val_y = np.asarray(val_y, dtype=np.int64)
    if len(train_y) == 0 or len(val_y) == 0:
        raise ValueError("train and validation sets must be nonempty")
    rng = make_rng(hyper.seed, 4)
    n = len(train_y)
    velocity = None
    history: list[EpochLog] = []
    best_val = math.inf
    best_state = model.copy()
    best_epoch = 0
    stale = 0
    frozen = False
    for epoch in range(1, hyper.max_epochs + 1):
        order = rng.permutation(n)
        lr = hyper.lr_at(epoch)
        batch_losses = []
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            try:
                loss, grads = loss_and_gradients(model, train_x[idx], train_y[idx])
            except NumericError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {start // hyper.batch_size}: {exc}", history) from exc
            model, velocity = sgd_step(model, grads, hyper, velocity, lr)
            batch_losses.append(loss * len(idx))
        if not model.is_finite():
            raise TrainingDiverged(f"epoch {epoch}: non-finite parameters", history)
        val_loss = cross_entropy(model, val_x, val_y)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"epoch {epoch}: non-finite validation loss", history)
        log = EpochLog(epoch, float(sum(batch_losses) / n), val_loss)
        if epoch_callback is not None:
            log.extra = epoch_callback(epoch, model) or {}
        history.append(log)
        if not frozen:
            if val_loss < best_val - hyper.early_stop_min_delta or epoch == 1:
                best_val = val_loss
                best_state = model.copy()
                best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= hyper.early_stop_patience:
                    frozen = True
    return TrainResult(model, best_state, best_epoch, history)


def predict(model: ModelState, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Argmax labels (ties go to the lower class index) and P(class 1)."""
    _, logits = forward(model, inputs)
    probs = softmax(logits)
    return np.argmax(logits, axis=1), probs[:, 1]


def accuracy(model: ModelState, inputs, labels) -> float:
    pred, _ = predict(model, inputs)
    return float(np.mean(pred == np.asarray(labels)))


def save_checkpoint(model: ModelState, path, meta: Optional[dict] = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "layers": [
            {"weight_shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(model.weights, model.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_checkpoint(path) -> ModelState:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    weights, biases = [], []
    for layer in doc["layers"]:
        weights.append(np.array(layer["weight"], dtype=float).reshape(layer["weight_shape"]))
        biases.append(np.array(layer["bias"], dtype=float))
    return ModelState(weights, biases)
