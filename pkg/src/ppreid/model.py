"""Feed-forward identification classifier trained with momentum SGD.

The network is a stack of affine layers with rectifiers in between and no
activation after the last one.  The output width equals the number of
training identities; the rectified output of the penultimate layer is the
embedding used for retrieval.  Weights use the row-vector convention
``h = x @ W + b`` so ``W`` has shape ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import LabeledDataset
from .seeding import rng_for

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 75
    lr_step_epochs: int = 15
    lr_factor: float = 0.1
    seed: int = 0
    hidden_dims: tuple = (64, 32)
    init_std: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1 or self.lr_step_epochs < 1:
            raise ValueError("epochs and lr_step_epochs must be >= 1")
        if not (0.0 < self.lr_factor < 1.0):
            raise ValueError("lr_factor must lie in (0, 1)")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer widths must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def effective_lr(self, epoch: int) -> float:
        return self.learning_rate * self.lr_factor ** (epoch // self.lr_step_epochs)


@dataclass(eq=False)
class ModelParams:
    weights: list
    biases: list
    weight_velocity: list = field(default=None)
    bias_velocity: list = field(default=None)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: input width does not match previous layer")
        if self.weight_velocity is None:
            self.weight_velocity = [np.zeros_like(w) for w in self.weights]
        if self.bias_velocity is None:
            self.bias_velocity = [np.zeros_like(b) for b in self.biases]
        self.weight_velocity = [np.asarray(v, dtype=np.float64) for v in self.weight_velocity]
        self.bias_velocity = [np.asarray(v, dtype=np.float64) for v in self.bias_velocity]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def embedding_layer_index(self) -> int:
        """Index of the layer whose rectified output is the embedding.

        ``-1`` for a single-layer model, whose embedding is the raw input.
        """
        return self.num_layers - 2

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [v.copy() for v in self.weight_velocity],
            [v.copy() for v in self.bias_velocity],
        )

    def parameters(self) -> list:
        """Weights and biases interleaved: ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        mine = self.parameters() + self.weight_velocity + self.bias_velocity
        theirs = other.parameters() + other.weight_velocity + other.bias_velocity
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(mine, theirs)
        )


def init_model(input_dim: int, num_classes: int, config: TrainConfig) -> ModelParams:
    """Gaussian weights with ``config.init_std``, zero biases, zero momentum."""
    rng = rng_for(config.seed, "init")
    sizes = [input_dim, *config.hidden_dims, num_classes]
    weights = [rng.normal(0.0, config.init_std, size=(a, b)) for a, b in zip(sizes, sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return ModelParams(weights, biases)


def _forward_all(model: ModelParams, X: np.ndarray):
    acts = [X]
    pre = []
    h = X
    last = model.num_layers - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if k < last else z
        acts.append(h)
    return acts, pre


def _check_input(model: ModelParams, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != model.input_dim:
        raise ValueError(
            f"input dimension {arr.shape[-1]} does not match model input {model.input_dim}"
        )
    return arr, single


def forward(model: ModelParams, x):
    """Return ``(logits, embedding)`` for one vector or a batch of rows."""
    X, single = _check_input(model, x)
    acts, _ = _forward_all(model, X)
    logits, emb = acts[-1], acts[-2]
    if single:
        return logits[0], emb[0]
    return logits, emb


def softmax_loss(logits, y: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of a softmax over ``logits`` and its gradient."""
    z = np.asarray(logits, dtype=np.float64)
    if not (0 <= y < z.size):
        raise ValueError(f"class index {y} out of range for {z.size} classes")
    shifted = z - z.max()
    log_norm = math.log(np.exp(shifted).sum())
    loss = log_norm - shifted[y]
    grad = np.exp(shifted - log_norm)
    grad[y] -= 1.0
    return max(float(loss), 0.0), grad


def _batch_softmax(logits: np.ndarray, y: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(y))
    losses = np.maximum(log_norm - shifted[rows, y], 0.0)
    probs = np.exp(shifted - log_norm[:, None])
    probs[rows, y] -= 1.0
    return losses, probs


def loss_and_gradient(model: ModelParams, X: np.ndarray, y: np.ndarray):
    """Per-sample losses and the gradient of their mean.

    The gradient is a list ``[dW0, db0, dW1, db1, ...]`` matching
    :meth:`ModelParams.parameters`.
    """
    X, _ = _check_input(model, X)
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= model.num_classes):
        raise ValueError("label out of range for the classifier head")
    acts, pre = _forward_all(model, X)
    losses, delta = _batch_softmax(acts[-1], y)
    delta /= len(y)
    grads = [None] * (2 * model.num_layers)
    for k in range(model.num_layers - 1, -1, -1):
        grads[2 * k] = acts[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k:
            delta = (delta @ model.weights[k].T) * (pre[k - 1] > 0)
    return losses, grads


def backward(model: ModelParams, batch: Sequence[int], dataset: LabeledDataset) -> list:
    """Gradient of the mean softmax loss over the records in ``batch``."""
    idx = np.asarray(batch, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty batch")
    if idx.min() < 0 or idx.max() >= len(dataset):
        raise IndexError("batch index out of range")
    _, grads = loss_and_gradient(model, dataset.vectors[idx], dataset.identities[idx])
    return grads


def sgd_step(model: ModelParams, gradient: list, config: TrainConfig, epoch: int) -> ModelParams:
    """One heavy-ball update with weight decay folded into the gradient.

    ``v <- momentum * v - lr_e * (g + weight_decay * theta)``; ``theta <- theta + v``
    where ``lr_e`` is the step-decayed learning rate for ``epoch``.
    """
    lr = config.effective_lr(epoch)
    mu, wd = config.momentum, config.weight_decay
    params = model.parameters()
    velocity = []
    for w, b in zip(model.weight_velocity, model.bias_velocity):
        velocity += [w, b]
    if len(gradient) != len(params):
        raise ValueError("gradient does not match model layout")
    new_params, new_vel = [], []
    for theta, v, g in zip(params, velocity, gradient):
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {theta.shape}")
        v_next = mu * v - lr * (g + wd * theta)
        new_vel.append(v_next)
        new_params.append(theta + v_next)
    return ModelParams(new_params[0::2], new_params[1::2], new_vel[0::2], new_vel[1::2])


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def classification_accuracy(model: ModelParams, dataset: LabeledDataset) -> Optional[float]:
    if len(dataset) == 0:
        return None
    logits, _ = forward(model, dataset.vectors)
    return float(np.mean(np.argmax(logits, axis=1) == dataset.identities))


def train(
    train_set: LabeledDataset,
    val_set: Optional[LabeledDataset],
    config: TrainConfig,
) -> tuple[ModelParams, TrainLog]:
    """Fixed-epoch minibatch training; a pure function of data and config."""
    num_classes = train_set.num_identities
    if num_classes < 2:
        raise ValueError("need at least two identities")
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if not train_set.is_canonical:
        raise ValueError("training labels must be canonical (0..C-1)")
    model = init_model(train_set.dim, num_classes, config)
    shuffle_rng = rng_for(config.seed, "shuffle")
    X, y = train_set.vectors, train_set.identities
    n = len(train_set)
    log = TrainLog()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            losses, grads = loss_and_gradient(model, X[idx], y[idx])
            batch_losses.extend(losses.tolist())
            model = sgd_step(model, grads, config, epoch)
        log.epoch_loss.append(math.fsum(batch_losses) / n)
        log.learning_rate.append(config.effective_lr(epoch))
        log.val_accuracy.append(
            classification_accuracy(model, val_set) if val_set is not None else None
        )
    return model, log


def extract_features(model: ModelParams, records) -> np.ndarray:
    """Embeddings for a dataset, pool, or raw ``(n, d)`` array, in input order."""
    vectors = getattr(records, "vectors", records)
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim == 2 and X.shape[0] == 0:
        return np.zeros((0, model.embedding_dim))
    _, emb = forward(model, np.atleast_2d(X))
    return emb


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path, model: ModelParams, config: Optional[TrainConfig] = None, seed=None) -> None:
    """Write an ``.npz`` checkpoint; parameters are stored bit-exactly."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "layer_shapes": [list(w.shape) for w in model.weights],
        "config_hash": config.config_hash() if config is not None else None,
        "config": config.to_dict() if config is not None else None,
        "seed": seed if seed is not None else (config.seed if config is not None else None),
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for k in range(model.num_layers):
        arrays[f"W{k}"] = model.weights[k]
        arrays[f"b{k}"] = model.biases[k]
        arrays[f"vW{k}"] = model.weight_velocity[k]
        arrays[f"vb{k}"] = model.bias_velocity[k]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_model(path) -> tuple[ModelParams, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        n = len(meta["layer_shapes"])
        model = ModelParams(
            [z[f"W{k}"] for k in range(n)],
            [z[f"b{k}"] for k in range(n)],
            [z[f"vW{k}"] for k in range(n)],
            [z[f"vb{k}"] for k in range(n)],
        )
    return model, meta
