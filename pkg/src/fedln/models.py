"""Feed-forward classifier with cross-entropy and distillation losses.

All math runs in double precision: the network is small and the exact
arithmetic makes gradient checks against finite differences tight and
the federated degeneracy reductions bitwise.
"""

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import xlogy

from .data import ClientData

LOG_CLAMP = 1e-12  # floor for probabilities inside log


@dataclass(frozen=True)
class Mlp:
    """ReLU hidden layers, softmax output; immutable after construction."""

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output sizes")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be positive")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("one weight matrix and bias vector per layer transition")
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(
                    f"layer {i} shape mismatch: weights {w.shape}, biases {b.shape}, "
                    f"expected {(sizes[i], sizes[i + 1])} and {(sizes[i + 1],)}"
                )
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int = 32
    local_epochs: int = 1
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass(frozen=True)
class LossMix:
    """Blend of cross-entropy and distillation from a teacher snapshot."""

    beta: float = 0.0
    temperature: float = 1.0
    teacher: Mlp | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.beta > 0 and self.teacher is None:
            raise ValueError("beta > 0 requires a teacher model")


def init_weights(layer_sizes, seed: int) -> Mlp:
    """He-initialized weights, zero biases, deterministic in the seed."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs at least input and output sizes")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, tuple(weights), tuple(biases))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward_states_raw(weights, biases, x: np.ndarray):
    """Hidden activations (input first) and output logits."""
    activations = [x]
    a = x
    for w, b in zip(weights[:-1], biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
        activations.append(a)
    logits = a @ weights[-1] + biases[-1]
    return activations, logits


def _forward_states(model: Mlp, x: np.ndarray):
    return _forward_states_raw(model.weights, model.biases, x)


def _as_batch(model: Mlp, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(
            f"input has feature dimension {x.shape[-1]}, model expects {model.input_dim}"
        )
    return x


def forward_logits(model: Mlp, batch) -> np.ndarray:
    """Pre-softmax outputs, one row per sample."""
    _, logits = _forward_states(model, _as_batch(model, batch))
    return logits


def forward(model: Mlp, batch) -> np.ndarray:
    """Class probabilities, one row per sample."""
    return softmax(forward_logits(model, batch))


def cross_entropy(probabilities: np.ndarray, labels) -> float:
    """Mean negative log-probability of the observed labels."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise ValueError(f"label out of range for {p.shape[1]} classes")
    picked = np.clip(p[np.arange(p.shape[0]), y], LOG_CLAMP, None)
    return float(-np.log(picked).mean())


def kd_loss(student_logits: np.ndarray, teacher_probabilities: np.ndarray,
            temperature: float) -> float:
    """T^2-scaled KL(teacher || student) at temperature T, batch mean.

    ``teacher_probabilities`` are already temperature-scaled.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_probabilities, dtype=np.float64)
    if z.shape != t.shape:
        raise ValueError(f"shape mismatch: student {z.shape}, teacher {t.shape}")
    log_s = log_softmax(z / temperature)
    kl = (xlogy(t, t) - t * log_s).sum(axis=1)
    return float(temperature * temperature * kl.mean())


def _teacher_probs(mix: LossMix, x: np.ndarray) -> np.ndarray:
    return softmax(forward_logits(mix.teacher, x) / mix.temperature)


def _loss_and_grads_raw(weights, biases, x, y, beta, temperature, teacher_probs):
    n = x.shape[0]
    activations, logits = _forward_states_raw(weights, biases, x)

    loss = 0.0
    d_logits = np.zeros_like(logits)
    if beta < 1.0:
        probs = softmax(logits)
        picked = np.clip(probs[np.arange(n), y], LOG_CLAMP, None)
        loss += (1.0 - beta) * float(-np.log(picked).mean())
        one_hot = np.zeros_like(probs)
        one_hot[np.arange(n), y] = 1.0
        d_logits += (1.0 - beta) / n * (probs - one_hot)
    if beta > 0.0:
        t = teacher_probs
        log_s = log_softmax(logits / temperature)
        kl = (xlogy(t, t) - t * log_s).sum(axis=1)
        loss += beta * float(temperature * temperature * kl.mean())
        d_logits += beta * temperature / n * (softmax(logits / temperature) - t)

    grad_w = [None] * len(weights)
    grad_b = [None] * len(weights)
    delta = d_logits
    for layer in range(len(weights) - 1, -1, -1):
        grad_w[layer] = activations[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * (activations[layer] > 0.0)
    return loss, grad_w, grad_b


def loss_and_gradients(model: Mlp, features, labels, mix: LossMix | None = None,
                       teacher_probabilities: np.ndarray | None = None):
    """Mixed loss (1-beta)*CE + beta*KD and its analytic parameter gradients.

    Returns (loss, weight gradients, bias gradients). Weight decay is not
    part of the loss; the optimizer adds it as a gradient term.
    """
    x = _as_batch(model, features)
    y = np.asarray(labels, dtype=np.int64)
    beta = mix.beta if mix is not None else 0.0
    teacher = teacher_probabilities
    if beta > 0.0 and teacher is None:
        teacher = _teacher_probs(mix, x)
    temperature = mix.temperature if mix is not None else 1.0
    return _loss_and_grads_raw(model.weights, model.biases, x, y, beta, temperature, teacher)


def train_local(model: Mlp, data: ClientData, config: TrainConfig,
                mix: LossMix | None = None) -> tuple[Mlp, list[float]]:
    """Mini-batch SGD with seeded per-epoch shuffling.

    Pure function of (model, data, config, mix); returns the trained
    model and the mean mixed loss of each epoch.
    """
    n = len(data)
    if n == 0:
        raise ValueError("client data is empty")
    x = data.features.astype(np.float64)
    y = data.labels
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    beta = mix.beta if mix is not None else 0.0
    teacher_full = _teacher_probs(mix, x) if beta > 0.0 else None

    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    wd = config.weight_decay
    temperature = mix.temperature if mix is not None else 1.0
    epoch_losses = []
    for _ in range(config.local_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            teacher_batch = teacher_full[batch] if teacher_full is not None else None
            loss, grad_w, grad_b = _loss_and_grads_raw(
                weights, biases, x[batch], y[batch], beta, temperature, teacher_batch
            )
            total += loss * batch.size
            for layer in range(len(weights)):
                weights[layer] = weights[layer] - lr * (grad_w[layer] + wd * weights[layer])
                biases[layer] = biases[layer] - lr * (grad_b[layer] + wd * biases[layer])
        epoch_losses.append(total / n)
    return Mlp(model.layer_sizes, tuple(weights), tuple(biases)), epoch_losses


def knn_predict(reference_features, reference_labels, query, k: int,
                metric: str = "euclidean", exclude_index=None,
                num_classes: int | None = None):
    """Majority vote over the k nearest reference labels.

    Distance ties break toward the lower reference index, vote ties
    toward the lower class index. ``exclude_index`` removes one
    reference per query (leave-one-out). Returns (labels, agreement)
    arrays, or scalars for a single 1-D query.
    """
    ref = np.asarray(reference_features, dtype=np.float64)
    labels = np.asarray(reference_labels, dtype=np.int64)
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if ref.shape[0] == 0:
        raise ValueError("reference set is empty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    available = ref.shape[0] - (0 if exclude_index is None else 1)
    if k > available:
        raise ValueError(f"k={k} exceeds the {available} available references")

    if metric == "euclidean":
        dist = cdist(q, ref, "sqeuclidean")
    elif metric == "cosine":
        qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-300)
        rn = ref / np.maximum(np.linalg.norm(ref, axis=1, keepdims=True), 1e-300)
        dist = 1.0 - qn @ rn.T
    else:
        raise ValueError(f"metric must be 'euclidean' or 'cosine', got {metric!r}")

    if exclude_index is not None:
        excl = np.asarray(exclude_index, dtype=np.int64)
        if excl.ndim == 0:
            excl = np.full(q.shape[0], int(excl), dtype=np.int64)
        dist[np.arange(q.shape[0]), excl] = np.inf

    # Stable sort keeps equal distances in index order: the tie-break key.
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    votes = labels[nearest]
    c = num_classes if num_classes is not None else int(labels.max()) + 1
    counts = np.zeros((q.shape[0], c), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(q.shape[0]), k), votes.ravel()), 1)
    winner = counts.argmax(axis=1)
    agreement = counts[np.arange(q.shape[0]), winner] / k
    if single:
        return int(winner[0]), float(agreement[0])
    return winner.astype(np.int64), agreement


def save_checkpoint(model: Mlp, path) -> None:
    """JSON checkpoint with base64 little-endian float64 parameter payloads."""
    layers = []
    for w, b in zip(model.weights, model.biases):
        layers.append({
            "weights": base64.b64encode(w.astype("<f8").tobytes()).decode("ascii"),
            "biases": base64.b64encode(b.astype("<f8").tobytes()).decode("ascii"),
        })
    doc = {"layer_sizes": list(model.layer_sizes), "layers": layers}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> Mlp:
    doc = json.loads(Path(path).read_text())
    sizes = tuple(doc["layer_sizes"])
    weights, biases = [], []
    for i, layer in enumerate(doc["layers"]):
        w = np.frombuffer(base64.b64decode(layer["weights"]), dtype="<f8")
        b = np.frombuffer(base64.b64decode(layer["biases"]), dtype="<f8")
        weights.append(w.reshape(sizes[i], sizes[i + 1]).astype(np.float64))
        biases.append(b.astype(np.float64))
    return Mlp(sizes, tuple(weights), tuple(biases))
