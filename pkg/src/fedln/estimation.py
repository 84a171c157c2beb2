"""Per-client label-noise level estimation.

Two estimators, both completing within one federated round's client
computation: a leave-one-out kNN vote over the client's own embeddings,
and a confidence rule with self-calibrated per-class thresholds on the
global model's outputs. Flagged masks and suggested labels stay on the
client; only the scalar estimate crosses to the server.
"""

from dataclasses import dataclass

import numpy as np

from .data import ClientData
from .messages import Message, client_name
from .models import Mlp, forward, knn_predict

# Slack for threshold comparisons so a model that outputs the exact class
# threshold everywhere (e.g. uniform probabilities) never flags anything.
_THRESHOLD_SLACK = 1e-12

METHODS = ("knn", "confidence")


@dataclass(frozen=True)
class NoiseEstimate:
    """Client-local estimation result; only n_hat may leave the client."""

    client_id: int
    n_hat: float
    method: str
    flagged: np.ndarray  # (n,) bool
    suggested_labels: np.ndarray  # (n,) int64, -1 where no suggestion
    agreement: np.ndarray | None = None  # (n,) float64, kNN vote share

    def __post_init__(self):
        flagged = np.array(self.flagged, dtype=bool)
        suggested = np.array(self.suggested_labels, dtype=np.int64)
        if suggested.shape != flagged.shape:
            raise ValueError("flagged mask and suggested labels must align")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if flagged.size == 0:
            raise ValueError("estimate needs at least one sample")
        expected = flagged.sum() / flagged.size
        if self.n_hat != expected:
            raise ValueError(f"n_hat {self.n_hat} != flagged fraction {expected}")
        if np.any(suggested[~flagged] != -1):
            raise ValueError("unflagged samples must carry no suggested label")
        flagged.setflags(write=False)
        suggested.setflags(write=False)
        object.__setattr__(self, "flagged", flagged)
        object.__setattr__(self, "suggested_labels", suggested)
        if self.agreement is not None:
            agreement = np.array(self.agreement, dtype=np.float64)
            if agreement.shape != flagged.shape:
                raise ValueError("agreement scores must align with the mask")
            agreement.setflags(write=False)
            object.__setattr__(self, "agreement", agreement)

    @property
    def sample_count(self) -> int:
        return int(self.flagged.size)

    @property
    def flagged_count(self) -> int:
        return int(self.flagged.sum())


@dataclass(frozen=True)
class EstimationOutcome:
    """Per-client result of an estimation round; n_hat absent on failure."""

    client_id: int
    estimate: NoiseEstimate | None = None
    error: str | None = None


def estimate_knn(data: ClientData, k: int = 10, metric: str = "euclidean",
                 num_classes: int | None = None) -> NoiseEstimate:
    """Flag samples whose leave-one-out kNN vote disagrees with their label."""
    n = len(data)
    if n <= k:
        raise ValueError(
            f"client {data.client_id} has {n} samples, need more than k={k}; "
            "use a smaller k or the confidence method"
        )
    votes, agreement = knn_predict(
        data.features, data.labels, data.features, k,
        metric=metric, exclude_index=np.arange(n), num_classes=num_classes,
    )
    flagged = votes != data.labels
    suggested = np.where(flagged, votes, -1)
    return NoiseEstimate(
        client_id=data.client_id,
        n_hat=float(flagged.sum() / n),
        method="knn",
        flagged=flagged,
        suggested_labels=suggested,
        agreement=agreement,
    )


def class_thresholds(probabilities: np.ndarray, labels: np.ndarray,
                     num_classes: int) -> np.ndarray:
    """Mean predicted probability of each class over samples labeled with it.

    Classes with no labeled samples get an infinite threshold and are
    never attributable.
    """
    thresholds = np.full(num_classes, np.inf)
    for c in range(num_classes):
        mask = labels == c
        if mask.any():
            thresholds[c] = probabilities[mask, c].mean()
    return thresholds


def estimate_confidence(model: Mlp, data: ClientData) -> NoiseEstimate:
    """Confident-learning-style flagging against per-class thresholds.

    A sample is flagged when its probability under the observed class
    falls strictly below that class's threshold while some other class
    reaches its own threshold; the suggested label is the most probable
    such class.
    """
    probs = forward(model, data.features)
    c = model.num_classes
    labels = data.labels
    thresholds = class_thresholds(probs, labels, c)

    own = probs[np.arange(len(data)), labels]
    below_own = own < thresholds[labels] - _THRESHOLD_SLACK
    reaches = probs >= thresholds[None, :]
    reaches[np.arange(len(data)), labels] = False
    flagged = below_own & reaches.any(axis=1)

    masked = np.where(reaches, probs, -np.inf)
    best_other = masked.argmax(axis=1)
    suggested = np.where(flagged, best_other, -1)
    return NoiseEstimate(
        client_id=data.client_id,
        n_hat=float(flagged.sum() / len(data)),
        method="confidence",
        flagged=flagged,
        suggested_labels=suggested,
    )


def estimation_round(clients, method: str, model: Mlp | None = None,
                     k: int = 10, metric: str = "euclidean",
                     num_classes: int | None = None,
                     trace: list[Message] | None = None) -> list[EstimationOutcome]:
    """One communication round of noise estimation across all clients.

    The server broadcast (model parameters for the confidence method,
    nothing for kNN) and the scalar replies are recorded in ``trace``.
    A failing client is reported without aborting the others.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if method == "confidence" and model is None:
        raise ValueError("the confidence method needs a broadcast global model")
    outcomes = []
    for data in clients:
        if trace is not None:
            payload = {"method": method}
            if method == "confidence":
                payload["parameter_count"] = model.parameter_count()
            trace.append(Message("server", client_name(data.client_id),
                                 "estimate_request", payload))
        try:
            if method == "knn":
                estimate = estimate_knn(data, k=k, metric=metric, num_classes=num_classes)
            else:
                estimate = estimate_confidence(model, data)
            outcomes.append(EstimationOutcome(data.client_id, estimate=estimate))
            reply = {"n_hat": estimate.n_hat}
        except ValueError as exc:
            outcomes.append(EstimationOutcome(data.client_id, error=str(exc)))
            reply = {"error": str(exc)}
        if trace is not None:
            trace.append(Message(client_name(data.client_id), "server",
                                 "noise_estimate", reply))
    return outcomes
