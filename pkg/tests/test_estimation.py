"""kNN and confidence noise estimators plus the estimation round."""

import numpy as np
import pytest

from fedln.data import ClientData, SyntheticSpec, generate_gaussian_mixture
from fedln.estimation import (
    NoiseEstimate,
    class_thresholds,
    estimate_confidence,
    estimate_knn,
    estimation_round,
)
from fedln.models import Mlp, init_weights
from fedln.noise import NoiseSpec, apply_noise, build_noise_matrix


def client_from_mixture(noise_level=0.0, seed=0, per_class=50, num_classes=4, dim=16):
    train, _ = generate_gaussian_mixture(
        SyntheticSpec(num_classes=num_classes, dim=dim, per_class_count=per_class,
                      separation=6.0, seed=3)
    )
    labels = train.true_labels
    if noise_level > 0:
        q = build_noise_matrix(NoiseSpec(num_classes=num_classes, noise_level=noise_level,
                                         seed=seed))
        labels = apply_noise(labels, q, seed)
    return ClientData(0, train.features, labels), train.true_labels


def test_estimate_knn_clean_client_is_near_zero():
    data, _ = client_from_mixture()
    estimate = estimate_knn(data, k=10)
    assert estimate.method == "knn"
    assert estimate.n_hat <= 0.02


def test_estimate_knn_recovers_injected_level():
    data, truth = client_from_mixture(noise_level=0.4, seed=1)
    estimate = estimate_knn(data, k=10)
    realized = (data.labels != truth).mean()
    assert abs(estimate.n_hat - realized) <= 0.05
    # flagged samples carry a differing suggestion
    assert np.all(estimate.suggested_labels[estimate.flagged]
                  != data.labels[estimate.flagged])
    assert np.all(estimate.suggested_labels[~estimate.flagged] == -1)


def test_estimate_knn_identical_points_agree():
    features = np.ones((12, 3), dtype=np.float32)
    labels = np.full(12, 2, dtype=np.int64)
    data = ClientData(0, features, labels)
    estimate = estimate_knn(data, k=5, num_classes=4)
    assert estimate.n_hat == 0.0


def test_estimate_knn_too_few_samples():
    data = ClientData(0, np.zeros((5, 2), dtype=np.float32), np.zeros(5, dtype=np.int64))
    with pytest.raises(ValueError, match="smaller k or the confidence method"):
        estimate_knn(data, k=10)


@pytest.mark.parametrize("n", [200, 1000])
def test_estimate_knn_matches_brute_force_mask(n):
    rng = np.random.default_rng(5)
    features = rng.standard_normal((n, 4)).astype(np.float32)
    labels = rng.integers(0, 3, size=n)
    data = ClientData(0, features, labels)
    estimate = estimate_knn(data, k=7, num_classes=3)

    feats = features.astype(np.float64)
    for i in range(n):
        dists = ((feats - feats[i]) ** 2).sum(axis=1)
        order = sorted((d, j) for j, d in enumerate(dists) if j != i)[:7]
        counts = [0, 0, 0]
        for _, j in order:
            counts[labels[j]] += 1
        vote = max(range(3), key=lambda c: (counts[c], -c))
        assert estimate.flagged[i] == (vote != labels[i])
        if estimate.flagged[i]:
            assert estimate.suggested_labels[i] == vote


def test_noise_estimate_invariants():
    with pytest.raises(ValueError, match="n_hat"):
        NoiseEstimate(0, 0.5, "knn", np.array([True, False, False, False]),
                      np.array([1, -1, -1, -1]))
    with pytest.raises(ValueError, match="unflagged"):
        NoiseEstimate(0, 0.25, "knn", np.array([True, False, False, False]),
                      np.array([1, 2, -1, -1]))


def _uniform_model(dim, num_classes):
    return Mlp((dim, num_classes), (np.zeros((dim, num_classes)),), (np.zeros(num_classes),))


def test_estimate_confidence_uniform_model_flags_nothing():
    data, _ = client_from_mixture(noise_level=0.4, seed=2)
    estimate = estimate_confidence(_uniform_model(16, 4), data)
    assert estimate.n_hat == 0.0


def test_estimate_confidence_good_model_flags_flipped_labels():
    # linear model keyed on the class means: logits 2<m_j, x> - |m_j|^2 rank
    # the true class first, so flags should coincide with the actual flips
    data, truth = client_from_mixture(noise_level=0.3, seed=3)
    dim, c = 16, 4
    train, _ = generate_gaussian_mixture(
        SyntheticSpec(num_classes=c, dim=dim, per_class_count=50, separation=6.0, seed=3)
    )
    means = np.stack([train.features[train.true_labels == j].mean(axis=0)
                      for j in range(c)]).astype(np.float64)
    model = Mlp((dim, c), (means.T * 2.0,), (-(means ** 2).sum(axis=1),))
    estimate = estimate_confidence(model, data)
    flipped = data.labels != truth
    assert (estimate.flagged == flipped).mean() >= 0.95
    assert abs(estimate.n_hat - flipped.mean()) <= 0.05


def test_class_thresholds_unrepresented_class_is_infinite():
    probs = np.array([[0.7, 0.2, 0.1], [0.6, 0.3, 0.1]])
    thresholds = class_thresholds(probs, np.array([0, 0]), 3)
    assert thresholds[0] == pytest.approx(0.65)
    assert np.isinf(thresholds[1]) and np.isinf(thresholds[2])


def test_estimate_confidence_perfectly_confident_correct_model():
    # p(observed)=1 for every sample: nothing falls strictly below its
    # class threshold, so nothing is flagged
    features = np.eye(3, dtype=np.float32)
    labels = np.array([0, 1, 2])
    data = ClientData(0, features, labels)
    model = Mlp((3, 3), (np.eye(3) * 50.0,), (np.zeros(3),))
    estimate = estimate_confidence(model, data)
    assert estimate.n_hat == 0.0


def test_estimation_round_isolates_failures():
    good, _ = client_from_mixture(noise_level=0.2, seed=4)
    tiny = ClientData(1, np.zeros((3, 16), dtype=np.float32), np.zeros(3, dtype=np.int64))
    trace = []
    outcomes = estimation_round([good, tiny], "knn", k=10, trace=trace)
    by_id = {o.client_id: o for o in outcomes}
    assert by_id[0].estimate is not None and by_id[0].error is None
    assert by_id[1].estimate is None and "smaller k" in by_id[1].error
    replies = [m for m in trace if m.kind == "noise_estimate"]
    assert len(replies) == 2
    assert set(replies[0].payload) == {"n_hat"}
    assert set(replies[1].payload) == {"error"}


def test_estimation_round_trace_carries_only_scalars():
    clients = [client_from_mixture(noise_level=l, seed=i)[0]
               for i, l in enumerate([0.0, 0.2, 0.6])]
    clients = [ClientData(i, c.features, c.labels) for i, c in enumerate(clients)]
    trace = []
    outcomes = estimation_round(clients, "knn", k=10, trace=trace)
    estimates = {o.client_id: o.estimate.n_hat for o in outcomes}
    # ordering matches the injected profile ordering
    assert estimates[0] < estimates[1] < estimates[2]
    for message in trace:
        if message.kind == "noise_estimate":
            assert set(message.payload) == {"n_hat"}
            assert isinstance(message.payload["n_hat"], float)


def test_estimation_round_confidence_requires_model():
    data, _ = client_from_mixture()
    with pytest.raises(ValueError, match="global model"):
        estimation_round([data], "confidence")
    model = init_weights([16, 8, 4], seed=0)
    outcomes = estimation_round([data], "confidence", model=model)
    assert outcomes[0].estimate is not None
    assert outcomes[0].estimate.method == "confidence"
