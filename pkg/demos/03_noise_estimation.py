"""Per-client noise-level estimation in one federated round.

Two estimators: a leave-one-out kNN vote over each client's own
embeddings (no model needed), and a confidence rule comparing a global
model's predicted probabilities against self-calibrated per-class
thresholds. Only the scalar estimate crosses the client/server
boundary; the flagged masks stay local.
"""

from fedln import (
    ClientNoiseProfile,
    ClientState,
    FederatedConfig,
    GlobalModel,
    NoiseSpec,
    SyntheticSpec,
    TrainConfig,
    build_noise_matrix,
    corrupt_clients,
    derive_seed,
    estimation_round,
    generate_gaussian_mixture,
    init_weights,
    make_client_views,
    partition_iid,
    run_round,
)

train, test = generate_gaussian_mixture(
    SyntheticSpec(num_classes=10, dim=32, per_class_count=300, separation=6.0, seed=3)
)
partition = partition_iid(len(train), 6, seed=17)
levels = [0.0, 0.1, 0.2, 0.4, 0.6, 0.8]
profiles = [
    ClientNoiseProfile(cid, build_noise_matrix(NoiseSpec(10, level, seed=5)))
    for cid, level in enumerate(levels)
]
corrupted = corrupt_clients(train, partition, profiles, seed=1)
views = make_client_views(corrupted, partition)


def realized(cid):
    idx = partition.assignments[cid]
    return (corrupted.observed_labels[idx] != corrupted.true_labels[idx]).mean()


print("=== kNN estimator (k=20), no model required ===")
trace = []
outcomes = estimation_round(views, "knn", k=20, num_classes=10, trace=trace)
for outcome in outcomes:
    est = outcome.estimate
    print(f"  client {outcome.client_id}: n_hat={est.n_hat:.3f} "
          f"(realized {realized(outcome.client_id):.3f}, "
          f"{est.flagged_count}/{est.sample_count} flagged)")

print("\n=== what actually crossed the wire ===")
for message in trace[:4]:
    print(f"  {message.sender} -> {message.recipient}: {message.kind} {message.payload}")
print(f"  ... {len(trace)} messages total, replies carry only the scalar estimate")

print("\n=== confidence estimator after 15 FedAvg warm-up rounds ===")
config = FederatedConfig(
    num_clients=6, rounds=15,
    train=TrainConfig(learning_rate=0.1, batch_size=32, local_epochs=2, seed=0),
    hidden_sizes=(64,), seed=1,
)
model = GlobalModel(init_weights((32, 64, 10), derive_seed(1, "init")))
states = [ClientState(data=v) for v in views]
for _ in range(config.rounds):
    model, report = run_round(model, states, test, config, interventions_active=False)
print(f"warm-up done, clean-test accuracy {report.test_accuracy:.3f}")
for outcome in estimation_round(views, "confidence", model=model.model):
    est = outcome.estimate
    print(f"  client {outcome.client_id}: n_hat={est.n_hat:.3f} "
          f"(realized {realized(outcome.client_id):.3f})")
