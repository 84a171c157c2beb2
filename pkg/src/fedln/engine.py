"""Round-based federated training with label-noise interventions.

The baseline is FedAvg: data-size-weighted parameter averaging over a
seeded client cohort per round. Three interventions hook into different
stages: nearest-neighbor label correction (NNC) once at initialization,
adaptive distillation from the global model (AKD) during local training,
and noise-aware aggregation (NA-FedAvg) that downweights clients by
their estimated noise level.

Everything is deterministic: client work is a pure function of the
broadcast weights, the client's data, and a seed derived from
(experiment seed, round, client id), and results merge in client-id
order, so the number of workers never changes the outcome.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import ClientData, EmbeddingDataset, PartitionMap, corrupt_clients, make_client_views
from .estimation import EstimationOutcome, NoiseEstimate, estimate_knn, estimation_round
from .messages import Message, client_name
from .models import LossMix, Mlp, TrainConfig, forward, init_weights, train_local
from .noise import ClientNoiseProfile
from .seeding import derive_seed

STRATEGIES = ("fedavg", "na_fedavg")
INIT_CORRECTIONS = ("none", "nnc")
LOCAL_LOSSES = ("ce", "akd")
ESTIMATION_METHODS = ("knn", "confidence")


@dataclass(frozen=True)
class FederatedConfig:
    num_clients: int
    rounds: int
    train: TrainConfig
    participation_fraction: float = 1.0
    strategy: str = "fedavg"
    init_correction: str = "none"
    local_loss: str = "ce"
    estimation_method: str | None = "knn"
    k: int = 10
    tau_nnc: float = 0.6
    beta_max: float = 1.0
    temperature: float = 3.0
    warmup_rounds: int = 20
    hidden_sizes: tuple[int, ...] = (64,)
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if not 0.0 < self.participation_fraction <= 1.0:
            raise ValueError(
                f"participation_fraction must be in (0, 1], got {self.participation_fraction}"
            )
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.init_correction not in INIT_CORRECTIONS:
            raise ValueError(
                f"init_correction must be one of {INIT_CORRECTIONS}, got {self.init_correction!r}"
            )
        if self.local_loss not in LOCAL_LOSSES:
            raise ValueError(f"local_loss must be one of {LOCAL_LOSSES}, got {self.local_loss!r}")
        if self.estimation_method is not None and self.estimation_method not in ESTIMATION_METHODS:
            raise ValueError(
                f"estimation_method must be one of {ESTIMATION_METHODS}, "
                f"got {self.estimation_method!r}"
            )
        needs_estimates = self.local_loss == "akd" or self.strategy == "na_fedavg"
        if needs_estimates and self.estimation_method is None:
            raise ValueError(f"{self.local_loss}/{self.strategy} require an estimation method")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.tau_nnc <= 1.0:
            raise ValueError(f"tau_nnc must be in [0, 1], got {self.tau_nnc}")
        if not 0.0 <= self.beta_max <= 1.0:
            raise ValueError(f"beta_max must be in [0, 1], got {self.beta_max}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.warmup_rounds < 0:
            raise ValueError(f"warmup_rounds must be >= 0, got {self.warmup_rounds}")
        sizes = tuple(int(s) for s in self.hidden_sizes)
        if any(s < 1 for s in sizes):
            raise ValueError("hidden_sizes must be positive")
        object.__setattr__(self, "hidden_sizes", sizes)

    @property
    def needs_estimates(self) -> bool:
        return self.local_loss == "akd" or self.strategy == "na_fedavg"


@dataclass(frozen=True)
class ClientState:
    data: ClientData
    estimate: NoiseEstimate | None = None

    @property
    def client_id(self) -> int:
        return self.data.client_id

    @property
    def num_samples(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class GlobalModel:
    model: Mlp
    round: int = 0


@dataclass(frozen=True)
class RoundReport:
    round: int
    selected_ids: tuple[int, ...]
    client_losses: dict[int, float]
    weights: np.ndarray  # length num_clients, client-id order, zeros if unselected
    test_accuracy: float
    wall_time: float
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class CorrectionStats:
    total: int
    flagged: int
    corrected: int
    pre_accuracy: float | None = None
    post_accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None


@dataclass
class ExperimentResult:
    reports: list[RoundReport]
    summary: dict
    final_model: Mlp
    states: list[ClientState]
    trace: list[Message]
    estimation: list[EstimationOutcome] | None = None
    nnc_stats: dict[int, CorrectionStats] | None = None


def fedavg_weights(sizes: np.ndarray) -> np.ndarray:
    """Relative impact of each client: its share of the cohort's samples."""
    sizes = np.asarray(sizes, dtype=np.float64)
    return sizes / sizes.sum()


def na_fedavg_weights(sizes: np.ndarray, n_hats: np.ndarray) -> tuple[np.ndarray, bool]:
    """Size weights discounted by estimated noise, w ~ N*(1 - n_hat).

    Falls back to FedAvg weights (second return value True) when every
    client is estimated fully noisy and the discounted mass vanishes.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    n_hats = np.asarray(n_hats, dtype=np.float64)
    mass = sizes * (1.0 - n_hats)
    total = mass.sum()
    if total < 1e-12:
        return fedavg_weights(sizes), True
    return mass / total, False


def weighted_mean_model(models: list[Mlp], weights: np.ndarray) -> Mlp:
    """Parameter-wise weighted mean of identically shaped models."""
    if not models:
        raise ValueError("no models to aggregate")
    sizes = models[0].layer_sizes
    for mdl in models[1:]:
        if mdl.layer_sizes != sizes:
            raise ValueError(f"layer shape mismatch: {mdl.layer_sizes} vs {sizes}")
    if len(weights) != len(models):
        raise ValueError("one weight per model required")
    acc_w = [weights[0] * w for w in models[0].weights]
    acc_b = [weights[0] * b for b in models[0].biases]
    for mdl, wt in zip(models[1:], weights[1:]):
        for layer in range(len(acc_w)):
            acc_w[layer] = acc_w[layer] + wt * mdl.weights[layer]
            acc_b[layer] = acc_b[layer] + wt * mdl.biases[layer]
    return Mlp(sizes, tuple(acc_w), tuple(acc_b))


def fedavg_aggregate(updates) -> Mlp:
    """FedAvg over (client_id, model, num_samples) updates."""
    if not updates:
        raise ValueError("empty cohort")
    models = [u[1] for u in updates]
    sizes = np.array([u[2] for u in updates], dtype=np.float64)
    return weighted_mean_model(models, fedavg_weights(sizes))


def na_fedavg_aggregate(updates) -> Mlp:
    """Noise-aware FedAvg over (client_id, model, num_samples, n_hat) updates."""
    if not updates:
        raise ValueError("empty cohort")
    for u in updates:
        if u[3] is None:
            raise ValueError(f"client {u[0]} is missing a noise estimate")
    models = [u[1] for u in updates]
    sizes = np.array([u[2] for u in updates], dtype=np.float64)
    n_hats = np.array([u[3] for u in updates], dtype=np.float64)
    weights, _ = na_fedavg_weights(sizes, n_hats)
    return weighted_mean_model(models, weights)


def nnc_apply(data: ClientData, k: int, tau_nnc: float, metric: str = "euclidean",
              num_classes: int | None = None) -> tuple[ClientData, CorrectionStats]:
    """Replace labels the local kNN vote contradicts with enough agreement.

    Flagged samples whose vote share falls below tau_nnc keep their
    labels: weak evidence corrections would inject fresh noise.
    """
    estimate = estimate_knn(data, k=k, metric=metric, num_classes=num_classes)
    corrected = estimate.flagged & (estimate.agreement >= tau_nnc)
    labels = np.where(corrected, estimate.suggested_labels, data.labels)
    stats = CorrectionStats(
        total=len(data),
        flagged=estimate.flagged_count,
        corrected=int(corrected.sum()),
    )
    return ClientData(data.client_id, data.features, labels), stats


def akd_mix(estimate: NoiseEstimate, beta_max: float, temperature: float,
            teacher: Mlp) -> LossMix:
    """Distillation mix weighted by the client's estimated noise level."""
    return LossMix(beta=min(estimate.n_hat, beta_max), temperature=temperature,
                   teacher=teacher)


def evaluate_accuracy(model: Mlp, dataset: EmbeddingDataset) -> float:
    predictions = forward(model, dataset.features).argmax(axis=1)
    return float((predictions == dataset.observed_labels).mean())


def run_round(global_model: GlobalModel, clients: list[ClientState],
              test: EmbeddingDataset, config: FederatedConfig,
              trace: list[Message] | None = None, workers: int = 1,
              interventions_active: bool = True) -> tuple[GlobalModel, RoundReport]:
    """One communication round: select, broadcast, train locally, aggregate.

    ``interventions_active`` is False during confidence-estimation
    warm-up, when no estimates exist yet and the round runs as plain
    FedAvg with cross-entropy regardless of the configured strategy.
    """
    started = time.perf_counter()
    round_index = global_model.round + 1
    states = sorted(clients, key=lambda s: s.client_id)
    ids = np.array([s.client_id for s in states], dtype=np.int64)
    cohort_size = math.ceil(config.participation_fraction * len(states))
    rng = np.random.default_rng(derive_seed(config.seed, round_index, "select"))
    selected = np.sort(rng.choice(ids, size=cohort_size, replace=False))
    by_id = {s.client_id: s for s in states}

    use_akd = interventions_active and config.local_loss == "akd"
    use_na = interventions_active and config.strategy == "na_fedavg"

    if trace is not None:
        for cid in selected:
            trace.append(Message("server", client_name(int(cid)), "broadcast_weights", {
                "round": round_index,
                "parameter_count": global_model.model.parameter_count(),
            }))

    def run_client(cid: int) -> tuple[Mlp, float]:
        state = by_id[cid]
        local_cfg = replace(config.train, seed=derive_seed(config.seed, round_index, int(cid)))
        mix = None
        if use_akd:
            if state.estimate is None:
                raise ValueError(f"client {cid} has no noise estimate for akd")
            mix = akd_mix(state.estimate, config.beta_max, config.temperature,
                          global_model.model)
        trained, losses = train_local(global_model.model, state.data, local_cfg, mix)
        return trained, float(np.mean(losses))

    try:
        if workers <= 1:
            results = [run_client(int(cid)) for cid in selected]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_client, [int(c) for c in selected]))
    except ValueError as exc:
        raise ValueError(f"round {round_index} aborted: {exc}") from exc

    sizes = np.array([by_id[int(cid)].num_samples for cid in selected], dtype=np.float64)
    if trace is not None:
        for cid, (trained, mean_loss) in zip(selected, results):
            est = by_id[int(cid)].estimate
            trace.append(Message(client_name(int(cid)), "server", "model_update", {
                "round": round_index,
                "parameter_count": trained.parameter_count(),
                "num_samples": by_id[int(cid)].num_samples,
                "n_hat": None if est is None else est.n_hat,
                "mean_loss": mean_loss,
            }))

    flags: list[str] = []
    if use_na:
        n_hats = []
        for cid in selected:
            est = by_id[int(cid)].estimate
            if est is None:
                raise ValueError(
                    f"round {round_index} aborted: client {int(cid)} has no noise "
                    "estimate for na_fedavg"
                )
            n_hats.append(est.n_hat)
        weights, fallback = na_fedavg_weights(sizes, np.array(n_hats))
        if fallback:
            flags.append("na_fedavg_fallback")
    else:
        weights = fedavg_weights(sizes)

    aggregated = weighted_mean_model([mdl for mdl, _ in results], weights)
    accuracy = evaluate_accuracy(aggregated, test)

    position = {int(cid): i for i, cid in enumerate(ids)}
    full_weights = np.zeros(len(states))
    for cid, w in zip(selected, weights):
        full_weights[position[int(cid)]] = w
    report = RoundReport(
        round=round_index,
        selected_ids=tuple(int(c) for c in selected),
        client_losses={int(cid): loss for cid, (_, loss) in zip(selected, results)},
        weights=full_weights,
        test_accuracy=accuracy,
        wall_time=time.perf_counter() - started,
        flags=tuple(flags),
    )
    return GlobalModel(aggregated, round_index), report


def _attach_estimates(states: list[ClientState],
                      outcomes: list[EstimationOutcome]) -> list[ClientState]:
    by_id = {o.client_id: o for o in outcomes}
    return [
        replace(state, estimate=by_id[state.client_id].estimate)
        if state.client_id in by_id else state
        for state in states
    ]


def _augment_nnc_stats(stats: CorrectionStats, before: np.ndarray, after: np.ndarray,
                       truth: np.ndarray) -> CorrectionStats:
    """Evaluation-only correction quality; runs outside the client path."""
    changed = after != before
    noisy = before != truth
    repaired = changed & (after == truth)
    return replace(
        stats,
        pre_accuracy=float((before == truth).mean()),
        post_accuracy=float((after == truth).mean()),
        precision=float((after[changed] == truth[changed]).mean()) if changed.any() else None,
        recall=float(repaired.sum() / noisy.sum()) if noisy.any() else None,
    )


def _config_echo(config: FederatedConfig) -> dict:
    return {
        "num_clients": config.num_clients,
        "rounds": config.rounds,
        "participation_fraction": config.participation_fraction,
        "strategy": config.strategy,
        "init_correction": config.init_correction,
        "local_loss": config.local_loss,
        "estimation_method": config.estimation_method,
        "k": config.k,
        "tau_nnc": config.tau_nnc,
        "beta_max": config.beta_max,
        "temperature": config.temperature,
        "warmup_rounds": config.warmup_rounds,
        "hidden_sizes": list(config.hidden_sizes),
        "seed": config.seed,
        "train": {
            "learning_rate": config.train.learning_rate,
            "batch_size": config.train.batch_size,
            "local_epochs": config.train.local_epochs,
            "weight_decay": config.train.weight_decay,
        },
    }


def run_experiment(config: FederatedConfig, train: EmbeddingDataset,
                   test: EmbeddingDataset, partition: PartitionMap,
                   profiles: list[ClientNoiseProfile] | None = None,
                   workers: int = 1) -> ExperimentResult:
    """Full pipeline: corrupt, optionally correct, estimate, then train.

    ``profiles=None`` means the train split is consumed as-is (already
    noisy or clean). With the confidence estimation method the first
    ``warmup_rounds`` rounds run as plain FedAvg, the estimation round
    follows, and the interventions activate for the remaining rounds.
    """
    if partition.num_clients != config.num_clients:
        raise ValueError(
            f"config expects {config.num_clients} clients, partition has "
            f"{partition.num_clients}"
        )
    if partition.num_samples != len(train):
        raise ValueError(
            f"partition covers {partition.num_samples} samples, train split has {len(train)}"
        )
    if train.dim != test.dim:
        raise ValueError(f"train dim {train.dim} != test dim {test.dim}")
    if train.num_classes != test.num_classes:
        raise ValueError(
            f"train has {train.num_classes} classes, test has {test.num_classes}"
        )

    trace: list[Message] = []
    working = train
    if profiles is not None:
        working = corrupt_clients(train, partition, profiles, config.seed)

    views = make_client_views(working, partition)
    nnc_stats: dict[int, CorrectionStats] | None = None
    if config.init_correction == "nnc":
        nnc_stats = {}
        corrected_views = []
        for data in views:
            corrected, stats = nnc_apply(
                data, config.k, config.tau_nnc, num_classes=working.num_classes
            )
            if working.has_oracle:
                truth = working.true_labels[partition.assignments[data.client_id]]
                stats = _augment_nnc_stats(stats, data.labels, corrected.labels, truth)
            nnc_stats[data.client_id] = stats
            corrected_views.append(corrected)
        views = corrected_views

    # The noise level the estimators are measured against is that of the
    # labels the clients actually hold, i.e. after any NNC correction.
    true_noise = None
    if working.has_oracle:
        true_noise = {
            view.client_id: float(
                (view.labels
                 != working.true_labels[partition.assignments[view.client_id]]).mean()
            )
            for view in views
        }

    states = [ClientState(data=v) for v in views]
    layer_sizes = (working.dim, *config.hidden_sizes, working.num_classes)
    global_model = GlobalModel(init_weights(layer_sizes, derive_seed(config.seed, "init")))

    estimation_outcomes: list[EstimationOutcome] | None = None
    pending_confidence = False
    experiment_flags: list[str] = []
    if config.needs_estimates:
        if config.estimation_method == "knn":
            estimation_outcomes = estimation_round(
                [s.data for s in states], "knn", k=config.k,
                num_classes=working.num_classes, trace=trace,
            )
            states = _attach_estimates(states, estimation_outcomes)
        else:
            pending_confidence = True

    reports: list[RoundReport] = []
    for _ in range(config.rounds):
        if pending_confidence and global_model.round >= config.warmup_rounds:
            estimation_outcomes = estimation_round(
                [s.data for s in states], "confidence", model=global_model.model,
                trace=trace,
            )
            states = _attach_estimates(states, estimation_outcomes)
            pending_confidence = False
        global_model, report = run_round(
            global_model, states, test, config, trace=trace, workers=workers,
            interventions_active=not pending_confidence,
        )
        reports.append(report)
    if pending_confidence:
        estimation_outcomes = estimation_round(
            [s.data for s in states], "confidence", model=global_model.model, trace=trace,
        )
        states = _attach_estimates(states, estimation_outcomes)
        experiment_flags.append("estimation_after_training")

    summary = _build_summary(config, states, reports, true_noise, nnc_stats,
                             estimation_outcomes, experiment_flags)
    return ExperimentResult(
        reports=reports,
        summary=summary,
        final_model=global_model.model,
        states=states,
        trace=trace,
        estimation=estimation_outcomes,
        nnc_stats=nnc_stats,
    )


def _build_summary(config, states, reports, true_noise, nnc_stats,
                   estimation_outcomes, experiment_flags) -> dict:
    accuracies = [r.test_accuracy for r in reports]
    best = int(np.argmax(accuracies))
    worst = int(np.argmin(accuracies))

    per_client = []
    errors = []
    for state in sorted(states, key=lambda s: s.client_id):
        n_hat = state.estimate.n_hat if state.estimate is not None else None
        realized = true_noise.get(state.client_id) if true_noise else None
        per_client.append({
            "client_id": state.client_id,
            "num_samples": state.num_samples,
            "n_hat": n_hat,
            "true_noise_level": realized,
        })
        if n_hat is not None and realized is not None:
            errors.append(abs(n_hat - realized))

    nnc_summary = None
    if nnc_stats is not None:
        total = sum(s.total for s in nnc_stats.values())
        corrected = sum(s.corrected for s in nnc_stats.values())
        flagged = sum(s.flagged for s in nnc_stats.values())
        nnc_summary = {
            "total_samples": total,
            "flagged": flagged,
            "corrected": corrected,
            "per_client": {
                str(cid): {
                    "total": s.total,
                    "flagged": s.flagged,
                    "corrected": s.corrected,
                    "pre_accuracy": s.pre_accuracy,
                    "post_accuracy": s.post_accuracy,
                    "precision": s.precision,
                    "recall": s.recall,
                }
                for cid, s in sorted(nnc_stats.items())
            },
        }
        oracle = [s for s in nnc_stats.values() if s.pre_accuracy is not None]
        if oracle:
            pre = sum(s.pre_accuracy * s.total for s in oracle) / sum(s.total for s in oracle)
            post = sum(s.post_accuracy * s.total for s in oracle) / sum(s.total for s in oracle)
            nnc_summary["pre_accuracy"] = pre
            nnc_summary["post_accuracy"] = post

    round_flags = {str(r.round): list(r.flags) for r in reports if r.flags}
    estimation_errors = None
    if estimation_outcomes is not None:
        estimation_errors = {
            str(o.client_id): o.error for o in estimation_outcomes if o.error
        } or None

    return {
        "config": _config_echo(config),
        "final_accuracy": accuracies[-1] if accuracies else None,
        "final_round": reports[-1].round if reports else 0,
        "best_accuracy": accuracies[best] if accuracies else None,
        "best_round": reports[best].round if reports else None,
        "worst_accuracy": accuracies[worst] if accuracies else None,
        "worst_round": reports[worst].round if reports else None,
        "per_client": per_client,
        "estimation_mae": float(np.mean(errors)) if errors else None,
        "estimation_errors": estimation_errors,
        "nnc": nnc_summary,
        "round_flags": round_flags,
        "flags": experiment_flags,
    }
