"""Deterministic federated-learning simulator for noisy-label research.

Models per-client label noise with class-conditional flipping matrices,
estimates each client's noise level in a single federated round, and
applies three interventions (label correction at initialization,
noise-weighted distillation during local training, and noise-aware
aggregation) against a FedAvg baseline.
"""

from .data import (
    ClientData,
    DatasetFormatError,
    EmbeddingDataset,
    Example,
    PartitionMap,
    SyntheticSpec,
    corrupt_clients,
    generate_gaussian_mixture,
    load_dataset,
    make_client_views,
    partition_dirichlet,
    partition_iid,
    save_dataset,
)
from .engine import (
    ClientState,
    CorrectionStats,
    ExperimentResult,
    FederatedConfig,
    GlobalModel,
    RoundReport,
    akd_mix,
    fedavg_aggregate,
    fedavg_weights,
    na_fedavg_aggregate,
    na_fedavg_weights,
    nnc_apply,
    run_experiment,
    run_round,
    weighted_mean_model,
)
from .estimation import (
    EstimationOutcome,
    NoiseEstimate,
    estimate_confidence,
    estimate_knn,
    estimation_round,
)
from .models import (
    LossMix,
    Mlp,
    TrainConfig,
    cross_entropy,
    forward,
    forward_logits,
    init_weights,
    kd_loss,
    knn_predict,
    load_checkpoint,
    loss_and_gradients,
    save_checkpoint,
    train_local,
)
from .noise import (
    ClientNoiseProfile,
    NoiseMatrix,
    NoiseSpec,
    apply_noise,
    build_noise_matrix,
    empirical_matrix,
    load_matrix_csv,
    measure_noise_level,
    measure_noise_sparsity,
    normalized_noise_sparsity,
    per_class_noise_levels,
    save_matrix_csv,
)
from .scenario import Scenario, ScenarioError, load_scenario, noisy_client_count
from .seeding import derive_seed

__version__ = "0.1.0"
