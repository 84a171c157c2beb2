"""Scenario files: strict JSON schema, defaults, and realization.

A scenario fully describes an experiment: dataset source, client
partition, noise plan, and federated configuration. Validation is
strict (unknown keys are errors, reported with JSON-pointer paths) and
every default is filled into a resolved echo that outputs embed, so any
artifact can reproduce its run with no other state.
"""

import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .data import (
    EmbeddingDataset,
    PartitionMap,
    SyntheticSpec,
    generate_gaussian_mixture,
    load_dataset,
    partition_dirichlet,
    partition_iid,
)
from .engine import FederatedConfig
from .models import TrainConfig
from .noise import STRUCTURES, ClientNoiseProfile, NoiseSpec, build_noise_matrix
from .seeding import derive_seed

SEED_ENV_VAR = "FEDLN_SEED"

# Strategy presets: which interventions each sweep arm enables.
STRATEGY_PRESETS = {
    "fedavg": {"strategy": "fedavg", "init_correction": "none", "local_loss": "ce"},
    "nnc": {"init_correction": "nnc"},
    "akd": {"local_loss": "akd"},
    "na_fedavg": {"strategy": "na_fedavg"},
    "fedln": {"init_correction": "nnc", "strategy": "na_fedavg"},
}

_TRAIN_DEFAULTS = {
    "learning_rate": 0.1,
    "batch_size": 32,
    "local_epochs": 2,
    "weight_decay": 0.0,
}
_FEDERATED_DEFAULTS = {
    "num_clients": 10,
    "rounds": 50,
    "participation_fraction": 1.0,
    "strategy": "fedavg",
    "init_correction": "none",
    "local_loss": "ce",
    "estimation_method": "knn",
    "k": 10,
    "tau_nnc": 0.6,
    "beta_max": 1.0,
    "temperature": 3.0,
    "warmup_rounds": 20,
    "hidden_sizes": [64],
}
_NOISE_DEFAULTS = {
    "noise_level": 0.0,
    "noise_sparsity": 0.0,
    "structure": "uniform",
    "noisy_client_fraction": 1.0,
}


class ScenarioError(ValueError):
    """Scenario validation failure with a JSON-pointer location."""


def _fail(pointer: str, message: str):
    raise ScenarioError(f"validation error at {pointer or '/'}: {message}")


def _expect_object(value, pointer: str, allowed: set[str], required: set[str] = frozenset()):
    if not isinstance(value, dict):
        _fail(pointer, f"expected an object, got {type(value).__name__}")
    for key in value:
        if key not in allowed:
            _fail(f"{pointer}/{key}", "unknown key")
    for key in required:
        if key not in value:
            _fail(pointer, f"missing required key '{key}'")


def _number(obj, key, pointer, default=None, lo=None, hi=None, integer=False,
            exclusive_lo=False):
    if key not in obj:
        if default is None:
            _fail(pointer, f"missing required key '{key}'")
        return default
    value = obj[key]
    here = f"{pointer}/{key}"
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(here, f"expected a number, got {type(value).__name__}")
    if integer and not isinstance(value, int):
        _fail(here, f"expected an integer, got {value!r}")
    if lo is not None and (value <= lo if exclusive_lo else value < lo):
        op = ">" if exclusive_lo else ">="
        _fail(here, f"must be {op} {lo}, got {value}")
    if hi is not None and value > hi:
        _fail(here, f"must be <= {hi}, got {value}")
    return value


def _choice(obj, key, pointer, options, default=None):
    if key not in obj:
        if default is None:
            _fail(pointer, f"missing required key '{key}'")
        return default
    value = obj[key]
    if value not in options:
        _fail(f"{pointer}/{key}", f"must be one of {sorted(options)}, got {value!r}")
    return value


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    seed: int
    seed_source: str
    output_dir: str | None
    dataset: dict
    partition: dict
    noise: dict
    federated: FederatedConfig
    resolved: dict
    base_dir: Path


def _validate_noise_entry(entry, pointer: str) -> dict:
    _expect_object(entry, pointer, {"noise_level", "noise_sparsity", "structure", "seed"})
    parsed = {
        "noise_level": _number(entry, "noise_level", pointer, lo=0.0, hi=1.0, default=0.0),
        "noise_sparsity": _number(entry, "noise_sparsity", pointer, lo=0.0, hi=1.0,
                                  default=_NOISE_DEFAULTS["noise_sparsity"]),
        "structure": _choice(entry, "structure", pointer, STRUCTURES,
                             default=_NOISE_DEFAULTS["structure"]),
        "seed": None,
    }
    if "seed" in entry:
        parsed["seed"] = _number(entry, "seed", pointer, integer=True)
    return parsed


def load_scenario(path) -> Scenario:
    """Parse, validate, and resolve a scenario file.

    ``preset:<name>`` paths load a shipped preset. The FEDLN_SEED
    environment variable overrides the scenario seed; the override and
    its source are echoed into the resolved scenario.
    """
    text, base_dir, default_id = read_scenario_source(path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON: {exc}") from exc
    return parse_scenario(raw, base_dir, default_id)


def parse_scenario(raw: dict, base_dir: Path, default_id: str,
                   apply_env: bool = True) -> Scenario:
    """Validate and resolve an in-memory scenario document."""
    _expect_object(raw, "", {"scenario_id", "output_dir", "seed", "dataset",
                             "partition", "noise", "federated"},
                   required={"dataset"})

    scenario_id = raw.get("scenario_id", default_id)
    if not isinstance(scenario_id, str) or not scenario_id:
        _fail("/scenario_id", "expected a non-empty string")
    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        _fail("/output_dir", "expected a string")

    seed = _number(raw, "seed", "", integer=True, default=1)
    seed_source = "scenario" if "seed" in raw else "default"
    env_seed = os.environ.get(SEED_ENV_VAR) if apply_env else None
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ScenarioError(
                f"environment variable {SEED_ENV_VAR}={env_seed!r} is not an integer"
            ) from None
        seed_source = "env"

    dataset = _resolve_dataset(raw["dataset"], seed, base_dir)
    partition = _resolve_partition(raw.get("partition", {"kind": "iid"}))
    federated_raw = raw.get("federated", {})
    federated, federated_resolved = _resolve_federated(federated_raw, seed)
    noise = _resolve_noise(raw.get("noise", {}), seed, federated.num_clients)

    resolved = {
        "scenario_id": scenario_id,
        "output_dir": output_dir,
        "seed": seed,
        "seed_source": seed_source,
        "dataset": dataset,
        "partition": partition,
        "noise": noise,
        "federated": federated_resolved,
    }
    return Scenario(
        scenario_id=scenario_id,
        seed=seed,
        seed_source=seed_source,
        output_dir=output_dir,
        dataset=dataset,
        partition=partition,
        noise=noise,
        federated=federated,
        resolved=resolved,
        base_dir=base_dir,
    )


def read_scenario_source(path) -> tuple[str, Path, str]:
    path = str(path)
    if path.startswith("preset:"):
        name = path.split(":", 1)[1]
        ref = resources.files("fedln").joinpath("presets", f"{name}.json")
        if not ref.is_file():
            raise ScenarioError(f"unknown preset {name!r}; see fedln.scenario.list_presets()")
        return ref.read_text(), Path.cwd(), name
    file_path = Path(path)
    if not file_path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    return file_path.read_text(), file_path.parent, file_path.stem


def list_presets() -> list[str]:
    root = resources.files("fedln").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _resolve_dataset(section, seed: int, base_dir: Path) -> dict:
    pointer = "/dataset"
    _expect_object(section, pointer, {"synthetic", "path", "test_path"})
    has_synthetic = "synthetic" in section
    has_path = "path" in section
    if has_synthetic == has_path:
        _fail(pointer, "provide exactly one of 'synthetic' or 'path'")
    if has_synthetic:
        sub = section["synthetic"]
        sp = f"{pointer}/synthetic"
        _expect_object(sub, sp, {"num_classes", "dim", "per_class_count", "separation", "seed"},
                       required={"num_classes", "dim", "per_class_count", "separation"})
        return {
            "synthetic": {
                "num_classes": _number(sub, "num_classes", sp, integer=True, lo=2),
                "dim": _number(sub, "dim", sp, integer=True, lo=2),
                "per_class_count": _number(sub, "per_class_count", sp, integer=True, lo=1),
                "separation": _number(sub, "separation", sp, lo=0.0),
                "seed": _number(sub, "seed", sp, integer=True,
                                default=derive_seed(seed, "dataset")),
            }
        }
    train_path = section["path"]
    if not isinstance(train_path, str):
        _fail(f"{pointer}/path", "expected a string")
    test_path = section.get("test_path")
    if test_path is not None and not isinstance(test_path, str):
        _fail(f"{pointer}/test_path", "expected a string")
    for key, rel in (("path", train_path), ("test_path", test_path)):
        if rel is not None and not (base_dir / rel).is_file():
            _fail(f"{pointer}/{key}", f"referenced file does not exist: {base_dir / rel}")
    return {"path": train_path, "test_path": test_path}


def _resolve_partition(section) -> dict:
    pointer = "/partition"
    _expect_object(section, pointer, {"kind", "alpha"})
    kind = _choice(section, "kind", pointer, ("iid", "dirichlet"), default="iid")
    if kind == "iid":
        if "alpha" in section:
            _fail(f"{pointer}/alpha", "alpha only applies to dirichlet partitions")
        return {"kind": "iid"}
    return {"kind": "dirichlet",
            "alpha": _number(section, "alpha", pointer, lo=0.0, exclusive_lo=True)}


def _resolve_noise(section, seed: int, num_clients: int) -> dict:
    pointer = "/noise"
    _expect_object(section, pointer, {"noise_level", "noise_sparsity", "structure",
                                      "noisy_client_fraction", "per_client", "seed"})
    if "per_client" in section:
        for key in ("noise_level", "noise_sparsity", "structure", "noisy_client_fraction"):
            if key in section:
                _fail(f"{pointer}/{key}", "not allowed together with per_client")
        entries = section["per_client"]
        if not isinstance(entries, list):
            _fail(f"{pointer}/per_client", "expected a list")
        if len(entries) != num_clients:
            _fail(f"{pointer}/per_client",
                  f"expected {num_clients} entries (one per client), got {len(entries)}")
        resolved = []
        for i, entry in enumerate(entries):
            parsed = _validate_noise_entry(entry, f"{pointer}/per_client/{i}")
            if parsed["seed"] is None:
                parsed["seed"] = derive_seed(seed, "noise", i)
            resolved.append(parsed)
        return {"per_client": resolved}
    plan = _validate_noise_entry(
        {k: v for k, v in section.items() if k != "noisy_client_fraction"}, pointer
    )
    if plan["seed"] is None:
        plan["seed"] = derive_seed(seed, "noise")
    plan["noisy_client_fraction"] = _number(
        section, "noisy_client_fraction", pointer, lo=0.0, hi=1.0,
        default=_NOISE_DEFAULTS["noisy_client_fraction"],
    )
    return plan


def _resolve_federated(section, seed: int) -> tuple[FederatedConfig, dict]:
    pointer = "/federated"
    _expect_object(section, pointer, set(_FEDERATED_DEFAULTS) | {"train"})
    values = {}
    values["num_clients"] = _number(section, "num_clients", pointer, integer=True, lo=1,
                                    default=_FEDERATED_DEFAULTS["num_clients"])
    values["rounds"] = _number(section, "rounds", pointer, integer=True, lo=1,
                               default=_FEDERATED_DEFAULTS["rounds"])
    values["participation_fraction"] = _number(
        section, "participation_fraction", pointer, lo=0.0, hi=1.0, exclusive_lo=True,
        default=_FEDERATED_DEFAULTS["participation_fraction"])
    values["strategy"] = _choice(section, "strategy", pointer, ("fedavg", "na_fedavg"),
                                 default=_FEDERATED_DEFAULTS["strategy"])
    values["init_correction"] = _choice(section, "init_correction", pointer, ("none", "nnc"),
                                        default=_FEDERATED_DEFAULTS["init_correction"])
    values["local_loss"] = _choice(section, "local_loss", pointer, ("ce", "akd"),
                                   default=_FEDERATED_DEFAULTS["local_loss"])
    values["estimation_method"] = _choice(section, "estimation_method", pointer,
                                          ("knn", "confidence"),
                                          default=_FEDERATED_DEFAULTS["estimation_method"])
    values["k"] = _number(section, "k", pointer, integer=True, lo=1,
                          default=_FEDERATED_DEFAULTS["k"])
    values["tau_nnc"] = _number(section, "tau_nnc", pointer, lo=0.0, hi=1.0,
                                default=_FEDERATED_DEFAULTS["tau_nnc"])
    values["beta_max"] = _number(section, "beta_max", pointer, lo=0.0, hi=1.0,
                                 default=_FEDERATED_DEFAULTS["beta_max"])
    values["temperature"] = _number(section, "temperature", pointer, lo=0.0,
                                    exclusive_lo=True,
                                    default=_FEDERATED_DEFAULTS["temperature"])
    values["warmup_rounds"] = _number(section, "warmup_rounds", pointer, integer=True, lo=0,
                                      default=_FEDERATED_DEFAULTS["warmup_rounds"])
    hidden = section.get("hidden_sizes", _FEDERATED_DEFAULTS["hidden_sizes"])
    if (not isinstance(hidden, list) or not hidden
            or any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in hidden)):
        _fail(f"{pointer}/hidden_sizes", "expected a non-empty list of positive integers")
    values["hidden_sizes"] = tuple(hidden)

    train_section = section.get("train", {})
    tp = f"{pointer}/train"
    _expect_object(train_section, tp, set(_TRAIN_DEFAULTS))
    train = TrainConfig(
        learning_rate=_number(train_section, "learning_rate", tp, lo=0.0, exclusive_lo=True,
                              default=_TRAIN_DEFAULTS["learning_rate"]),
        batch_size=_number(train_section, "batch_size", tp, integer=True, lo=1,
                           default=_TRAIN_DEFAULTS["batch_size"]),
        local_epochs=_number(train_section, "local_epochs", tp, integer=True, lo=1,
                             default=_TRAIN_DEFAULTS["local_epochs"]),
        weight_decay=_number(train_section, "weight_decay", tp, lo=0.0,
                             default=_TRAIN_DEFAULTS["weight_decay"]),
    )
    try:
        config = FederatedConfig(train=train, seed=seed, **values)
    except ValueError as exc:
        raise ScenarioError(f"validation error at {pointer}: {exc}") from exc
    resolved = dict(values)
    resolved["hidden_sizes"] = list(config.hidden_sizes)
    resolved["seed"] = seed
    resolved["train"] = {
        "learning_rate": train.learning_rate,
        "batch_size": train.batch_size,
        "local_epochs": train.local_epochs,
        "weight_decay": train.weight_decay,
    }
    return config, resolved


def noisy_client_count(fraction: float, num_clients: int) -> int:
    """Largest-remainder rounding of fraction * num_clients for one bucket."""
    return int(math.floor(fraction * num_clients + 0.5))


def realize_dataset(scenario: Scenario) -> tuple[EmbeddingDataset, EmbeddingDataset | None]:
    """Generate or load the (train, test) splits named by the scenario."""
    if "synthetic" in scenario.dataset:
        spec = SyntheticSpec(**scenario.dataset["synthetic"])
        return generate_gaussian_mixture(spec)
    train = load_dataset(scenario.base_dir / scenario.dataset["path"], split="train")
    test = None
    if scenario.dataset.get("test_path"):
        test = load_dataset(scenario.base_dir / scenario.dataset["test_path"], split="test")
    return train, test


def realize_partition(scenario: Scenario, train: EmbeddingDataset) -> PartitionMap:
    seed = derive_seed(scenario.seed, "partition")
    if scenario.partition["kind"] == "iid":
        return partition_iid(len(train), scenario.federated.num_clients, seed)
    return partition_dirichlet(train.observed_labels, scenario.federated.num_clients,
                               scenario.partition["alpha"], seed)


def plan_is_clean(scenario: Scenario) -> bool:
    """True when the noise plan injects nothing.

    A clean plan skips the corruption stage entirely, so datasets loaded
    from already-noisy files keep their observed labels (corruption
    re-draws observed labels from the true ones).
    """
    if "per_client" in scenario.noise:
        return all(entry["noise_level"] == 0.0 for entry in scenario.noise["per_client"])
    return (scenario.noise["noise_level"] == 0.0
            or noisy_client_count(scenario.noise["noisy_client_fraction"],
                                  scenario.federated.num_clients) == 0)


def realize_profiles(scenario: Scenario, num_classes: int) -> list[ClientNoiseProfile]:
    """Build per-client noise matrices from the scenario's noise plan."""
    m = scenario.federated.num_clients
    profiles = []
    if "per_client" in scenario.noise:
        for cid, entry in enumerate(scenario.noise["per_client"]):
            spec = NoiseSpec(num_classes=num_classes, **entry)
            profiles.append(ClientNoiseProfile(cid, build_noise_matrix(spec)))
        return profiles
    plan = scenario.noise
    noisy = noisy_client_count(plan["noisy_client_fraction"], m)
    spec = NoiseSpec(
        num_classes=num_classes,
        noise_level=plan["noise_level"],
        noise_sparsity=plan["noise_sparsity"],
        structure=plan["structure"],
        seed=plan["seed"],
    )
    noisy_matrix = build_noise_matrix(spec)
    clean = NoiseSpec(num_classes=num_classes, noise_level=0.0, seed=plan["seed"])
    clean_matrix = build_noise_matrix(clean)
    for cid in range(m):
        profiles.append(ClientNoiseProfile(cid, noisy_matrix if cid < noisy else clean_matrix))
    return profiles
