"""Command-line entry point.

Subcommands: gen-data, inject-noise, estimate, train, report, sweep.
Exit codes: 0 success, 2 configuration error, 1 runtime error. All
outputs are deterministic; re-running a command with the same scenario
overwrites with identical bytes.
"""

import argparse
import json
import sys
from pathlib import Path

from .data import (
    DatasetFormatError,
    SyntheticSpec,
    corrupt_clients,
    generate_gaussian_mixture,
    make_client_views,
    save_dataset,
)
from .engine import ClientState, GlobalModel, run_experiment, run_round
from .estimation import estimation_round
from .models import init_weights
from .noise import (
    measure_noise_level,
    measure_noise_sparsity,
    normalized_noise_sparsity,
    save_matrix_csv,
)
from .reporting import (
    write_estimation_csv,
    write_long_csv,
    write_rounds_csv,
    write_summary_json,
)
from .scenario import (
    STRATEGY_PRESETS,
    Scenario,
    ScenarioError,
    load_scenario,
    parse_scenario,
    plan_is_clean,
    read_scenario_source,
    realize_dataset,
    realize_partition,
    realize_profiles,
)
from .seeding import derive_seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedln",
        description="Deterministic federated-learning simulator with label-noise "
                    "estimation and mitigation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write FLNE files from a synthetic spec")
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--dim", type=int, required=True)
    gen.add_argument("--per-class", type=int, required=True)
    gen.add_argument("--separation", type=float, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--name", default="dataset")
    gen.add_argument("--out", default=".")
    gen.set_defaults(func=cmd_gen_data)

    inject = sub.add_parser("inject-noise",
                            help="apply client noise profiles, write corrupted FLNE "
                                 "plus the realized matrices")
    inject.add_argument("--config", required=True)
    inject.add_argument("--out", default=".")
    inject.set_defaults(func=cmd_inject_noise)

    estimate = sub.add_parser("estimate", help="run one noise-estimation round")
    estimate.add_argument("--config", required=True)
    estimate.add_argument("--method", choices=("knn", "confidence"))
    estimate.add_argument("--out", default=".")
    estimate.set_defaults(func=cmd_estimate)

    train = sub.add_parser("train", help="run the federated experiment")
    train.add_argument("--config", required=True)
    train.add_argument("--out", default=".")
    train.add_argument("--workers", type=int, default=1,
                       help="client-level parallelism; never changes output bytes")
    train.set_defaults(func=cmd_train)

    report = sub.add_parser("report", help="convert run outputs to plot-ready long CSV")
    report.add_argument("runs", nargs="+", help="run directories holding summary files")
    report.add_argument("--out", required=True)
    report.set_defaults(func=cmd_report)

    sweep = sub.add_parser("sweep", help="run a noise-level x strategy x seed grid")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--grid", required=True,
                       help="noise levels, e.g. nl=0,0.2,0.4,0.6")
    sweep.add_argument("--strategies", required=True,
                       help=f"comma-separated from {sorted(STRATEGY_PRESETS)}")
    sweep.add_argument("--seeds", default=None, help="comma-separated seed entries")
    sweep.add_argument("--out", default=".")
    sweep.add_argument("--workers", type=int, default=1)
    sweep.set_defaults(func=cmd_sweep)
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (ScenarioError, DatasetFormatError) as exc:
        print(f"fedln: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"fedln: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli(sys.argv[1:]))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.classes,
        dim=args.dim,
        per_class_count=args.per_class,
        separation=args.separation,
        seed=args.seed,
    )
    train, test = generate_gaussian_mixture(spec)
    out = _outdir(args)
    save_dataset(train, out / f"{args.name}_train.flne")
    save_dataset(test, out / f"{args.name}_test.flne")
    sidecar = {
        "synthetic": {
            "num_classes": spec.num_classes,
            "dim": spec.dim,
            "per_class_count": spec.per_class_count,
            "separation": spec.separation,
            "seed": spec.seed,
        },
        "files": {"train": f"{args.name}_train.flne", "test": f"{args.name}_test.flne"},
    }
    (out / f"{args.name}.scenario.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {args.name}_train.flne ({len(train)} records) and "
          f"{args.name}_test.flne ({len(test)} records) to {out}")
    return 0


def _realized(scenario: Scenario):
    """Dataset, partition, and corruption profiles (None for clean plans).

    A clean plan must not touch the data: corruption re-draws observed
    labels from the true ones, which would wipe the noise in a loaded,
    already-corrupted file.
    """
    train, test = realize_dataset(scenario)
    partition = realize_partition(scenario, train)
    profiles = None if plan_is_clean(scenario) else realize_profiles(scenario, train.num_classes)
    return train, test, partition, profiles


def cmd_inject_noise(args) -> int:
    scenario = load_scenario(args.config)
    train, test, partition, _ = _realized(scenario)
    profiles = realize_profiles(scenario, train.num_classes)
    corrupted = train
    if not plan_is_clean(scenario):
        corrupted = corrupt_clients(train, partition, profiles, scenario.federated.seed)
    out = _outdir(args)
    save_dataset(corrupted, out / "corrupted_train.flne")
    if test is not None:
        save_dataset(test, out / "test.flne")
    matrices = out / "matrices"
    matrices.mkdir(exist_ok=True)
    measured = {}
    for profile in profiles:
        save_matrix_csv(profile.matrix, matrices / f"client_{profile.client_id:02d}.csv")
        measured[str(profile.client_id)] = {
            "noise_level": measure_noise_level(profile.matrix),
            "noise_sparsity_raw": measure_noise_sparsity(profile.matrix),
            "noise_sparsity_normalized": normalized_noise_sparsity(profile.matrix),
        }
    (matrices / "measured.json").write_text(
        json.dumps({"scenario": scenario.resolved, "per_client": measured},
                   indent=2, sort_keys=True) + "\n"
    )
    (out / "inject.scenario.json").write_text(
        json.dumps(scenario.resolved, indent=2, sort_keys=True) + "\n"
    )
    flipped = (corrupted.observed_labels != train.observed_labels).mean()
    print(f"wrote corrupted_train.flne ({len(corrupted)} records, "
          f"{flipped:.1%} labels changed) and {len(profiles)} matrices to {out}")
    return 0


def cmd_estimate(args) -> int:
    scenario = load_scenario(args.config)
    method = args.method or scenario.federated.estimation_method or "knn"
    config = scenario.federated
    train, test, partition, profiles = _realized(scenario)
    corrupted = train
    if profiles is not None:
        corrupted = corrupt_clients(train, partition, profiles, config.seed)
    views = make_client_views(corrupted, partition)

    if method == "confidence":
        if test is None:
            raise ScenarioError(
                "the confidence method needs a test split for its warm-up rounds"
            )
        layer_sizes = (corrupted.dim, *config.hidden_sizes, corrupted.num_classes)
        global_model = GlobalModel(init_weights(layer_sizes, derive_seed(config.seed, "init")))
        states = [ClientState(data=v) for v in views]
        for _ in range(config.warmup_rounds):
            global_model, _report = run_round(global_model, states, test, config,
                                              interventions_active=False)
        outcomes = estimation_round(views, "confidence", model=global_model.model)
    else:
        outcomes = estimation_round(views, "knn", k=config.k,
                                    num_classes=corrupted.num_classes)

    rows = []
    errors = []
    for outcome in sorted(outcomes, key=lambda o: o.client_id):
        row = {"client_id": outcome.client_id, "method": method}
        if outcome.estimate is not None:
            row.update({
                "n_hat": outcome.estimate.n_hat,
                "sample_count": outcome.estimate.sample_count,
                "flagged_count": outcome.estimate.flagged_count,
            })
            if corrupted.has_oracle:
                idx = partition.assignments[outcome.client_id]
                realized = float(
                    (corrupted.observed_labels[idx] != corrupted.true_labels[idx]).mean()
                )
                errors.append(abs(outcome.estimate.n_hat - realized))
        rows.append(row)

    out = _outdir(args)
    write_estimation_csv(out / "estimation.csv", rows, scenario.resolved)
    summary = {
        "scenario": scenario.resolved,
        "method": method,
        "estimation_mae": (sum(errors) / len(errors)) if errors else None,
        "clients_estimated": sum(1 for r in rows if "n_hat" in r),
        "clients_failed": sum(1 for r in rows if "n_hat" not in r),
    }
    (out / "estimation_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    mae = summary["estimation_mae"]
    print(f"estimation ({method}): {summary['clients_estimated']} clients"
          + (f", MAE vs realized noise {mae:.4f}" if mae is not None else ""))
    return 0


def cmd_train(args) -> int:
    scenario = load_scenario(args.config)
    train, test, partition, profiles = _realized(scenario)
    if test is None:
        raise ScenarioError("training needs a test split; set /dataset/test_path")
    result = run_experiment(scenario.federated, train, test, partition, profiles,
                            workers=args.workers)
    out = _outdir(args)
    write_rounds_csv(out / "rounds.csv", result.reports, scenario.resolved)
    write_summary_json(out / "summary.json", result.summary, scenario.resolved)
    print(f"{scenario.scenario_id}: final accuracy "
          f"{result.summary['final_accuracy']:.4f} after {len(result.reports)} rounds")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_long_csv(out, [Path(r) for r in args.runs])
    print(f"wrote {out}")
    return 0


def _parse_grid(grid: str) -> list[float]:
    if not grid.startswith("nl="):
        raise ScenarioError(f"--grid must look like 'nl=0,0.2,0.4', got {grid!r}")
    try:
        return [float(v) for v in grid[3:].split(",") if v != ""]
    except ValueError as exc:
        raise ScenarioError(f"bad --grid value: {exc}") from exc


def cmd_sweep(args) -> int:
    base = load_scenario(args.config)
    raw_text, _, _ = read_scenario_source(args.config)
    levels = _parse_grid(args.grid)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for strategy in strategies:
        if strategy not in STRATEGY_PRESETS:
            raise ScenarioError(
                f"unknown strategy {strategy!r}; choose from {sorted(STRATEGY_PRESETS)}"
            )
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    if "per_client" in base.noise:
        raise ScenarioError("sweep needs a global noise plan, not per_client")

    out = _outdir(args)
    ran = skipped = 0
    for level in levels:
        for strategy in strategies:
            for seed_entry in seeds:
                cell = f"nl{level:g}_{strategy}_seed{seed_entry}"
                rounds_path = out / f"{cell}_rounds.csv"
                summary_path = out / f"{cell}_summary.json"
                if rounds_path.is_file() and summary_path.is_file():
                    skipped += 1
                    continue
                raw = json.loads(raw_text)
                raw["scenario_id"] = f"{base.scenario_id}_{cell}"
                raw.setdefault("noise", {})["noise_level"] = level
                fed = raw.setdefault("federated", {})
                fed.update(STRATEGY_PRESETS[strategy])
                raw["seed"] = derive_seed(base.seed, "sweep", strategy,
                                          f"nl={level:g}", seed_entry)
                cell_scenario = parse_scenario(raw, base.base_dir,
                                               raw["scenario_id"], apply_env=False)
                train, test, partition, profiles = _realized(cell_scenario)
                if test is None:
                    raise ScenarioError("sweep needs a test split; set /dataset/test_path")
                result = run_experiment(cell_scenario.federated, train, test, partition,
                                        profiles, workers=args.workers)
                write_rounds_csv(rounds_path, result.reports, cell_scenario.resolved)
                write_summary_json(summary_path, result.summary, cell_scenario.resolved)
                print(f"{cell}: final accuracy {result.summary['final_accuracy']:.4f}")
                ran += 1
    print(f"sweep complete: {ran} cells run, {skipped} already present")
    return 0
