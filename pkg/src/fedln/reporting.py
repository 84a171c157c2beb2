"""Deterministic output artifacts: round CSVs, summaries, long-format export.

Every artifact embeds the fully resolved scenario (CSV via a leading
comment line, JSON under a "scenario" key) and is byte-identical across
re-runs: floats are written with repr, keys are sorted, and nothing
time- or path-dependent is included.
"""

import csv
import json
from pathlib import Path

from .engine import RoundReport


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def scenario_comment(resolved: dict) -> str:
    return "# scenario=" + json.dumps(resolved, sort_keys=True, separators=(",", ":"))


def write_rounds_csv(path, reports: list[RoundReport], resolved: dict) -> None:
    """One row per round: cohort, weights in client-id order, loss, accuracy."""
    with open(path, "w", newline="") as fh:
        fh.write(scenario_comment(resolved) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "selected_ids", "weights", "mean_local_loss",
                         "test_accuracy", "flags"])
        for report in reports:
            mean_loss = (sum(report.client_losses.values()) / len(report.client_losses)
                         if report.client_losses else None)
            writer.writerow([
                report.round,
                ";".join(str(c) for c in report.selected_ids),
                ";".join(repr(float(w)) for w in report.weights),
                _fmt(mean_loss),
                _fmt(report.test_accuracy),
                ";".join(report.flags),
            ])


def read_rounds_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# scenario="):
            fh.seek(0)
        for row in csv.DictReader(fh):
            rows.append(row)
    return rows


def write_summary_json(path, summary: dict, resolved: dict) -> None:
    doc = {"scenario": resolved, **summary}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_estimation_csv(path, rows: list[dict], resolved: dict) -> None:
    """Per-client estimation report; n_hat empty for failed clients."""
    with open(path, "w", newline="") as fh:
        fh.write(scenario_comment(resolved) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["client_id", "method", "n_hat", "sample_count", "flagged_count"])
        for row in rows:
            writer.writerow([
                row["client_id"],
                row["method"],
                _fmt(row.get("n_hat")),
                _fmt(row.get("sample_count")),
                _fmt(row.get("flagged_count")),
            ])


def write_long_csv(path, run_dirs: list[Path]) -> None:
    """Plot-ready long format (scenario_id, round, metric, value).

    Consumes the summary/rounds pairs found in the given run
    directories, including sweep cells (``<cell>_summary.json`` next to
    ``<cell>_rounds.csv``).
    """
    records = []
    for run_dir in run_dirs:
        for summary_path in sorted(Path(run_dir).glob("*summary.json")):
            doc = json.loads(summary_path.read_text())
            scenario_id = doc.get("scenario", {}).get("scenario_id", summary_path.stem)
            stem = summary_path.name[:-len("summary.json")]
            rounds_path = summary_path.with_name(stem + "rounds.csv")
            if rounds_path.is_file():
                for row in read_rounds_csv(rounds_path):
                    records.append((scenario_id, int(row["round"]),
                                    "test_accuracy", row["test_accuracy"]))
                    if row["mean_local_loss"]:
                        records.append((scenario_id, int(row["round"]),
                                        "mean_local_loss", row["mean_local_loss"]))
            final_round = doc.get("final_round", 0)
            for metric, round_no in (
                ("final_accuracy", final_round),
                ("best_accuracy", doc.get("best_round", final_round)),
                ("estimation_mae", final_round),
            ):
                if doc.get(metric) is not None:
                    records.append((scenario_id, int(round_no), metric, repr(doc[metric])))
    records.sort(key=lambda r: (r[0], r[2], r[1]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario_id", "round", "metric", "value"])
        writer.writerows(records)
