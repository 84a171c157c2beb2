"""Class-conditional label-noise models.

A noise matrix Q is column-stochastic: column j holds the distribution
of observed labels for samples whose ground-truth class is j. Matrices
are parameterized by a noise level (probability mass leaving the
diagonal) and a noise sparsity (how concentrated the off-diagonal mass
is: 0 spreads it over every other class, 1 confuses symmetric class
pairs only).
"""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STRUCTURES = ("uniform", "sparse_random", "class_flip")

# Off-diagonal entries below this are structural zeros, not noise mass.
ZERO_TOLERANCE = 1e-12
COLUMN_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class NoiseSpec:
    """Parameters from which a noise matrix is constructed."""

    num_classes: int
    noise_level: float
    noise_sparsity: float = 0.0
    structure: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError(f"noise_level must be in [0, 1], got {self.noise_level}")
        if not 0.0 <= self.noise_sparsity <= 1.0:
            raise ValueError(f"noise_sparsity must be in [0, 1], got {self.noise_sparsity}")
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}, got {self.structure!r}")

    @property
    def effective_sparsity(self) -> float:
        """Sparsity actually used: uniform pins 0, class_flip pins 1."""
        if self.structure == "uniform":
            return 0.0
        if self.structure == "class_flip":
            return 1.0
        return self.noise_sparsity

    def to_json(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "noise_level": self.noise_level,
            "noise_sparsity": self.noise_sparsity,
            "structure": self.structure,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseSpec":
        return cls(
            num_classes=obj["num_classes"],
            noise_level=obj["noise_level"],
            noise_sparsity=obj["noise_sparsity"],
            structure=obj["structure"],
            seed=obj["seed"],
        )


@dataclass(frozen=True)
class NoiseMatrix:
    """Column-stochastic label-flipping matrix; entries[i, j] = p(y=i | y*=j)."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"entries must be a square matrix, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("matrix must have at least one class")
        if np.any(arr < 0.0):
            raise ValueError("all entries must be non-negative")
        sums = arr.sum(axis=0)
        bad = np.where(np.abs(sums - 1.0) > COLUMN_SUM_TOLERANCE)[0]
        if bad.size:
            raise ValueError(
                f"column {bad[0]} sums to {sums[bad[0]]!r}, expected 1 within "
                f"{COLUMN_SUM_TOLERANCE}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def num_classes(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, num_classes: int) -> "NoiseMatrix":
        return cls(np.eye(num_classes))


@dataclass(frozen=True)
class ClientNoiseProfile:
    """Noise matrix assigned to one client; profiles may differ across clients."""

    client_id: int
    matrix: NoiseMatrix


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def target_count(num_classes: int, sparsity: float) -> int:
    """Number of off-diagonal classes receiving noise mass per column."""
    return max(1, _round_half_up((1.0 - sparsity) * (num_classes - 1)))


def build_noise_matrix(spec: NoiseSpec) -> NoiseMatrix:
    """Construct the matrix realizing a noise spec.

    Diagonal entries are 1 - noise_level and each column spreads its
    off-diagonal mass equally over ``target_count`` classes chosen from
    the seeded generator. class_flip pairs classes symmetrically via a
    seeded pairing; with an odd class count the leftover class keeps a
    clean column.
    """
    c = spec.num_classes
    level = spec.noise_level
    if level == 0.0:
        return NoiseMatrix.identity(c)

    q = np.zeros((c, c))
    rng = np.random.default_rng(spec.seed)
    if spec.structure == "class_flip":
        order = rng.permutation(c)
        np.fill_diagonal(q, 1.0 - level)
        for i in range(0, c - 1, 2):
            a, b = order[i], order[i + 1]
            q[a, b] = level
            q[b, a] = level
        if c % 2 == 1:
            q[order[-1], order[-1]] = 1.0
    else:
        m = target_count(c, spec.effective_sparsity)
        share = level / m
        np.fill_diagonal(q, 1.0 - level)
        for j in range(c):
            candidates = np.delete(np.arange(c), j)
            if m == c - 1:
                targets = candidates
            else:
                targets = rng.choice(candidates, size=m, replace=False)
            q[targets, j] = share
    return NoiseMatrix(q)


def measure_noise_level(matrix: NoiseMatrix) -> float:
    """Scalar noise level: one minus the mean diagonal entry."""
    q = matrix.entries
    return float(1.0 - np.trace(q) / matrix.num_classes)


def per_class_noise_levels(matrix: NoiseMatrix) -> np.ndarray:
    """Per-class noise levels 1 - p(y=j | y*=j)."""
    return 1.0 - np.diag(matrix.entries)


def _column_positive_counts(matrix: NoiseMatrix) -> tuple[np.ndarray, np.ndarray]:
    """(positive off-diagonal count, included flag) per column.

    Columns carrying no off-diagonal mass hold no noise and are excluded
    from sparsity averages.
    """
    q = matrix.entries
    c = matrix.num_classes
    off = q.copy()
    np.fill_diagonal(off, 0.0)
    positive = (off >= ZERO_TOLERANCE).sum(axis=0)
    included = off.sum(axis=0) > ZERO_TOLERANCE
    return positive, included


def measure_noise_sparsity(matrix: NoiseMatrix) -> float:
    """Raw sparsity: mean fraction of zero off-diagonal entries per noisy column."""
    c = matrix.num_classes
    if c < 2:
        return 0.0
    positive, included = _column_positive_counts(matrix)
    if not included.any():
        return 0.0
    zero_fraction = (c - 1 - positive[included]) / (c - 1)
    return float(zero_fraction.mean())


def normalized_noise_sparsity(matrix: NoiseMatrix) -> float:
    """Sparsity normalized as the inverse of the construction rule.

    A column with a single positive off-diagonal entry is maximal
    concentration (class-flip shape) and scores exactly 1; otherwise the
    score inverts the target-count formula, 1 - m/(C-1). Columns with no
    off-diagonal mass are excluded; 0 when all columns are excluded.
    """
    c = matrix.num_classes
    if c < 2:
        return 0.0
    positive, included = _column_positive_counts(matrix)
    if not included.any():
        return 0.0
    m = positive[included].astype(np.float64)
    per_column = np.where(m == 1, 1.0, 1.0 - m / (c - 1))
    return float(per_column.mean())


def apply_noise(true_labels, matrix: NoiseMatrix, seed: int) -> np.ndarray:
    """Draw an observed label for each true label from its matrix column."""
    labels = np.asarray(true_labels, dtype=np.int64)
    c = matrix.num_classes
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ValueError(f"label {bad} out of range for {c} classes")
    cdf = np.cumsum(matrix.entries, axis=0)
    u = np.random.default_rng(seed).random(labels.shape[0])
    # Inverse-CDF draw: count of cdf entries <= u equals searchsorted(side='right').
    drawn = (cdf.T[labels] <= u[:, None]).sum(axis=1)
    return np.minimum(drawn, c - 1).astype(np.int64)


def empirical_matrix(true_labels, observed_labels, num_classes: int) -> NoiseMatrix:
    """Estimate the flipping matrix from (true, observed) label pairs."""
    y_true = np.asarray(true_labels, dtype=np.int64)
    y_obs = np.asarray(observed_labels, dtype=np.int64)
    if y_true.shape != y_obs.shape:
        raise ValueError(
            f"label sequences differ in length: {y_true.shape[0]} vs {y_obs.shape[0]}"
        )
    for name, arr in (("true", y_true), ("observed", y_obs)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} labels out of range for {num_classes} classes")
    counts = np.zeros((num_classes, num_classes))
    np.add.at(counts, (y_obs, y_true), 1.0)
    totals = counts.sum(axis=0)
    missing = np.where(totals == 0)[0]
    if missing.size:
        raise ValueError(f"class {missing[0]} never appears in the true labels")
    return NoiseMatrix(counts / totals)


def save_matrix_csv(matrix: NoiseMatrix, path) -> None:
    """Write the matrix as C rows x C columns of 17-significant-digit decimals."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in matrix.entries:
            writer.writerow([f"{v:.17g}" for v in row])


def load_matrix_csv(path) -> NoiseMatrix:
    rows = []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}: bad matrix entry on line {line_no}: {exc}") from exc
    arr = np.array(rows)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{path}: expected a square matrix, got shape {arr.shape}")
    return NoiseMatrix(arr)


def save_spec_json(spec: NoiseSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True) + "\n")


def load_spec_json(path) -> NoiseSpec:
    return NoiseSpec.from_json(json.loads(Path(path).read_text()))
