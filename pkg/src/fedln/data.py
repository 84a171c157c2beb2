"""Embedding datasets, client partitioning, and per-client label corruption.

Datasets are fixed-dimension feature vectors with observed labels plus
evaluation-only true labels. Training, estimation, and correction code
paths receive :class:`ClientData` views that carry observed labels only,
so ground truth cannot leak into them by construction.
"""

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .noise import ClientNoiseProfile, apply_noise
from .seeding import derive_seed

FLNE_MAGIC = b"FLNE"
FLNE_VERSION = 1
_FLAG_TRUE_LABELS = 0x0001
_HEADER = struct.Struct("<4sHHQII")  # magic, version, flags, N, d, C


class DatasetFormatError(ValueError):
    """Raised for malformed dataset files; messages name offsets or lines."""


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    observed_label: int
    true_label: int


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian-mixture generator parameters.

    ``separation`` is the distance of each class mean from the origin in
    units of the unit isotropic within-class standard deviation.
    """

    num_classes: int
    dim: int
    per_class_count: int
    separation: float
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.per_class_count < 1:
            raise ValueError(f"per_class_count must be >= 1, got {self.per_class_count}")
        if self.separation < 0:
            raise ValueError(f"separation must be >= 0, got {self.separation}")


@dataclass(frozen=True)
class EmbeddingDataset:
    """Immutable feature/label arrays for one split."""

    features: np.ndarray  # (N, d) float32
    observed_labels: np.ndarray  # (N,) int64
    true_labels: np.ndarray  # (N,) int64, evaluation-only
    num_classes: int
    split: str = "train"
    has_oracle: bool = True

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float32)
        obs = np.array(self.observed_labels, dtype=np.int64)
        true = np.array(self.true_labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if obs.shape != (feats.shape[0],) or true.shape != (feats.shape[0],):
            raise ValueError("label arrays must match the number of feature rows")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        for name, arr in (("observed", obs), ("true", true)):
            if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
                raise ValueError(f"{name} label out of range for {self.num_classes} classes")
        if self.split == "test" and not np.array_equal(obs, true):
            raise ValueError("test split must have observed labels equal to true labels")
        for arr in (feats, obs, true):
            arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "observed_labels", obs)
        object.__setattr__(self, "true_labels", true)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def example(self, i: int) -> Example:
        return Example(self.features[i], int(self.observed_labels[i]), int(self.true_labels[i]))


@dataclass(frozen=True)
class ClientData:
    """One client's training view: features and observed labels only."""

    client_id: int
    features: np.ndarray  # (n, d) float32
    labels: np.ndarray  # (n,) int64 observed

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float32)
        labels = np.array(self.labels, dtype=np.int64)
        if feats.ndim != 2 or labels.shape != (feats.shape[0],):
            raise ValueError("client view shapes are inconsistent")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class PartitionMap:
    """Disjoint assignment of train indices to clients covering all samples."""

    assignments: dict[int, np.ndarray]
    num_samples: int

    def __post_init__(self):
        cleaned = {}
        seen = 0
        for client_id in sorted(self.assignments):
            idx = np.array(self.assignments[client_id], dtype=np.int64)
            if idx.size == 0:
                raise ValueError(f"client {client_id} received no samples")
            idx.setflags(write=False)
            cleaned[int(client_id)] = idx
            seen += idx.size
        if seen != self.num_samples:
            raise ValueError(
                f"partition covers {seen} indices, dataset has {self.num_samples}"
            )
        union = np.concatenate(list(cleaned.values()))
        if not np.array_equal(np.sort(union), np.arange(self.num_samples)):
            raise ValueError("partition indices must be disjoint and cover the dataset")
        object.__setattr__(self, "assignments", cleaned)

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> dict[int, int]:
        return {cid: idx.size for cid, idx in self.assignments.items()}


def generate_gaussian_mixture(spec: SyntheticSpec) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Sample train/test splits from a seeded isotropic Gaussian mixture.

    Class means lie uniformly on the radius-``separation`` sphere; each
    class contributes ``per_class_count`` train samples and a fifth as
    many (rounded up) clean test samples.
    """
    rng = np.random.default_rng(spec.seed)
    c, d = spec.num_classes, spec.dim
    directions = rng.standard_normal((c, d))
    norms = np.maximum(np.linalg.norm(directions, axis=1, keepdims=True), 1e-300)
    means = directions / norms * spec.separation

    n_test = math.ceil(spec.per_class_count / 5)
    train_feats, test_feats = [], []
    for k in range(c):
        train_feats.append(means[k] + rng.standard_normal((spec.per_class_count, d)))
        test_feats.append(means[k] + rng.standard_normal((n_test, d)))
    train_labels = np.repeat(np.arange(c), spec.per_class_count)
    test_labels = np.repeat(np.arange(c), n_test)

    train = EmbeddingDataset(
        np.concatenate(train_feats), train_labels, train_labels, c, split="train"
    )
    test = EmbeddingDataset(
        np.concatenate(test_feats), test_labels, test_labels, c, split="test"
    )
    return train, test


def save_dataset(dataset: EmbeddingDataset, path, fmt: str = "flne") -> None:
    """Write a dataset in the FLNE binary format or the CSV alternative."""
    if fmt == "flne":
        _save_flne(dataset, path)
    elif fmt == "csv":
        _save_csv(dataset, path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


def _record_dtype(dim: int, with_true: bool) -> np.dtype:
    fields = [("features", "<f4", (dim,)), ("observed", "<u2")]
    if with_true:
        fields.append(("true", "<u2"))
    return np.dtype(fields)


def _save_flne(dataset: EmbeddingDataset, path) -> None:
    if dataset.num_classes > 0xFFFF:
        raise ValueError("FLNE stores labels as u16; too many classes")
    with_true = dataset.has_oracle
    flags = _FLAG_TRUE_LABELS if with_true else 0
    header = _HEADER.pack(
        FLNE_MAGIC, FLNE_VERSION, flags, len(dataset), dataset.dim, dataset.num_classes
    )
    records = np.zeros(len(dataset), dtype=_record_dtype(dataset.dim, with_true))
    records["features"] = dataset.features
    records["observed"] = dataset.observed_labels
    if with_true:
        records["true"] = dataset.true_labels
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def _save_csv(dataset: EmbeddingDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [f"f{i}" for i in range(dataset.dim)] + ["label"]
        if dataset.has_oracle:
            header.append("true_label")
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [f"{v:.9g}" for v in dataset.features[i]]
            row.append(str(int(dataset.observed_labels[i])))
            if dataset.has_oracle:
                row.append(str(int(dataset.true_labels[i])))
            writer.writerow(row)


def load_dataset(path, split: str = "train", num_classes: int | None = None) -> EmbeddingDataset:
    """Load an FLNE or CSV dataset file, detecting the format by magic bytes.

    Files without true labels are marked no-oracle with true labels set
    to the observed ones.
    """
    raw = Path(path).read_bytes()
    if raw[:4] == FLNE_MAGIC:
        return _load_flne(raw, path, split)
    try:
        return _load_csv(path, split, num_classes)
    except UnicodeDecodeError as exc:
        raise DatasetFormatError(
            f"{path}: neither FLNE (bad magic at offset 0) nor text CSV "
            f"(undecodable byte at offset {exc.start})"
        ) from exc


def _load_flne(raw: bytes, path, split: str) -> EmbeddingDataset:
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(
            f"{path}: truncated header, {len(raw)} bytes < {_HEADER.size}"
        )
    magic, version, flags, n, dim, num_classes = _HEADER.unpack_from(raw, 0)
    if magic != FLNE_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic bytes at offset 0")
    if version != FLNE_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version {version} at offset 4")
    if flags & ~_FLAG_TRUE_LABELS:
        raise DatasetFormatError(f"{path}: unknown flag bits 0x{flags:04x} at offset 6")
    if dim == 0 or num_classes == 0:
        raise DatasetFormatError(f"{path}: zero dimension or class count in header")
    with_true = bool(flags & _FLAG_TRUE_LABELS)
    dtype = _record_dtype(dim, with_true)
    expected = n * dtype.itemsize
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise DatasetFormatError(
            f"{path}: payload at offset {_HEADER.size} holds {len(payload)} bytes, "
            f"expected {expected} for {n} records"
        )
    records = np.frombuffer(payload, dtype=dtype)
    observed = records["observed"].astype(np.int64)
    true = records["true"].astype(np.int64) if with_true else observed.copy()
    for name, arr in (("observed", observed), ("true", true)):
        bad = np.where(arr >= num_classes)[0]
        if bad.size:
            k = int(bad[0])
            offset = _HEADER.size + k * dtype.itemsize
            raise DatasetFormatError(
                f"{path}: {name} label out of range at record {k} (byte offset {offset})"
            )
    return EmbeddingDataset(
        records["features"].astype(np.float32),
        observed,
        true,
        num_classes,
        split=split,
        has_oracle=with_true,
    )


def _load_csv(path, split: str, num_classes: int | None) -> EmbeddingDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file, no header on line 1") from None
        with_true = header[-1] == "true_label"
        dim = len(header) - (2 if with_true else 1)
        expected_header = [f"f{i}" for i in range(dim)] + ["label"]
        if with_true:
            expected_header.append("true_label")
        if header != expected_header:
            raise DatasetFormatError(
                f"{path}: malformed header on line 1, expected "
                f"'f0,...,f{dim - 1},label[,true_label]'"
            )
        feats, obs, true = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(
                    f"{path}: line {line_no} has {len(row)} fields, expected {len(header)}"
                )
            try:
                feats.append([float(v) for v in row[:dim]])
                obs.append(int(row[dim]))
                if with_true:
                    true.append(int(row[dim + 1]))
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: line {line_no}: {exc}") from exc
    if not feats:
        raise DatasetFormatError(f"{path}: no records after the header line")
    observed = np.array(obs, dtype=np.int64)
    true_arr = np.array(true, dtype=np.int64) if with_true else observed.copy()
    if observed.min() < 0 or true_arr.min() < 0:
        raise DatasetFormatError(f"{path}: negative label found")
    inferred = int(max(observed.max(), true_arr.max())) + 1
    c = num_classes if num_classes is not None else inferred
    for name, arr in (("observed", observed), ("true", true_arr)):
        bad = np.where(arr >= c)[0]
        if bad.size:
            raise DatasetFormatError(
                f"{path}: {name} label out of range on line {int(bad[0]) + 2}"
            )
    return EmbeddingDataset(
        np.array(feats, dtype=np.float32),
        observed,
        true_arr,
        c,
        split=split,
        has_oracle=with_true,
    )


def partition_iid(n: int, num_clients: int, seed: int) -> PartitionMap:
    """Seeded shuffle into contiguous chunks; remainder spread from client 0."""
    if num_clients < 1:
        raise ValueError(f"num_clients must be >= 1, got {num_clients}")
    if num_clients > n:
        raise ValueError(f"num_clients={num_clients} exceeds sample count {n}")
    order = np.random.default_rng(seed).permutation(n)
    base, rem = divmod(n, num_clients)
    sizes = [base + (1 if i < rem else 0) for i in range(num_clients)]
    bounds = np.cumsum(sizes)[:-1]
    chunks = np.split(order, bounds)
    return PartitionMap({i: chunk for i, chunk in enumerate(chunks)}, n)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    quotas = proportions * total
    counts = np.floor(quotas).astype(np.int64)
    short = total - counts.sum()
    if short:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_dirichlet(labels, num_clients: int, alpha: float, seed: int) -> PartitionMap:
    """Non-IID split: per-class client proportions drawn from Dirichlet(alpha).

    Outcomes leaving any client empty are redrawn, up to 100 attempts.
    """
    if num_clients < 1:
        raise ValueError(f"num_clients must be >= 1, got {num_clients}")
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    for _ in range(100):
        buckets: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for cls in classes:
            idx = np.where(labels == cls)[0]
            idx = rng.permutation(idx)
            proportions = rng.dirichlet(np.full(num_clients, alpha))
            counts = _largest_remainder(proportions, idx.size)
            start = 0
            for client, count in enumerate(counts):
                if count:
                    buckets[client].append(idx[start:start + count])
                start += count
        if all(bucket for bucket in buckets):
            assignments = {
                client: np.concatenate(bucket) for client, bucket in enumerate(buckets)
            }
            return PartitionMap(assignments, n)
    raise ValueError(
        "could not produce a partition with every client non-empty after 100 attempts; "
        "increase alpha or reduce num_clients"
    )


def corrupt_clients(
    train: EmbeddingDataset,
    partition: PartitionMap,
    profiles: list[ClientNoiseProfile],
    seed: int,
) -> EmbeddingDataset:
    """Re-draw each client's observed labels through its noise matrix.

    Each client flips with an independent sub-seed derived from
    (seed, client_id), so adding or removing a client never perturbs the
    others. True labels are untouched.
    """
    by_client = {p.client_id: p.matrix for p in profiles}
    for matrix in by_client.values():
        if matrix.num_classes != train.num_classes:
            raise ValueError(
                f"profile has {matrix.num_classes} classes, dataset has {train.num_classes}"
            )
    observed = train.observed_labels.copy()
    for client_id, idx in partition.assignments.items():
        if client_id not in by_client:
            raise ValueError(f"missing noise profile for client {client_id}")
        sub_seed = derive_seed(seed, client_id)
        observed[idx] = apply_noise(train.true_labels[idx], by_client[client_id], sub_seed)
    return EmbeddingDataset(
        train.features,
        observed,
        train.true_labels,
        train.num_classes,
        split=train.split,
        has_oracle=train.has_oracle,
    )


def make_client_views(train: EmbeddingDataset, partition: PartitionMap) -> list[ClientData]:
    """Slice the train split into per-client views without true labels."""
    return [
        ClientData(cid, train.features[idx], train.observed_labels[idx])
        for cid, idx in partition.assignments.items()
    ]
