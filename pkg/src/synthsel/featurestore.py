"""Labeled feature vectors, class centroids, and the sorted batch plan.

Feature files come in two layouts:

* binary ``.fsel``: magic ``FSEL``, version u32=1, then n, d, k as u32,
  n labels as u32, and n*d little-endian float32 values (widened to float64
  on load).  Values that are exactly representable in float32 round-trip
  bit-identically.
* CSV: header ``label,f0,...,f{d-1}``, UTF-8, decimal floats.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError, NumericError, ValidationError
from .numkit import Matrix, as_matrix, check_finite

_MAGIC = b"FSEL"
_VERSION = 1

SPLIT_ROLES = ("train", "validation", "test")


@dataclass
class FeatureSet:
    """n feature rows with integer class labels below class_count."""

    features: Matrix
    labels: np.ndarray
    class_count: int
    split_role: str = "train"

    def __post_init__(self):
        self.features = as_matrix(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.split_role not in SPLIT_ROLES:
            raise ValidationError(f"unknown split role {self.split_role!r}")
        n, d = self.features.shape
        if n == 0:
            raise ValidationError("feature set must contain at least one row")
        if d == 0:
            raise ValidationError("feature dimension must be positive")
        if self.labels.shape != (n,):
            raise ValidationError(f"expected {n} labels, got {self.labels.shape}")
        if self.class_count <= 0:
            raise ValidationError("class count must be positive")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValidationError(
                f"labels must lie in [0, {self.class_count}), found range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        check_finite(self.features, "feature set")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass
class CandidatePool:
    """Per-class synthetic feature matrices, optionally with ground-truth flags.

    clean_flags[c][i] is True when candidate i of class c is clean; flags are
    present exactly when provenance is "synthetic-benchmark".
    """

    features: dict[int, Matrix]
    clean_flags: dict[int, np.ndarray] | None = None
    provenance: str = "ingested"

    def __post_init__(self):
        if not self.features:
            raise ValidationError("candidate pool has no classes")
        dims = set()
        self.features = {int(c): as_matrix(m) for c, m in sorted(self.features.items())}
        for c, m in self.features.items():
            if m.shape[0] == 0:
                raise ValidationError(f"class {c} pool is empty")
            dims.add(m.shape[1])
            check_finite(m, f"pool class {c}")
        if len(dims) != 1:
            raise ValidationError(f"inconsistent feature dimensions across classes: {sorted(dims)}")
        has_flags = self.clean_flags is not None
        if has_flags != (self.provenance == "synthetic-benchmark"):
            raise ValidationError(
                "truth flags must be present exactly when provenance is 'synthetic-benchmark'"
            )
        if has_flags:
            self.clean_flags = {int(c): np.asarray(f, dtype=bool) for c, f in self.clean_flags.items()}
            for c, m in self.features.items():
                flags = self.clean_flags.get(c)
                if flags is None or flags.shape != (m.shape[0],):
                    raise ValidationError(f"truth flags for class {c} do not match pool size")

    @property
    def dim(self) -> int:
        return next(iter(self.features.values())).shape[1]

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.features)

    def size(self, class_id: int | None = None) -> int:
        if class_id is not None:
            return self.features[class_id].shape[0]
        return sum(m.shape[0] for m in self.features.values())

    def corrupted_fraction(self) -> float:
        if self.clean_flags is None:
            raise ValidationError("pool carries no truth flags")
        total = self.size()
        corrupted = sum(int((~f).sum()) for f in self.clean_flags.values())
        return corrupted / total


@dataclass
class ClassCentroids:
    """Per-class mean feature rows plus the sample counts that produced them."""

    means: Matrix
    counts: np.ndarray

    def __post_init__(self):
        self.means = as_matrix(self.means)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.means.shape[0],):
            raise ValidationError("centroid counts do not match the number of classes")

    @property
    def class_count(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class BatchItem:
    class_id: int
    candidate_index: int
    distance: float


@dataclass
class BatchPlan:
    """Candidates split into batches, each holding one sorted chunk per class."""

    batch_count: int
    batches: list[list[BatchItem]] = field(default_factory=list)

    def total_items(self) -> int:
        return sum(len(b) for b in self.batches)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def save_features(fs: FeatureSet, path: str | Path) -> None:
    """Write a feature set in the layout matching the file extension."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _save_csv(fs, path)
    else:
        _save_binary(fs, path)


def load_features(path: str | Path, split_role: str = "train") -> FeatureSet:
    """Load a feature set; binary is detected by magic bytes, CSV by content."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such feature file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _MAGIC:
        return _load_binary(path, split_role)
    return _load_csv(path, split_role)


def _save_binary(fs: FeatureSet, path: Path) -> None:
    n, d = fs.features.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIII", _VERSION, n, d, fs.class_count))
        fh.write(fs.labels.astype("<u4").tobytes())
        fh.write(fs.features.astype("<f4").tobytes())


def _load_binary(path: Path, split_role: str) -> FeatureSet:
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    if len(raw) < 20:
        raise IoError(f"{path}: truncated header")
    version, n, d, k = struct.unpack("<IIII", raw[4:20])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n == 0:
        raise ValidationError(f"{path}: empty payload (n=0)")
    expected = 20 + 4 * n + 4 * n * d
    if len(raw) < expected:
        raise IoError(f"{path}: truncated payload ({len(raw)} bytes, need {expected})")
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=20).astype(np.int64)
    floats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=20 + 4 * n)
    features = floats.astype(np.float64).reshape(n, d)
    if labels.max() >= k:
        raise ValidationError(f"{path}: label {labels.max()} out of range for k={k}")
    return FeatureSet(features, labels, int(k), split_role)


def _save_csv(fs: FeatureSet, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(fs.dim)])
        for label, row in zip(fs.labels, fs.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def _load_csv(path: Path, split_role: str) -> FeatureSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty payload") from None
        if not header or header[0] != "label":
            raise FormatError(f"{path}: expected header starting with 'label'")
        d = len(header) - 1
        if d <= 0 or header[1:] != [f"f{i}" for i in range(d)]:
            raise FormatError(f"{path}: malformed feature columns in header")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise FormatError(f"{path}: row {lineno} has {len(row)} fields, expected {d + 1}")
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}: row {lineno}: {exc}") from None
    if not rows:
        raise ValidationError(f"{path}: empty payload (no data rows)")
    labels_arr = np.array(labels, dtype=np.int64)
    if labels_arr.min() < 0:
        raise ValidationError(f"{path}: negative label")
    return FeatureSet(np.array(rows), labels_arr, int(labels_arr.max()) + 1, split_role)


# ---------------------------------------------------------------------------
# Centroids and distances
# ---------------------------------------------------------------------------


def compute_centroids(train: FeatureSet) -> ClassCentroids:
    """Arithmetic mean of each class's training rows."""
    counts = train.class_sizes()
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValidationError(f"classes without training samples: {empty.tolist()}")
    means = np.zeros((train.class_count, train.dim))
    for c in range(train.class_count):
        means[c] = train.features[train.labels == c].mean(axis=0)
    return ClassCentroids(means, counts)


def cosine_distance(u, v) -> float:
    """1 - cosine similarity, in [0, 2]."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericError("cosine distance undefined for zero-norm vectors")
    return float(1.0 - (u @ v) / (nu * nv))


def pool_distances(pool: CandidatePool, centroids: ClassCentroids) -> dict[int, np.ndarray]:
    """Cosine distance of every candidate to its own-class centroid."""
    if pool.dim != centroids.dim:
        raise ValidationError(
            f"pool dimension {pool.dim} does not match centroid dimension {centroids.dim}"
        )
    out = {}
    for c, m in pool.features.items():
        if c >= centroids.class_count:
            raise ValidationError(f"pool class {c} has no centroid")
        out[c] = np.array([cosine_distance(row, centroids.means[c]) for row in m])
    return out


def build_batches(
    pool: CandidatePool,
    centroids: ClassCentroids,
    batch_count: int,
    farthest_first: bool = False,
) -> BatchPlan:
    """Sort each class pool by centroid distance and chunk into batches.

    Chunk b of every class goes to batch b; the first batch_count-1 chunks
    have floor(m/B) candidates, the last takes the remainder.  Ties sort by
    candidate index.  farthest_first reverses the sort direction.
    """
    if batch_count < 1:
        raise ValidationError(f"batch count must be >= 1, got {batch_count}")
    distances = pool_distances(pool, centroids)
    per_class_chunks: dict[int, list[list[BatchItem]]] = {}
    for c in pool.class_ids:
        m = pool.size(c)
        if m < batch_count:
            raise ValidationError(
                f"class {c} pool has {m} candidates, fewer than {batch_count} batches"
            )
        d = distances[c]
        keyed = sorted(range(m), key=lambda i: (-d[i] if farthest_first else d[i], i))
        items = [BatchItem(c, i, float(d[i])) for i in keyed]
        base = m // batch_count
        chunks = [items[b * base:(b + 1) * base] for b in range(batch_count - 1)]
        chunks.append(items[(batch_count - 1) * base:])
        per_class_chunks[c] = chunks
    batches = []
    for b in range(batch_count):
        batch: list[BatchItem] = []
        for c in pool.class_ids:
            batch.extend(per_class_chunks[c][b])
        batches.append(batch)
    return BatchPlan(batch_count, batches)
