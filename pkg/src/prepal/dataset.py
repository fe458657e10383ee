"""Datasets for pool-based active learning.

Embeddings travel as EMB1 files: a 24-byte little-endian header
(magic ``PREP``, version u32, row count u64, width u64) followed by
exactly n*d float32 values in row-major order. Labels, class count and
holdout split live in a JSON manifest next to the embeddings.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, SizeMismatchError, ValidationError

MAGIC = b"PREP"
VERSION = 1
UNKNOWN_LABEL = -1

_HEADER = struct.Struct("<IQQ")  # version, n, d (after the 4 magic bytes)


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write payload to path via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-emb-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class EmbeddingMatrix:
    """A dense float32 matrix of per-document representations."""

    data: np.ndarray

    def __post_init__(self):
        arr = self.data
        if arr.ndim != 2:
            raise ValidationError(f"embeddings must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"embeddings must be non-empty, got shape {arr.shape}")
        if arr.dtype != np.float32:
            raise ValidationError(f"embeddings must be float32, got {arr.dtype}")
        if not np.isfinite(arr).all():
            bad = int(np.argwhere(~np.isfinite(arr))[0][0])
            raise ValidationError(f"non-finite value in embeddings at row {bad}")
        # rows are fixed representations for the whole session
        arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def features(self, indices=None) -> np.ndarray:
        """Rows as float64 for training and scoring arithmetic."""
        if indices is None:
            return self.data.astype(np.float64)
        return self.data[np.asarray(indices, dtype=np.int64)].astype(np.float64)


def save_embeddings(matrix: EmbeddingMatrix, path: str) -> None:
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    header = MAGIC + _HEADER.pack(VERSION, matrix.n, matrix.d)
    atomic_write_bytes(path, header + payload)


def load_embeddings(path: str) -> EmbeddingMatrix:
    with open(path, "rb") as handle:
        raw = handle.read()
    if len(raw) < 4 + _HEADER.size:
        raise FormatError(f"{path}: file too short for an EMB1 header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, n, d = _HEADER.unpack_from(raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = n * d * 4
    body = raw[4 + _HEADER.size:]
    if len(body) != expected:
        raise SizeMismatchError(
            f"{path}: header says {n}x{d} ({expected} payload bytes), got {len(body)}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(n, d)
    # frombuffer gives a read-only view; copy so callers own the memory
    return EmbeddingMatrix(data=np.array(data, dtype=np.float32))


@dataclass
class DatasetManifest:
    """Labels and split metadata for one embedding matrix.

    labels uses -1 for unknown. holdout_indices are excluded from the
    acquirable pool and only used for evaluation.
    """

    name: str
    n: int
    num_classes: int
    labels: list = field(default_factory=list)
    texts: list | None = None
    holdout_indices: list = field(default_factory=list)

    def __post_init__(self):
        if self.n <= 0:
            raise ValidationError(f"manifest {self.name!r}: n must be positive")
        if self.num_classes < 2:
            raise ValidationError(
                f"manifest {self.name!r}: num_classes must be at least 2"
            )
        if len(self.labels) != self.n:
            raise ValidationError(
                f"manifest {self.name!r}: {len(self.labels)} labels for n={self.n}"
            )
        for i, y in enumerate(self.labels):
            if not isinstance(y, (int, np.integer)):
                raise ValidationError(f"manifest {self.name!r}: labels[{i}] not an int")
            if y != UNKNOWN_LABEL and not (0 <= y < self.num_classes):
                raise ValidationError(
                    f"manifest {self.name!r}: labels[{i}]={y} outside [0, {self.num_classes})"
                )
        if self.texts is not None and len(self.texts) != self.n:
            raise ValidationError(
                f"manifest {self.name!r}: {len(self.texts)} texts for n={self.n}"
            )
        hold = list(self.holdout_indices)
        if len(set(hold)) != len(hold):
            raise ValidationError(f"manifest {self.name!r}: duplicate holdout index")
        for idx in hold:
            if not (0 <= idx < self.n):
                raise ValidationError(
                    f"manifest {self.name!r}: holdout index {idx} out of range"
                )
        self.holdout_indices = sorted(int(i) for i in hold)
        self.labels = [int(y) for y in self.labels]

    def labels_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    def pool_indices(self) -> np.ndarray:
        """Acquirable document indices: everything outside the holdout."""
        mask = np.ones(self.n, dtype=bool)
        if self.holdout_indices:
            mask[np.asarray(self.holdout_indices, dtype=np.int64)] = False
        return np.flatnonzero(mask).astype(np.int64)


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    doc = {
        "name": manifest.name,
        "n": manifest.n,
        "num_classes": manifest.num_classes,
        "labels": manifest.labels,
    }
    if manifest.texts is not None:
        doc["texts"] = manifest.texts
    if manifest.holdout_indices:
        doc["holdout_indices"] = manifest.holdout_indices
    atomic_write_bytes(path, json.dumps(doc).encode("utf-8"))


def load_manifest(path: str) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    for key in ("name", "n", "num_classes", "labels"):
        if key not in doc:
            raise ValidationError(f"{path}: manifest missing field {key!r}")
    return DatasetManifest(
        name=doc["name"],
        n=doc["n"],
        num_classes=doc["num_classes"],
        labels=doc["labels"],
        texts=doc.get("texts"),
        holdout_indices=doc.get("holdout_indices", []),
    )


def generate_synthetic(
    seed: int,
    n: int,
    d: int,
    num_classes: int,
    separation: float,
    secondary_fraction: float = 0.0,
    holdout_fraction: float = 0.0,
    name: str = "synthetic",
) -> tuple[EmbeddingMatrix, DatasetManifest]:
    """Balanced isotropic Gaussian clusters with means of norm `separation`.

    Class k is centered at separation * e_k. With secondary_fraction > 0
    that share of each class is drawn from the antipodal center
    -separation * e_k instead, which keeps mean norms unchanged but makes
    the classes multi-modal (no linear classifier can cover both modes).
    Counts are balanced to within one document. Deterministic per seed.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be at least 2")
    if n < num_classes:
        raise ValueError(f"n={n} smaller than num_classes={num_classes}")
    if d < num_classes:
        raise ValueError(f"d={d} cannot place {num_classes} axis-aligned means")
    if separation <= 0:
        raise ValueError("separation must be positive")
    if not (0.0 <= secondary_fraction < 1.0):
        raise ValueError("secondary_fraction must be in [0, 1)")
    if not (0.0 <= holdout_fraction < 1.0):
        raise ValueError("holdout_fraction must be in [0, 1)")

    rng = np.random.default_rng(seed)
    base, extra = divmod(n, num_classes)
    counts = [base + (1 if k < extra else 0) for k in range(num_classes)]

    rows = np.empty((n, d), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    start = 0
    for k, count in enumerate(counts):
        block = rng.standard_normal((count, d))
        signs = np.ones(count)
        if secondary_fraction > 0.0:
            signs[rng.random(count) < secondary_fraction] = -1.0
        block[:, k] += signs * separation
        rows[start:start + count] = block
        labels[start:start + count] = k
        start += count

    order = rng.permutation(n)
    rows = rows[order]
    labels = labels[order]

    holdout: list[int] = []
    if holdout_fraction > 0.0:
        n_hold = int(round(n * holdout_fraction))
        n_hold = max(1, min(n - 1, n_hold))
        holdout = sorted(rng.choice(n, size=n_hold, replace=False).tolist())

    matrix = EmbeddingMatrix(data=rows.astype(np.float32))
    manifest = DatasetManifest(
        name=name,
        n=n,
        num_classes=num_classes,
        labels=labels.tolist(),
        holdout_indices=holdout,
    )
    return matrix, manifest


@dataclass
class PoolState:
    """Monotone labeled set plus the audit trail of how it grew.

    labeled keeps acquisition order; acquisition_log pairs each iteration
    with the indices it added (iteration 0 is the random initial set).
    """

    labeled: list = field(default_factory=list)
    acquisition_log: list = field(default_factory=list)

    @classmethod
    def initial(cls, indices) -> "PoolState":
        idx = [int(i) for i in indices]
        return cls(labeled=list(idx), acquisition_log=[(0, list(idx))])

    def labeled_array(self) -> np.ndarray:
        """Sorted snapshot; callers get a fresh copy every time."""
        return np.sort(np.asarray(self.labeled, dtype=np.int64))

    def extend(self, iteration: int, indices) -> None:
        idx = [int(i) for i in indices]
        seen = set(self.labeled)
        for i in idx:
            if i in seen:
                raise ValidationError(f"index {i} acquired twice")
            seen.add(i)
        self.labeled.extend(idx)
        self.acquisition_log.append((int(iteration), idx))

    def unlabeled(self, pool: np.ndarray) -> np.ndarray:
        return np.setdiff1d(np.asarray(pool, dtype=np.int64), self.labeled_array())


def init_pool(manifest: DatasetManifest, seed: int, n_init: int) -> PoolState:
    """Uniform random initial labeled set drawn from the acquirable pool."""
    pool = manifest.pool_indices()
    if not (0 < n_init <= pool.size):
        raise ValidationError(
            f"n_init={n_init} must be in [1, {pool.size}] for this pool"
        )
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(pool, size=n_init, replace=False))
    return PoolState.initial(chosen)


def oracle_label(manifest: DatasetManifest, indices) -> list:
    """Ground-truth labels in input order; unknowns are a hard error here."""
    out = []
    for index in indices:
        index = int(index)
        if not (0 <= index < manifest.n):
            raise ValidationError(f"index {index} out of range for n={manifest.n}")
        label = manifest.labels[index]
        if label == UNKNOWN_LABEL:
            raise ValidationError(f"index {index} has no known label")
        out.append(label)
    return out
