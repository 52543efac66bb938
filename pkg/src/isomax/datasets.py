"""Synthetic in/out-distribution generators and small-file loaders."""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from isomax.errors import ContractError, DimensionError, ParseError
from isomax.numeric import Rng, as_tensor

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledSet:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = as_tensor(self.features, 2, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionError(
                f"{self.features.shape[0]} feature rows but labels have shape {self.labels.shape}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ContractError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return self.labels.size

    @property
    def dim(self):
        return self.features.shape[1]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, idx):
        return LabeledSet(self.features[idx], self.labels[idx], self.n_classes)


@dataclass
class OodPair:
    """Training and test splits of the in-distribution plus unlabeled OOD test data.

    Construction rejects any OOD row that is bit-identical to a training row.
    """

    in_train: LabeledSet
    in_test: LabeledSet
    out_test: np.ndarray

    def __post_init__(self):
        self.out_test = as_tensor(self.out_test, 2, "out_test")
        if self.in_test.dim != self.out_test.shape[1] or self.in_train.dim != self.in_test.dim:
            raise DimensionError("in-distribution and OOD features must share dimensionality")
        seen = {row.tobytes() for row in np.ascontiguousarray(self.in_train.features)}
        for i, row in enumerate(np.ascontiguousarray(self.out_test)):
            if row.tobytes() in seen:
                raise ContractError(f"OOD test row {i} duplicates a training row")

    @property
    def n_classes(self):
        return self.in_train.n_classes


def class_means(n_classes, dim, radius):
    """Vertices of a regular polygon of the given radius in the first two axes."""
    if dim < 2:
        raise ContractError("synthetic classes need dim >= 2")
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def gen_gaussian_classes(seed, n_classes, per_class, dim=2, radius=4.0, sigma=0.5):
    if n_classes < 2:
        raise ContractError("need at least two classes")
    if per_class < 1:
        raise ContractError(f"per_class must be >= 1, got {per_class}")
    if sigma < 0:
        raise ContractError(f"sigma must be non-negative, got {sigma}")
    rng = Rng(seed)
    means = class_means(n_classes, dim, radius)
    labels = np.repeat(np.arange(n_classes), per_class)
    noise = rng.normal(0.0, 1.0, (labels.size, dim)) * sigma
    return LabeledSet(means[labels] + noise, labels, n_classes)


def gen_ring_ood(seed, k, dim=2, r_min=7.0, r_max=9.0):
    """Points with uniform direction and radius uniform in ``[r_min, r_max]``."""
    if not r_max > r_min > 0:
        raise ContractError(f"need r_max > r_min > 0, got r_min={r_min}, r_max={r_max}")
    rng = Rng(seed)
    directions = rng.normal(0.0, 1.0, (k, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.uniform(r_min, r_max, (k, 1))
    return directions / norms * radii


def min_cross_distance(a, b):
    """Smallest Euclidean distance between a row of ``a`` and a row of ``b``."""
    dist, _ = cKDTree(np.asarray(a)).query(np.asarray(b), k=1)
    return float(np.min(dist))


def split(data, train_fraction, seed):
    """Stratified seeded split; every class lands in both halves."""
    if not 0 < train_fraction < 1:
        raise ContractError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = Rng(seed)
    train_idx, test_idx = [], []
    for c in range(data.n_classes):
        members = np.flatnonzero(data.labels == c)
        if members.size == 0:
            continue
        if members.size < 2:
            raise ContractError(f"class {c} has fewer than two examples; cannot split")
        members = members[rng.permutation(members.size)]
        n_train = min(max(int(round(train_fraction * members.size)), 1), members.size - 1)
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    return data.subset(np.concatenate(train_idx)), data.subset(np.concatenate(test_idx))


def subsample(data, n, seed):
    if n >= len(data):
        return data
    idx = np.sort(Rng(seed).permutation(len(data))[:n])
    return data.subset(idx)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features):
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    def __call__(self, x):
        return (np.asarray(x) - self.mean) / self.std


def standardize(pair):
    """Rescale every split with statistics of the in-distribution training split."""
    t = Standardizer.fit(pair.in_train.features)
    return OodPair(
        LabeledSet(t(pair.in_train.features), pair.in_train.labels, pair.n_classes),
        LabeledSet(t(pair.in_test.features), pair.in_test.labels, pair.n_classes),
        t(pair.out_test),
    )


def synthetic_pair(
    seed,
    n_classes=4,
    per_class=250,
    dim=2,
    radius=4.0,
    sigma=0.5,
    ring_min=7.0,
    ring_max=9.0,
    ood_count=1000,
    train_fraction=0.8,
    min_separation=None,
):
    """Gaussian classes on a shell as in-distribution, a wider ring as OOD.

    When ``min_separation`` is set, the raw OOD points must stay at least that
    far from every training point.
    """
    full = gen_gaussian_classes(seed, n_classes, per_class, dim, radius, sigma)
    ring = gen_ring_ood(seed + 1_000_003, ood_count, dim, ring_min, ring_max)
    train, test = split(full, train_fraction, seed + 2_000_003)
    if min_separation is not None:
        gap = min_cross_distance(train.features, ring)
        if gap <= min_separation:
            raise ContractError(
                f"OOD ring comes within {gap:.3f} of the training data (need > {min_separation})"
            )
    return OodPair(train, test, ring)


# -- CSV ---------------------------------------------------------------------


def load_csv(path, label_column="label"):
    """Read a headed CSV; labels are remapped to 0..N-1 in order of first appearance.

    ``label_column`` is a header name or a zero-based column index.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("file is empty", path, 1)
        if isinstance(label_column, int):
            if not 0 <= label_column < len(header):
                raise ParseError(f"label column index {label_column} out of range", path, 1)
            li = label_column
        else:
            if label_column not in header:
                raise ParseError(f"missing label column {label_column!r}", path, 1)
            li = header.index(label_column)
        mapping = {}
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            try:
                values = [float(v) for j, v in enumerate(row) if j != li]
            except ValueError:
                bad = next(v for j, v in enumerate(row) if j != li and not _is_float(v))
                raise ParseError(f"non-numeric value {bad!r}", path, lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite value", path, lineno)
            key = row[li].strip()
            labels.append(mapping.setdefault(key, len(mapping)))
            rows.append(values)
    width = len(header) - 1
    features = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return LabeledSet(features, np.array(labels, dtype=np.int64), max(len(mapping), 1))


def _is_float(v):
    try:
        float(v)
    except ValueError:
        return False
    return True


def write_csv(path, data, label_column="label"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(data.dim)] + [label_column])
        for row, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in row] + [int(y)])


def load_unlabeled_csv(path, drop_column=None):
    """Feature matrix from a headed CSV, ignoring ``drop_column`` when present."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("file is empty", path, 1)
        keep = [j for j, name in enumerate(header) if name != drop_column]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            try:
                rows.append([float(row[j]) for j in keep])
            except ValueError:
                raise ParseError("non-numeric value", path, lineno) from None
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(keep))


# -- IDX ---------------------------------------------------------------------


def _read_blob(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def _parse_idx(path, expected_magic, rank):
    blob = _read_blob(path)
    header_len = 4 + 4 * rank
    if len(blob) < header_len:
        raise ParseError("IDX header is truncated", path)
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise ParseError(f"wrong magic 0x{magic:08x}, expected 0x{expected_magic:08x}", path)
    dims = struct.unpack(f">{rank}I", blob[4:header_len])
    need = int(np.prod(dims))
    payload = blob[header_len:]
    if len(payload) < need:
        raise ParseError(f"payload truncated: header promises {need} bytes, found {len(payload)}", path)
    if len(payload) > need:
        raise ParseError(f"payload has {len(payload) - need} bytes beyond the declared count", path)
    return dims, np.frombuffer(payload, dtype=np.uint8)


def load_idx_images(images_path):
    """Unlabeled IDX images as a flattened float64 matrix scaled to [0, 1]."""
    (count, rows, cols), pixels = _parse_idx(images_path, IDX_IMAGES_MAGIC, 3)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def load_idx(images_path, labels_path):
    """Parse an IDX image/label file pair (optionally gzipped) into a LabeledSet.

    Pixels are scaled to [0, 1] and each image is flattened row-major.
    """
    features = load_idx_images(images_path)
    (n_labels,), labels = _parse_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n_labels != features.shape[0]:
        raise ParseError(f"{features.shape[0]} images but {n_labels} labels", labels_path)
    labels = labels.astype(np.int64)
    n_classes = int(labels.max()) + 1 if labels.size else 1
    return LabeledSet(features, labels, n_classes)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images (count x rows x cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())
