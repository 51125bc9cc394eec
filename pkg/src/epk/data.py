"""Datasets: synthetic Gaussian blobs, IDX image ingestion, CSV round-trip.

Every dataset carries a 32-byte fingerprint of its canonical bytes;
trajectories record it so kernel reconstructions can refuse data they
were not trained on.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    """Inputs X [M, D] and one-hot labels Y [M, K]."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.Y = np.ascontiguousarray(self.Y, dtype=np.float64)
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise InputError("X and Y must be 2-d with matching row counts")
        row_sums = self.Y.sum(axis=1)
        if not (
            np.all((self.Y == 0.0) | (self.Y == 1.0)) and np.all(row_sums == 1.0)
        ):
            raise InputError("every label row must be exactly one-hot")

    @property
    def n_samples(self):
        return self.X.shape[0]

    @property
    def input_dim(self):
        return self.X.shape[1]

    @property
    def n_classes(self):
        return self.Y.shape[1]

    @property
    def labels(self):
        return np.argmax(self.Y, axis=1)

    def fingerprint(self):
        """SHA-256 over canonical bytes of (values, labels)."""
        M, D = self.X.shape
        K = self.Y.shape[1]
        h = hashlib.sha256()
        h.update(b"EPKD")
        h.update(struct.pack("<III", M, D, K))
        h.update(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
        h.update(self.labels.astype("<u4").tobytes())
        return h.digest()


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise InputError("label index out of range")
    return np.eye(n_classes, dtype=np.float64)[labels]


@dataclass(frozen=True)
class BlobSpec:
    """Isotropic Gaussian mixture: one mean per class, padded to ``dim``."""

    means: tuple = ((1.0, 4.0), (4.0, 1.0), (5.0, 5.0))
    std: float = 1.0
    per_class_count: int = 1000
    dim: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "means", tuple(tuple(float(v) for v in m) for m in self.means)
        )
        if len(self.means) < 2:
            raise InputError("need at least two class means")
        if any(len(m) > self.dim for m in self.means):
            raise InputError("mean length exceeds dim")
        if self.std < 0 or self.per_class_count < 1 or self.dim < 1:
            raise InputError("std must be >= 0, counts and dim positive")

    def padded_means(self):
        out = np.zeros((len(self.means), self.dim))
        for c, m in enumerate(self.means):
            out[c, : len(m)] = m
        return out

    def to_json_dict(self):
        return {
            "means": [list(m) for m in self.means],
            "std": self.std,
            "per_class_count": self.per_class_count,
            "dim": self.dim,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, obj):
        return cls(
            means=tuple(tuple(m) for m in obj["means"]),
            std=float(obj.get("std", 1.0)),
            per_class_count=int(obj.get("per_class_count", 1000)),
            dim=int(obj.get("dim", 100)),
            seed=int(obj.get("seed", 0)),
        )


def gen_blobs(spec: BlobSpec) -> LabeledDataset:
    """Sample ``per_class_count`` points around each mean, class by class.

    Deterministic under the seed: one PCG64 stream, classes drawn in
    mean order.
    """
    rng = np.random.default_rng(spec.seed)
    means = spec.padded_means()
    n_classes = len(spec.means)
    X = np.empty((n_classes * spec.per_class_count, spec.dim))
    labels = np.empty(n_classes * spec.per_class_count, dtype=np.int64)
    for c in range(n_classes):
        lo = c * spec.per_class_count
        hi = lo + spec.per_class_count
        X[lo:hi] = means[c] + spec.std * rng.standard_normal((spec.per_class_count, spec.dim))
        labels[lo:hi] = c
    return LabeledDataset(X, one_hot(labels, n_classes))


def save_csv(dataset: LabeledDataset, path):
    """Write ``x0..x{D-1},label`` rows; floats as shortest round-trip decimals."""
    D = dataset.input_dim
    labels = dataset.labels
    with open(path, "w") as fh:
        fh.write(",".join(f"x{j}" for j in range(D)) + ",label\n")
        for i in range(dataset.n_samples):
            fh.write(",".join(repr(float(v)) for v in dataset.X[i]) + f",{labels[i]}\n")


def load_csv(path, n_classes=None):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[-1] != "label" or not header[0].startswith("x"):
            raise FormatError(f"{path}: expected header x0..x{{D-1}},label")
        D = len(header) - 1
        xs, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != D + 1:
                raise FormatError(f"{path}:{lineno}: expected {D + 1} fields")
            xs.append([float(v) for v in parts[:D]])
            labels.append(int(parts[D]))
    labels = np.asarray(labels)
    K = n_classes if n_classes is not None else int(labels.max()) + 1
    return LabeledDataset(np.asarray(xs, dtype=np.float64), one_hot(labels, K))


def _read_be32(fh, path, what):
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path}: truncated while reading {what} at offset {fh.tell() - len(raw)}")
    return struct.unpack(">i", raw)[0]


def _read_idx_images(path):
    with open(path, "rb") as fh:
        magic = _read_be32(fh, path, "magic")
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"{path}: bad image magic {magic:#010x} at offset 0")
        count = _read_be32(fh, path, "count")
        rows = _read_be32(fh, path, "rows")
        cols = _read_be32(fh, path, "cols")
        body = fh.read(count * rows * cols)
        if len(body) != count * rows * cols:
            raise FormatError(
                f"{path}: truncated pixel data at offset {16 + len(body)}"
            )
        return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols)


def _read_idx_labels(path):
    with open(path, "rb") as fh:
        magic = _read_be32(fh, path, "magic")
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"{path}: bad label magic {magic:#010x} at offset 0")
        count = _read_be32(fh, path, "count")
        body = fh.read(count)
        if len(body) != count:
            raise FormatError(f"{path}: truncated label data at offset {8 + len(body)}")
        return np.frombuffer(body, dtype=np.uint8)


def write_idx_images(path, images):
    """Write a uint8 [N, rows, cols] stack in IDX format."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _avg_pool(images, side):
    n, rows, cols = images.shape
    if rows != cols:
        raise InputError("pooling requires square images")
    if rows % side != 0:
        raise InputError(f"cannot pool {rows}x{rows} down to {side}x{side}")
    f = rows // side
    return images.reshape(n, side, f, side, f).mean(axis=(2, 4))


def load_mnist(images_path, labels_path, subset_per_class=None, downsample_to=None):
    """IDX image/label pair -> LabeledDataset with pixels scaled to [0, 1].

    Optionally average-pools each image down to ``downsample_to`` per
    side, and keeps only the first ``subset_per_class`` examples of each
    class in file order (deterministic).
    """
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    n_classes = int(labels.max()) + 1
    if subset_per_class is not None:
        keep = []
        seen = {c: 0 for c in range(n_classes)}
        for i, lab in enumerate(labels):
            if seen[int(lab)] < subset_per_class:
                seen[int(lab)] += 1
                keep.append(i)
            if all(v >= subset_per_class for v in seen.values()):
                break
        keep = np.asarray(keep)
        images, labels = images[keep], labels[keep]
    pixels = images.astype(np.float64) / 255.0
    if downsample_to is not None:
        pixels = _avg_pool(pixels, downsample_to)
    X = pixels.reshape(pixels.shape[0], -1)
    return LabeledDataset(X, one_hot(labels, n_classes))
