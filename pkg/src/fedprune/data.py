"""Dataset loading (IDX), synthetic blob generation, and client partitioning."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, features) float64
    labels: np.ndarray  # (n,) int64
    num_classes: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.shape != (inputs.shape[0],):
            raise ValueError("inputs must be (n, d) with one label per row")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("labels out of range for num_classes")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class PartitionSpec:
    mode: str  # "iid" | "label-skew"
    num_clients: int
    classes_per_client: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("iid", "label-skew"):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.classes_per_client < 1:
            raise ValueError("classes_per_client must be >= 1")


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, n: int, path) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise IdxFormatError(f"truncated IDX file {path}: wanted {n} bytes, got {len(data)}")
    return data


def _read_idx_images(path) -> np.ndarray:
    with _open_maybe_gzip(path) as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, path))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(
                f"bad magic {magic:#010x} in {path}, expected {IDX_IMAGES_MAGIC:#010x}"
            )
        pixels = np.frombuffer(_read_exact(f, count * rows * cols, path), dtype=np.uint8)
    return pixels.reshape(count, rows * cols)


def _read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as f:
        magic, count = struct.unpack(">ii", _read_exact(f, 8, path))
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(
                f"bad magic {magic:#010x} in {path}, expected {IDX_LABELS_MAGIC:#010x}"
            )
        labels = np.frombuffer(_read_exact(f, count, path), dtype=np.uint8)
    return labels


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Big-endian IDX image/label pair -> Dataset with pixels scaled by 1/255."""
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels"
        )
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 0
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), num_classes)


def write_idx(dataset: Dataset, images_path, labels_path, rows: int | None = None,
              cols: int | None = None) -> None:
    """Inverse of load_idx for fixture building; inputs must be k/255 values."""
    n, d = dataset.inputs.shape
    if rows is None or cols is None:
        side = int(round(d ** 0.5))
        rows, cols = (side, side) if side * side == d else (1, d)
    if rows * cols != d:
        raise ValueError(f"rows*cols = {rows * cols} does not match feature count {d}")
    pixels = np.rint(dataset.inputs * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def synth_blobs(
    num_classes: int, samples_per_class: int, dim: int, spread: float, seed: int
) -> Dataset:
    """Gaussian blobs: class c centered at 3*e_c with isotropic noise `spread`."""
    if dim < num_classes:
        raise ValueError("dim must be >= num_classes so every class gets its own axis")
    rng = np.random.default_rng(seed)
    inputs = np.empty((num_classes * samples_per_class, dim))
    labels = np.empty(num_classes * samples_per_class, dtype=np.int64)
    for c in range(num_classes):
        center = np.zeros(dim)
        center[c] = 3.0
        block = slice(c * samples_per_class, (c + 1) * samples_per_class)
        inputs[block] = center + rng.normal(0.0, spread, (samples_per_class, dim))
        labels[block] = c
    return Dataset(inputs, labels, num_classes)


# ---------------------------------------------------------------------------
# Client partitioning
# ---------------------------------------------------------------------------


def partition(dataset: Dataset, spec: PartitionSpec) -> list[np.ndarray]:
    """Split sample indices across clients; exact partition in either mode.

    iid: seed-shuffled equal-size (+-1) shards.
    label-skew: sort by label, cut each class into label-pure shards
    (num_clients * classes_per_client shards in total, spread across the
    classes proportionally to their frequency), shuffle the shards, and
    deal classes_per_client of them to each client. Every client therefore
    sees at most classes_per_client distinct labels.
    """
    n = len(dataset)
    if n < spec.num_clients:
        raise ValueError(f"cannot split {n} samples across {spec.num_clients} clients")
    rng = np.random.default_rng(spec.seed)

    if spec.mode == "iid":
        perm = rng.permutation(n)
        return [np.sort(s) for s in np.array_split(perm, spec.num_clients)]

    if spec.classes_per_client > dataset.num_classes:
        raise ValueError("classes_per_client exceeds the number of classes")
    total_shards = spec.num_clients * spec.classes_per_client
    class_indices = [np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)]
    class_counts = np.array([len(ci) for ci in class_indices])
    nonempty = np.flatnonzero(class_counts)
    if total_shards < len(nonempty):
        raise ValueError(
            f"{total_shards} shards cannot cover {len(nonempty)} populated classes"
        )

    # proportional shard allocation, largest remainder, >= 1 per populated class
    quota = class_counts[nonempty] * total_shards / n
    shards_per_class = np.maximum(np.floor(quota).astype(int), 1)
    remainder = total_shards - shards_per_class.sum()
    if remainder < 0:
        # floors of small classes were bumped to 1; take shards back from the largest quotas
        for i in np.argsort(-quota):
            while remainder < 0 and shards_per_class[i] > 1:
                shards_per_class[i] -= 1
                remainder += 1
    else:
        order = np.argsort(-(quota - np.floor(quota)), kind="stable")
        for i in order[:remainder]:
            shards_per_class[i] += 1
    if (shards_per_class > class_counts[nonempty]).any():
        raise ValueError("too few samples per class for a label-pure shard split")

    shards: list[np.ndarray] = []
    for i, c in enumerate(nonempty):
        members = class_indices[c].copy()
        rng.shuffle(members)
        shards.extend(np.array_split(members, shards_per_class[i]))
    deal = rng.permutation(len(shards))
    out = []
    for k in range(spec.num_clients):
        take = deal[k * spec.classes_per_client : (k + 1) * spec.classes_per_client]
        out.append(np.sort(np.concatenate([shards[j] for j in take])))
    return out


def stratified_subset(dataset: Dataset, size: int, seed: int) -> Dataset:
    """Class-balanced random subset of `size` samples (largest-remainder split)."""
    if size > len(dataset):
        raise ValueError("subset size exceeds dataset size")
    rng = np.random.default_rng(seed)
    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    quota = counts * size / len(dataset)
    take = np.floor(quota).astype(int)
    order = np.argsort(-(quota - np.floor(quota)), kind="stable")
    for c in order[: size - take.sum()]:
        take[c] += 1
    chosen = []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        chosen.append(rng.choice(members, size=min(take[c], len(members)), replace=False))
    idx = np.sort(np.concatenate(chosen))
    return dataset.subset(idx)
