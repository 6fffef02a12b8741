"""MNIST IDX ingestion, subset/test split, IID client partitioning and a
synthetic Gaussian-blob generator with a known informative-feature set."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import DataError, FormatError, LengthError, UsageError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
NUM_CLASSES = 10


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    name: str = ""
    # ground-truth informative features, synthetic data only
    informative: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise LengthError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(self.inputs[indices], self.labels[indices],
                       self.name if name is None else name, self.informative)


@dataclass(frozen=True)
class Partition:
    shards: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if any(len(s) == 0 for s in self.shards):
            raise UsageError("every shard must be nonempty")

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.shards]

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @property
    def min_size(self) -> int:
        """Smallest shard size, the ``m`` of the uplink sensitivity bound."""
        return min(self.sizes)


def _read_idx(path: Path, magic: int, ndim: int) -> tuple[np.ndarray, tuple[int, ...]]:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise LengthError(f"{path}: file shorter than its {header}-byte header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise LengthError(f"{path}: header promises {count} bytes of data, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header), dims


def load_idx(images_path, labels_path, name: str = "mnist") -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1]."""
    pixels, (n, rows, cols) = _read_idx(images_path, IMAGE_MAGIC, 3)
    labels, (nl,) = _read_idx(labels_path, LABEL_MAGIC, 1)
    if n != nl:
        raise LengthError(f"{n} images but {nl} labels")
    if labels.size and labels.max() >= NUM_CLASSES:
        raise DataError(f"label {int(labels.max())} outside [0, {NUM_CLASSES})")
    inputs = pixels.reshape(n, rows * cols) / 255.0
    return Dataset(inputs, labels.astype(np.int64), name)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images ``[n, rows, cols]`` and labels ``[n]`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", LABEL_MAGIC, len(labels)) + labels.tobytes())


def subset_split(ds: Dataset, take: int, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle, keep the first ``take`` samples, hold out ``round(take*test_fraction)`` for test."""
    if take > len(ds) or take < 2:
        raise UsageError(f"take={take} must lie in [2, {len(ds)}]")
    if not 0 < test_fraction < 1:
        raise UsageError("test_fraction must lie in (0, 1)")
    order = rngmod.generator(seed, rngmod.SPLIT).permutation(len(ds))[:take]
    n_test = int(round(take * test_fraction))
    if n_test == 0 or n_test == take:
        raise UsageError(f"test_fraction={test_fraction} leaves an empty side for take={take}")
    return ds.subset(order[:-n_test], f"{ds.name}-train"), ds.subset(order[-n_test:], f"{ds.name}-test")


def partition_iid(n: int, num_clients: int, seed: int) -> Partition:
    """Deal a shuffled ``range(n)`` round-robin over ``num_clients`` shards."""
    if num_clients < 1:
        raise UsageError("need at least one client")
    if num_clients > n:
        raise UsageError(f"{num_clients} clients but only {n} samples")
    order = rngmod.generator(seed, rngmod.PARTITION).permutation(n)
    return Partition([np.sort(order[i::num_clients]) for i in range(num_clients)])


def synth_gaussian_blobs(features: int, classes: int, n: int, seed: int,
                         informative: tuple[int, ...] | None = None,
                         separation: float = 4.0, spread: float = 0.25,
                         background: float = 0.1) -> Dataset:
    """Class-conditional Gaussian clusters shaped like pixel intensities in [0, 1].

    Informative coordinates (default: the first ``max(1, features // 4)``) are
    Gaussian with standard deviation ``spread`` around class means that lie on
    a sphere about 0.5, ``separation`` spreads in diameter (two classes sit
    exactly that far apart, antipodally). Every other coordinate is
    class-independent background: zero-mean Gaussian noise with standard
    deviation ``background``. Values are clipped to [0, 1], so about half of
    the background entries are exactly zero, much like the blank border of
    a digit image.
    """
    if features < 1 or classes < 2 or n < 1:
        raise UsageError("features >= 1, classes >= 2 and n >= 1 required")
    if spread <= 0 or background < 0:
        raise UsageError("spread must be > 0 and background >= 0")
    if informative is None:
        informative = tuple(range(max(1, features // 4)))
    informative = tuple(sorted(int(i) for i in informative))
    if any(not 0 <= i < features for i in informative):
        raise UsageError("informative feature index out of range")
    gen = rngmod.generator(seed, rngmod.SYNTH)
    k = len(informative)
    directions = gen.standard_normal((classes, k))
    if classes == 2:
        directions[1] = -directions[0]
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = 0.5 + directions * separation * spread / 2.0
    labels = np.arange(n) % classes
    gen.shuffle(labels)
    raw = background * gen.standard_normal((n, features))
    raw[:, informative] = centers[labels] + spread * gen.standard_normal((n, k))
    inputs = np.clip(raw, 0.0, 1.0)
    return Dataset(inputs, labels.astype(np.int64), "synthetic", informative)
