"""Dataset ingestion (MNIST IDX files or a synthetic stand-in) and minibatch sampling."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stalesim.errors import IngestError
from stalesim.model import Minibatch
from stalesim.numerics import RngStream

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
N_PIXELS = 784


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, 784) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, 10)
    split: str = "train"
    synthetic: bool = False

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise IngestError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.images.shape[0] < 1:
            raise IngestError("dataset is empty")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def rows(self, start: int, stop: int, split: str) -> Dataset:
        return Dataset(self.images[start:stop], self.labels[start:stop], split, self.synthetic)


def _read_header(path: Path, blob: bytes, magic: int, ndims: int) -> tuple[int, ...]:
    need = 4 * (ndims + 1)
    if len(blob) < need:
        raise IngestError(f"{path}: truncated header at offset {len(blob)}, need {need} bytes")
    found, *dims = struct.unpack(f">{ndims + 1}I", blob[:need])
    if found != magic:
        raise IngestError(f"{path}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    return tuple(dims)


def _read_payload(path: Path, blob: bytes, offset: int, expected: int) -> np.ndarray:
    actual = len(blob) - offset
    if actual != expected:
        raise IngestError(
            f"{path}: payload at offset {offset} has {actual} bytes, expected {expected}"
        )
    return np.frombuffer(blob, dtype=np.uint8, offset=offset)


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair; pixels scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    try:
        image_blob = images_path.read_bytes()
        label_blob = labels_path.read_bytes()
    except OSError as exc:
        raise IngestError(f"cannot read IDX file: {exc}") from exc

    n_img, rows, cols = _read_header(images_path, image_blob, IMAGES_MAGIC, 3)
    (n_lab,) = _read_header(labels_path, label_blob, LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise IngestError(f"{images_path} holds {n_img} images but {labels_path} holds {n_lab} labels")
    if rows * cols != N_PIXELS:
        raise IngestError(f"{images_path}: images are {rows}x{cols}, expected 28x28")

    pixels = _read_payload(images_path, image_blob, 16, n_img * rows * cols)
    labels = _read_payload(labels_path, label_blob, 8, n_lab)
    if labels.size and labels.max() >= 10:
        raise IngestError(f"{labels_path}: label {int(labels.max())} out of range [0, 10)")
    images = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    return Dataset(images, labels.astype(np.int64))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (N, 28, 28) or (N, 784) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), 28, 28)
    n = images.shape[0]
    Path(images_path).write_bytes(struct.pack(">4I", IMAGES_MAGIC, n, 28, 28) + images.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">2I", LABELS_MAGIC, n) + np.asarray(labels, dtype=np.uint8).tobytes()
    )


# seven-segment strokes: (x0, y0, x1, y1) on the 28x28 grid
SEGMENTS = {
    "a": (9, 5, 18, 5),
    "b": (18, 5, 18, 14),
    "c": (18, 14, 18, 23),
    "d": (9, 23, 18, 23),
    "e": (9, 14, 9, 23),
    "f": (9, 5, 9, 14),
    "g": (9, 14, 18, 14),
}
DIGIT_SEGMENTS = ("abcdef", "bc", "abdeg", "abcdg", "bcfg", "acdfg", "acdefg", "abc", "abcdefg", "abcdfg")


def _segment_dist2(x0, y0, x1, y1) -> np.ndarray:
    """Squared distance from every pixel centre to a line segment, flattened."""
    ys, xs = np.mgrid[0:28, 0:28].astype(np.float64)
    dx, dy = x1 - x0, y1 - y0
    t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / float(dx * dx + dy * dy), 0.0, 1.0)
    return ((xs - x0 - t * dx) ** 2 + (ys - y0 - t * dy) ** 2).reshape(-1)


def synthetic_dataset(
    rng: RngStream,
    n: int,
    classes: int = 10,
    noise: float = 0.1,
    keep: float = 0.95,
    max_shift: int = 3,
) -> Dataset:
    """Class-conditional noisy digit clusters, 28x28 flattened, clipped to [0, 1].

    Each class prototype is a seven-segment rendering of its digit. A sample
    drops each of its segments with probability ``1 - keep``, draws a stroke
    width in [0.6, 1.6] and an intensity in [0.6, 1] per segment, shifts by up
    to ``max_shift`` pixels and adds Gaussian pixel noise. Classes share
    strokes, so a few samples are genuinely ambiguous. Labels cycle through the
    classes, so any ``n`` divisible by ``classes`` is exactly balanced.
    """
    if n < classes:
        raise IngestError(f"synthetic dataset needs n >= classes, got n={n}, classes={classes}")
    if classes > len(DIGIT_SEGMENTS):
        raise IngestError(f"synthetic digits support at most {len(DIGIT_SEGMENTS)} classes")
    names = sorted(SEGMENTS)
    n_seg = len(names)
    dist2 = np.stack([_segment_dist2(*SEGMENTS[k]) for k in names])  # (7, 784)
    member = np.array([[k in DIGIT_SEGMENTS[c] for k in names] for c in range(classes)], dtype=np.float64)

    labels = np.arange(n, dtype=np.int64) % classes
    kept = rng.uniforms(n * n_seg).reshape(n, n_seg) < keep
    intensity = 0.6 + 0.4 * rng.uniforms(n * n_seg).reshape(n, n_seg)
    width = 0.6 + rng.uniforms(n * n_seg).reshape(n, n_seg)
    shifts = np.floor(rng.uniforms(2 * n).reshape(n, 2) * (2 * max_shift + 1)).astype(int) - max_shift
    weights = member[labels] * kept * intensity

    images = np.zeros((n, N_PIXELS))
    for k in range(n_seg):
        images += weights[:, k : k + 1] * np.exp(-dist2[k] / (2.0 * width[:, k : k + 1] ** 2))
    images = images.reshape(n, 28, 28)
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            rows = (shifts[:, 0] == dy) & (shifts[:, 1] == dx)
            if rows.any():
                images[rows] = np.roll(images[rows], (dy, dx), axis=(1, 2))
    images = images.reshape(n, N_PIXELS) + noise * rng.normals(n * N_PIXELS).reshape(n, N_PIXELS)
    np.clip(images, 0.0, 1.0, out=images)
    return Dataset(images, labels, synthetic=True)


class Sampler:
    """Draws minibatches i.i.d. with replacement; exactly ``mu`` uniforms per batch."""

    def __init__(self, dataset: Dataset, mu: int, rng: RngStream):
        if mu > len(dataset):
            raise IngestError(f"batch size {mu} exceeds dataset size {len(dataset)}")
        self.dataset = dataset
        self.mu = mu
        self.rng = rng

    def next_indices(self) -> np.ndarray:
        n = len(self.dataset)
        idx = np.floor(self.rng.uniforms(self.mu) * n).astype(np.int64)
        return np.minimum(idx, n - 1)

    def next_batch(self) -> Minibatch:
        idx = self.next_indices()
        return Minibatch(self.dataset.images[idx], self.dataset.labels[idx])


def split_train_val(
    full: Dataset, train_size: int, val_size: int, val_holdout: int | None = None
) -> tuple[Dataset, Dataset]:
    """Validation rows come from the tail block of ``val_holdout`` rows.

    Train rows are the first ``train_size`` rows before that block. With no
    holdout given the block is exactly ``val_size`` rows.
    """
    n = len(full)
    holdout = val_size if val_holdout is None else val_holdout
    holdout = min(holdout, n - 1)
    if val_size > holdout:
        raise IngestError(f"val_size {val_size} exceeds holdout block of {holdout} rows")
    train_stop = min(train_size, n - holdout)
    val_start = n - holdout
    return full.rows(0, train_stop, "train"), full.rows(val_start, val_start + val_size, "validation")


def find_mnist(directory) -> tuple[Path, Path] | None:
    directory = Path(directory)
    for images, labels in (
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("train-images.idx3-ubyte", "train-labels.idx1-ubyte"),
    ):
        if (directory / images).exists() and (directory / labels).exists():
            return directory / images, directory / labels
    return None


def synthetic_size(train_size: int, val_size: int) -> int:
    return int(math.ceil((train_size + val_size) / 10.0)) * 10
