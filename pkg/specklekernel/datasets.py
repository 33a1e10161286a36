"""MNIST IDX ingestion and stratified subsampling."""

import gzip
import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike

logger = logging.getLogger(__name__)

Split = Literal["train", "test"]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
N_CLASSES = 10

MNIST_FILES: dict[str, tuple[str, str]] = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    """Malformed IDX file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, path: Path | str, offset: int, message: str):
        self.path = Path(path)
        self.offset = offset
        super().__init__(f"{self.path}: {message} at byte offset {offset}")


@dataclass(frozen=True)
class Dataset:
    """Grey-level images with 1-based labels."""

    images: np.ndarray
    labels: np.ndarray
    split: Split

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ValueError(f"images must be (n, h, w), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (
            self.labels.min() < 1 or self.labels.max() > N_CLASSES
        ):
            raise ValueError(f"labels must lie in [1, {N_CLASSES}]")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def input_dim(self) -> int:
        return self.images.shape[1] * self.images.shape[2]

    def features(self) -> np.ndarray:
        """Flattened pixels scaled to [0, 1], shape (n, h·w)."""
        U = self.images.reshape(len(self), -1).astype(np.float64)
        U /= 255.0
        return U

    def take(self, indices: ArrayLike) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            images=self.images[indices], labels=self.labels[indices], split=self.split
        )

    def sha256(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.images).tobytes())
        digest.update(np.ascontiguousarray(self.labels).tobytes())
        return digest.hexdigest()


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise FileNotFoundError(f"IDX file not found: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(path: Path, expected_magic: int) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxFormatError(path, 0, f"truncated header ({len(raw)} bytes)")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise IdxFormatError(
            path, 0, f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(path, len(raw), "truncated dimension sizes")
    shape = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(shape))
    if len(raw) < header + size:
        raise IdxFormatError(
            path, len(raw), f"truncated data: expected {size} bytes after the header"
        )
    if len(raw) > header + size:
        logger.warning(f"{path}: {len(raw) - header - size} trailing bytes ignored")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(shape)


def load_idx(
    path_images: Path | str, path_labels: Path | str, split: Split = "train"
) -> Dataset:
    """Parse an IDX image file and its label file.

    Files ending in ``.gz`` are decompressed transparently. Raw labels 0..9
    are shifted to 1..10.

    Raises:
        FileNotFoundError: If a file is missing.
        IdxFormatError: On bad magic, truncation, or an image/label count mismatch.
    """
    path_images, path_labels = Path(path_images), Path(path_labels)
    images = _parse_idx(path_images, IMAGES_MAGIC)
    labels = _parse_idx(path_labels, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            path_labels,
            4,
            f"count mismatch: {images.shape[0]} images in {path_images.name} "
            f"but {labels.shape[0]} labels",
        )
    if labels.size and labels.max() >= N_CLASSES:
        bad = int(np.argmax(labels >= N_CLASSES))
        raise IdxFormatError(path_labels, 8 + bad, f"label {labels[bad]} out of range")
    logger.info(f"Loaded {images.shape[0]} {split} images of {images.shape[1:]}")
    return Dataset(
        images=images.copy(), labels=labels.astype(np.int64) + 1, split=split
    )


def _resolve(data_dir: Path, name: str) -> Path:
    plain = data_dir / name
    if plain.exists():
        return plain
    gz = data_dir / f"{name}.gz"
    return gz if gz.exists() else plain


def mnist_paths(data_dir: Path | str, split: Split) -> tuple[Path, Path]:
    """Standard MNIST file paths in ``data_dir``, preferring uncompressed files."""
    data_dir = Path(data_dir)
    images, labels = MNIST_FILES[split]
    return _resolve(data_dir, images), _resolve(data_dir, labels)


def load_mnist(data_dir: Path | str, split: Split) -> Dataset:
    """Load one MNIST split from a directory with the standard file names."""
    return load_idx(*mnist_paths(data_dir, split), split=split)


def subsample(ds: Dataset, n_sub: int, seed: int) -> Dataset:
    """Seeded stratified sample without replacement, in original order.

    Classes get equal shares; a class with too few samples contributes all of
    them and the shortfall is spread over the others. Remainders go to the
    lowest labels first.

    Raises:
        ValueError: If ``n_sub`` exceeds the dataset size or is negative.
    """
    n = len(ds)
    if not 0 <= n_sub <= n:
        raise ValueError(f"n_sub must be in [0, {n}], got {n_sub}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(ds.labels, return_counts=True)

    quota = np.zeros(len(classes), dtype=np.int64)
    remaining = n_sub
    open_ = counts > 0
    while remaining > 0:
        active = np.flatnonzero(open_ & (quota < counts))
        share, extra = divmod(remaining, len(active))
        for rank, c in enumerate(active):
            want = share + (1 if rank < extra else 0)
            take = min(want, counts[c] - quota[c])
            quota[c] += take
            remaining -= take

    chosen = []
    for c, label in enumerate(classes):
        members = np.flatnonzero(ds.labels == label)
        chosen.append(rng.choice(members, size=quota[c], replace=False))
    indices = np.sort(np.concatenate(chosen)) if chosen else np.array([], np.int64)
    logger.debug(f"Subsampled {n_sub} of {n} ({ds.split}) with seed {seed}")
    return ds.take(indices)
