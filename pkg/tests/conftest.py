"""Pytest configuration and shared fixtures for specklekernel tests."""

import gzip
import os
import struct
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Add the parent directory to sys.path so we can import specklekernel modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from specklekernel.datasets import MNIST_FILES, Dataset


def make_images(labels: np.ndarray, side: int = 28, seed: int = 0) -> np.ndarray:
    """Digit-like images: one bright square whose position encodes the label."""
    rng = np.random.default_rng(seed)
    n = labels.shape[0]
    images = rng.integers(0, 40, size=(n, side, side)).astype(np.uint8)
    square = max(2, side // 5)
    for i, label in enumerate(labels):
        k = int(label) - 1
        r = (k // 5) * (side // 2) + 1
        c = (k % 5) * (side // 5)
        images[i, r : r + square, c : c + square] += 200
    return images


def make_dataset(n: int, split: str = "train", side: int = 28, seed: int = 0) -> Dataset:
    """Balanced synthetic dataset with labels cycling through 1..10."""
    labels = (np.arange(n) % 10 + 1).astype(np.int64)
    return Dataset(images=make_images(labels, side, seed), labels=labels, split=split)


def write_idx_images(path: Path, images: np.ndarray, compress: bool = False) -> Path:
    header = struct.pack(">IIII", 0x00000803, *images.shape)
    payload = header + images.astype(np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)
    return path


def write_idx_labels(path: Path, labels: np.ndarray, compress: bool = False) -> Path:
    """Write 0-based raw labels, as stored in the official files."""
    header = struct.pack(">II", 0x00000801, labels.shape[0])
    payload = header + labels.astype(np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)
    return path


@pytest.fixture(scope="session")
def session_tmp_dir():
    """Create a session-scoped temporary directory."""
    with tempfile.TemporaryDirectory() as tmp_dir:
        yield Path(tmp_dir)


@pytest.fixture
def temp_dir(session_tmp_dir) -> Path:
    """Create a test-scoped directory within the session temp dir."""
    return Path(tempfile.mkdtemp(prefix="test_", dir=session_tmp_dir))


@pytest.fixture
def train_set() -> Dataset:
    return make_dataset(100, "train", seed=1)


@pytest.fixture
def test_set() -> Dataset:
    return make_dataset(40, "test", seed=2)


@pytest.fixture
def idx_dir(temp_dir, train_set, test_set) -> Path:
    """Directory with the four standard MNIST file names holding synthetic data."""
    for ds in (train_set, test_set):
        images_name, labels_name = MNIST_FILES[ds.split]
        write_idx_images(temp_dir / images_name, ds.images)
        write_idx_labels(temp_dir / labels_name, ds.labels - 1)
    return temp_dir


@pytest.fixture(scope="session")
def mnist_dir() -> Path:
    """Real MNIST directory from SPECKLEKERNEL_DATA_DIR; skips when absent."""
    data_dir = os.environ.get("SPECKLEKERNEL_DATA_DIR")
    if not data_dir or not Path(data_dir).is_dir():
        pytest.skip("SPECKLEKERNEL_DATA_DIR does not point at the MNIST files")
    return Path(data_dir)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
