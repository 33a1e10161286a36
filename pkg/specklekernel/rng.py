"""Counter-based random streams for matrix-free complex Gaussian projections.

Every row of a projection matrix is drawn from its own Philox stream keyed by
``(seed, row)``; entry ``(row, col)`` is the pair of standard normals at
positions ``2*col`` and ``2*col + 1`` of that stream. A row therefore never
depends on which other rows are generated, in which order, or by which
thread, and the full matrix never has to be stored.
"""

import logging

import numpy as np

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1

# High bits of the stream word separate noise streams from matrix rows:
# bit 63 keys detector noise per image, bit 62 keys feature noise per column.
NOISE_DOMAIN = 1 << 63
FEATURE_NOISE_DOMAIN = 1 << 62


def keyed_generator(seed: int, stream: int) -> np.random.Generator:
    """Return a generator whose output depends only on ``(seed, stream)``.

    Args:
        seed: 64-bit key word.
        stream: 64-bit stream word (matrix row, or image index for noise).

    Returns:
        A fresh ``numpy.random.Generator`` over a Philox bit generator.
    """
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def gaussian_row_pair(
    seed: int, start: int, stop: int, cols: int, std: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of rows ``start..stop-1`` of the keyed matrix.

    Args:
        seed: Matrix key.
        start: First row (inclusive).
        stop: Last row (exclusive).
        cols: Number of columns.
        std: Standard deviation of each real component.

    Returns:
        Two C-contiguous float64 arrays of shape ``(stop - start, cols)``.
    """
    if not 0 <= start <= stop:
        raise ValueError(f"invalid row range [{start}, {stop})")
    rows = stop - start
    re = np.empty((rows, cols))
    im = np.empty((rows, cols))
    for i in range(rows):
        z = keyed_generator(seed, start + i).standard_normal(2 * cols)
        re[i] = z[0::2]
        im[i] = z[1::2]
    if std != 1.0:
        re *= std
        im *= std
    return re, im


def complex_gaussian_rows(
    seed: int, start: int, stop: int, cols: int, std: float = 1.0
) -> np.ndarray:
    """Materialise rows of the keyed complex matrix (small sizes and tests)."""
    re, im = gaussian_row_pair(seed, start, stop, cols, std)
    return re + 1j * im


def project_rows(
    X: np.ndarray, seed: int, start: int, stop: int, std: float = 1.0
) -> np.ndarray:
    """Compute ``X @ M[start:stop].T`` for the keyed complex matrix M.

    Args:
        X: Real float64 matrix of shape (n, cols).
        seed: Matrix key.
        start: First matrix row (inclusive).
        stop: Last matrix row (exclusive).
        std: Component standard deviation.

    Returns:
        Complex array of shape (n, stop - start).
    """
    re, im = gaussian_row_pair(seed, start, stop, X.shape[1], std)
    return (X @ re.T) + 1j * (X @ im.T)


def noise_columns(
    seed: int, start: int, stop: int, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Standard complex noise for feature columns ``start..stop-1`` of n samples.

    Column j comes from the stream ``(seed, FEATURE_NOISE_DOMAIN | j)``; sample
    i takes positions ``2*i`` and ``2*i + 1``.

    Returns:
        Real and imaginary parts, each of shape ``(n, stop - start)``.
    """
    if not 0 <= start <= stop:
        raise ValueError(f"invalid column range [{start}, {stop})")
    re = np.empty((n, stop - start))
    im = np.empty((n, stop - start))
    for j in range(start, stop):
        z = keyed_generator(seed, FEATURE_NOISE_DOMAIN | j).standard_normal(2 * n)
        re[:, j - start] = z[0::2]
        im[:, j - start] = z[1::2]
    return re, im


def block_ranges(stop: int, block_rows: int, start: int = 0) -> list[tuple[int, int]]:
    """Fixed row partition ``[k*block, (k+1)*block)`` covering ``[start, stop)``.

    Blocks are aligned on multiples of ``block_rows`` counted from ``start``, so
    the partition depends only on its arguments, never on the worker count.
    """
    if block_rows < 1:
        raise ValueError("block_rows must be >= 1")
    return [(s, min(s + block_rows, stop)) for s in range(start, stop, block_rows)]
