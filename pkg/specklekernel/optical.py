"""Simulated DMD / scattering medium / camera pipeline.

An image is quantised to 17 grey levels, each pixel drawn on a 4x4 block of
micromirrors, the binary frame is multiplied by a seeded complex Gaussian
transmission matrix H (streamed row block by row block, never stored), the
camera records |Hx|², and 4x4 pixel patches are averaged before taking the
square root as the feature value.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy import ndimage

from .rng import NOISE_DOMAIN, block_ranges, keyed_generator, project_rows
from .runner import run_jobs
from .types import DetectorSpec, TransmissionSpec

logger = logging.getLogger(__name__)

GREY_MAX = 255
GREY_LEVELS = 16
MIRROR_BLOCK = 4
BORDER = 4
DMD_SCALE_X = 16
DMD_SCALE_Y = 9
BIN = 4

# Row-major fill order of the 16 mirrors in a pixel block.
_FILL_ORDER = np.arange(MIRROR_BLOCK * MIRROR_BLOCK).reshape(MIRROR_BLOCK, MIRROR_BLOCK)

# Cap on the float64 buffers (frames, intensities, bins) held per image batch.
_FRAME_BATCH_BYTES = 512 * 2**20


@dataclass(frozen=True)
class DmdFrame:
    """Binary micromirror pattern in compact form (4 mirrors per pixel side)."""

    bits: np.ndarray
    provenance: str | int | None = None

    def __post_init__(self):
        if self.bits.ndim != 2 or any(d % MIRROR_BLOCK for d in self.bits.shape):
            raise ValueError(
                f"frame shape {self.bits.shape} is not a grid of 4x4 mirror blocks"
            )
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise ValueError("frame entries must be 0 or 1")

    def as_vector(self) -> np.ndarray:
        """Row-major flattened frame as float64, the input x of y = Hx."""
        return self.bits.ravel().astype(np.float64)


def _check_range(arr: np.ndarray, hi: int, name: str) -> np.ndarray:
    if arr.size and not np.all(np.mod(arr, 1) == 0):
        raise ValueError(f"{name}: values must be integers")
    if arr.size and (arr.min() < 0 or arr.max() > hi):
        raise ValueError(
            f"{name}: values must lie in [0, {hi}], got [{arr.min()}, {arr.max()}]"
        )
    return arr.astype(np.int64)


def quantize_grey(img: ArrayLike) -> np.ndarray:
    """Map grey levels 0..255 to 0..16 by ``round(g * 16 / 255)``, halves up.

    Works elementwise on any shape (single image or a stack).

    Raises:
        ValueError: If a value is outside [0, 255] or not integral.
    """
    g = _check_range(np.asarray(img), GREY_MAX, "quantize_grey")
    # floor(16g/255 + 1/2) in exact integer arithmetic
    return (2 * GREY_LEVELS * g + GREY_MAX) // (2 * GREY_MAX)


def encode_dmd(q_img: ArrayLike, provenance: str | int | None = None) -> DmdFrame:
    """Draw each quantised pixel as a 4x4 block with its first q mirrors lit.

    Args:
        q_img: 2-D array of levels in [0, 16].
        provenance: Identifier of the source image.

    Returns:
        DmdFrame of shape (4h, 4w).

    Raises:
        ValueError: If a level is outside [0, 16].
    """
    q = _check_range(np.asarray(q_img), GREY_LEVELS, "encode_dmd")
    if q.ndim != 2:
        raise ValueError(f"encode_dmd expects a 2-D image, got shape {q.shape}")
    h, w = q.shape
    blocks = _FILL_ORDER[None, None, :, :] < q[:, :, None, None]
    bits = blocks.transpose(0, 2, 1, 3).reshape(h * MIRROR_BLOCK, w * MIRROR_BLOCK)
    return DmdFrame(bits=bits.astype(np.uint8), provenance=provenance)


def decode_dmd(frame: DmdFrame) -> np.ndarray:
    """Count lit mirrors per 4x4 block."""
    h, w = frame.bits.shape[0] // MIRROR_BLOCK, frame.bits.shape[1] // MIRROR_BLOCK
    blocks = frame.bits.reshape(h, MIRROR_BLOCK, w, MIRROR_BLOCK).astype(np.int64)
    return blocks.sum(axis=(1, 3))


def expand_frame(frame: DmdFrame) -> np.ndarray:
    """Full DMD image: 4-mirror zero border, then each mirror as 16 wide x 9 tall.

    A 112x112 frame becomes an array of 1080 rows by 1920 columns.
    """
    padded = np.pad(frame.bits, BORDER)
    return np.repeat(np.repeat(padded, DMD_SCALE_Y, axis=0), DMD_SCALE_X, axis=1)


def encoded_inner_product(q_a: ArrayLike, q_b: ArrayLike) -> int | np.ndarray:
    """Inner product of encoded frames, ``Σ min(q_a, q_b)`` over the last two axes.

    Leading axes broadcast, so one image against a stack gives a vector; two
    single images give an int.
    """
    total = np.minimum(np.asarray(q_a), np.asarray(q_b)).sum(axis=(-2, -1))
    return int(total) if np.ndim(total) == 0 else total


def encoded_gram(q_images: ArrayLike) -> np.ndarray:
    """Inner products of all pairs of encoded frames, ``G[i, j] = Σ min(q_i, q_j)``."""
    q = np.asarray(q_images)
    return np.stack([encoded_inner_product(q[i], q) for i in range(len(q))]).astype(
        np.float64
    )


def frames_matrix(q_images: np.ndarray) -> np.ndarray:
    """Encode quantised images and stack the flattened frames as float64 rows."""
    return np.stack([encode_dmd(q).as_vector() for q in q_images])


def _stream_field(
    X: np.ndarray,
    spec: TransmissionSpec,
    start: int,
    stop: int,
    workers: int,
    sink: Callable[[int, int, np.ndarray], None],
) -> None:
    """Hand ``X @ H[s:e].T`` for each row block of ``[start, stop)`` to ``sink``.

    Blocks are consumed as they are produced; ``sink`` writes disjoint slices.
    """

    def block(s: int, e: int) -> None:
        sink(s, e, project_rows(X, spec.seed, s, e, spec.component_std))

    blocks = block_ranges(stop, spec.block_rows, start)
    run_jobs([lambda s=s, e=e: block(s, e) for s, e in blocks], workers, "H row blocks")


def speckle_field(
    frame: DmdFrame, spec: TransmissionSpec, workers: int = 1
) -> np.ndarray:
    """Complex output field ``y = Hx`` with H streamed from its keyed generator.

    Args:
        frame: Binary DMD frame; its flattened size must equal ``spec.input_dim``.
        spec: Transmission matrix description.
        workers: Threads used for row blocks.

    Returns:
        Complex vector of length ``spec.output_dim``.

    Raises:
        ValueError: On dimension mismatch.
    """
    x = frame.as_vector()
    if x.size != spec.input_dim:
        raise ValueError(f"frame has {x.size} mirrors, spec expects {spec.input_dim}")
    y = np.empty(spec.output_dim, dtype=np.complex128)

    def keep(s: int, e: int, blk: np.ndarray) -> None:
        y[s:e] = blk[0]

    _stream_field(x[None, :], spec, 0, spec.output_dim, workers, keep)
    return y


def _detect_intensity(
    intensity: np.ndarray, spec: DetectorSpec, noise_seed: int, stream: int
) -> np.ndarray:
    # Stage order: pixel crosstalk, photon counting, ADC.
    grid = intensity
    if spec.correlation_mode == "smear":
        kernel = np.full((2, 2), 0.25)
        grid = ndimage.convolve(grid, kernel, mode="nearest")
    if spec.shot_noise:
        mean = float(grid.mean())
        if mean > 0:
            scale = spec.photon_budget / mean
            rng = keyed_generator(noise_seed, NOISE_DOMAIN | stream)
            grid = rng.poisson(grid * scale) / scale
    if spec.quantize_bits == 8:
        peak = float(grid.max())
        if peak > 0:
            grid = np.round(grid / peak * 255.0) * (peak / 255.0)
    return grid


def detect(
    y: ArrayLike, spec: DetectorSpec, noise_seed: int = 0, stream: int = 0
) -> np.ndarray:
    """Camera frame recorded from a complex field.

    Args:
        y: Complex field with a square number of entries (160000 canonical).
        spec: Detector model.
        noise_seed: Key of the shot-noise generator.
        stream: Index of the frame within its dataset; keys its noise stream.

    Returns:
        Nonnegative square grid of intensities.

    Raises:
        ValueError: If ``y`` cannot be arranged as a square grid.
    """
    y = np.asarray(y)
    side = math.isqrt(y.size)
    if side * side != y.size:
        raise ValueError(f"field of length {y.size} is not a square camera grid")
    intensity = np.abs(y.reshape(side, side)) ** 2
    return _detect_intensity(intensity, spec, noise_seed, stream)


def bin_output(grid: ArrayLike) -> np.ndarray:
    """Average aligned 4x4 patches; a 400x400 grid gives a vector of 10000.

    Leading axes are treated as a batch. The result is row-major over patches.

    Raises:
        ValueError: If the grid sides are not multiples of 4.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim < 2 or grid.shape[-1] % BIN or grid.shape[-2] % BIN:
        raise ValueError(f"grid shape {grid.shape} is not a multiple of {BIN}x{BIN}")
    rows, cols = grid.shape[-2] // BIN, grid.shape[-1] // BIN
    lead = grid.shape[:-2]
    patches = grid.reshape(*lead, rows, BIN, cols, BIN).mean(axis=(-3, -1))
    return patches.reshape(*lead, rows * cols)


def _intensity(y: np.ndarray) -> np.ndarray:
    return np.abs(y) ** 2


def _binned_stripes(
    X: np.ndarray,
    spec: TransmissionSpec,
    n_features: int,
    workers: int,
    pixel: Callable[[np.ndarray], np.ndarray] = _intensity,
) -> np.ndarray:
    """Binned ``pixel(y)`` over the camera stripes feeding the first N bins.

    Returns:
        float64 array of shape (n, n_features).
    """
    side = spec.output_side
    bins_per_row = side // BIN
    stripe_rows = BIN * side
    stripes = math.ceil(n_features / bins_per_row)

    def stripe(b: int) -> np.ndarray:
        start = b * stripe_rows
        values = np.empty((X.shape[0], stripe_rows))
        for s, e in block_ranges(start + stripe_rows, spec.block_rows, start):
            y = project_rows(X, spec.seed, s, e, spec.component_std)
            values[:, s - start : e - start] = pixel(y)
        return bin_output(values.reshape(X.shape[0], BIN, side))

    jobs = [lambda b=b: stripe(b) for b in range(stripes)]
    binned = np.concatenate(run_jobs(jobs, workers, "speckle stripes"), axis=1)
    return binned[:, :n_features]


def _full_frame_features(
    X: np.ndarray,
    spec: TransmissionSpec,
    detector: DetectorSpec,
    n_features: int,
    noise_seed: int,
    first_index: int,
    workers: int,
) -> np.ndarray:
    side = spec.output_side
    intensity = np.empty((X.shape[0], spec.output_dim))

    def keep(s: int, e: int, y: np.ndarray) -> None:
        intensity[:, s:e] = _intensity(y)

    _stream_field(X, spec, 0, spec.output_dim, workers, keep)
    out = np.empty((X.shape[0], n_features))
    for i in range(X.shape[0]):
        grid = _detect_intensity(
            intensity[i].reshape(side, side), detector, noise_seed, first_index + i
        )
        out[i] = np.sqrt(bin_output(grid)[:n_features])
    return out


def _default_batch(
    t_spec: TransmissionSpec, d_spec: DetectorSpec, n_features: int
) -> int:
    """Images per pass over H so that per-batch float64 buffers stay under the cap."""
    if d_spec.is_clean:
        bins_per_row = t_spec.output_side // BIN
        binned = math.ceil(n_features / bins_per_row) * bins_per_row
        per_image = 8 * (t_spec.input_dim + binned)
    else:
        per_image = 8 * (t_spec.input_dim + t_spec.output_dim + n_features)
    return max(1, _FRAME_BATCH_BYTES // per_image)


def _check_images(
    images: ArrayLike, t_spec: TransmissionSpec, n_features: int
) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim != 3:
        raise ValueError(f"images must be (n, h, w), got shape {images.shape}")
    _, h, w = images.shape
    if h * w * MIRROR_BLOCK * MIRROR_BLOCK != t_spec.input_dim:
        raise ValueError(
            f"{h}x{w} images encode to {16 * h * w} mirrors, "
            f"spec expects {t_spec.input_dim}"
        )
    n_bins = (t_spec.output_side // BIN) ** 2
    if not 1 <= n_features <= n_bins:
        raise ValueError(f"n_features must be in [1, {n_bins}], got {n_features}")
    return images


def device_features(
    images: ArrayLike,
    t_spec: TransmissionSpec,
    d_spec: DetectorSpec,
    n_features: int,
    *,
    noise_seed: int = 0,
    workers: int = 1,
    image_batch: int | None = None,
) -> np.ndarray:
    """Features of a stack of grey-level images through the simulated device.

    Per image: quantise, encode on the DMD, propagate through H, detect,
    bin 4x4, take the square root, keep the first ``n_features`` entries.

    When the detector is clean only the pixel rows feeding the first
    ``n_features`` bins are simulated; noise, quantisation, and smear need
    whole-frame statistics, so the full frame is simulated for them.

    Args:
        images: Array (n, h, w) of integers in [0, 255]; 4h·4w must equal
            ``t_spec.input_dim``.
        t_spec: Transmission matrix description.
        d_spec: Detector model.
        n_features: Requested N, at most the number of output bins.
        noise_seed: Key of the shot-noise generator; image i uses stream i.
        workers: Threads used for row blocks.
        image_batch: Images per pass over H; defaults to a batch whose float64
            buffers fit in 512 MiB.

    Returns:
        float32 array of shape (n, n_features), rows in dataset order.

    Raises:
        ValueError: If N exceeds the bin count or dimensions do not match.
    """
    images = _check_images(images, t_spec, n_features)
    n = images.shape[0]
    q_images = quantize_grey(images)
    out = np.empty((n, n_features), dtype=np.float32)
    if image_batch is None:
        image_batch = _default_batch(t_spec, d_spec, n_features)

    for s in range(0, n, image_batch):
        e = min(s + image_batch, n)
        X = frames_matrix(q_images[s:e])
        if d_spec.is_clean:
            out[s:e] = np.sqrt(_binned_stripes(X, t_spec, n_features, workers))
        else:
            out[s:e] = _full_frame_features(
                X, t_spec, d_spec, n_features, noise_seed, s, workers
            )
        logger.debug(f"Device features for images {s}..{e - 1} done")
    return out


def modulus_orders(
    images: ArrayLike, t_spec: TransmissionSpec, n_features: int, *, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free features with the square root taken after and before binning.

    Returns:
        ``(sqrt(bin |y|²), bin |y|)``, each float64 of shape (n, n_features).
        The first is what :func:`device_features` returns for a clean detector.
    """
    images = _check_images(images, t_spec, n_features)
    X = frames_matrix(quantize_grey(images))
    bin_sqrt = np.sqrt(_binned_stripes(X, t_spec, n_features, workers))
    sqrt_bin = _binned_stripes(X, t_spec, n_features, workers, pixel=np.abs)
    return bin_sqrt, sqrt_bin
