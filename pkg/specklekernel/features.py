"""Ideal random features ``|W U + b|``, projected ridge, and Gram convergence."""

import hashlib
import logging
import time
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel

from .elliptic import elliptic_kernel_matrix
from .ridge import RidgeForm, ridge_fit_primal, ridge_predict, ridge_predict_dual
from .rng import block_ranges, gaussian_row_pair, noise_columns
from .runner import run_jobs
from .types import GramStat, ProjectionSpec

logger = logging.getLogger(__name__)

# Samples multiplied against one generated W block at a time.
SAMPLE_CHUNK = 8192
MAX_GRAM_SAMPLES = 5000


def fingerprint(*specs: BaseModel) -> str:
    """Short SHA-256 digest of the JSON form of one or more specs."""
    digest = hashlib.sha256()
    for spec in specs:
        digest.update(spec.model_dump_json().encode())
    return digest.hexdigest()[:16]


@dataclass(frozen=True)
class FeatureMatrix:
    """Feature rows X (n × N) with the fingerprint of the spec that made them."""

    X: np.ndarray
    fingerprint: str

    def __post_init__(self):
        if self.X.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {self.X.shape}")
        if not self.X.size:
            return
        lo, hi = self.X.min(), self.X.max()
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError("feature matrix contains non-finite entries")
        if lo < 0:
            raise ValueError("feature matrix contains negative entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def columns(self, n_features: int) -> "FeatureMatrix":
        """Leading ``n_features`` columns, equal to the features at that N."""
        if not 1 <= n_features <= self.n_features:
            raise ValueError(
                f"cannot take {n_features} of {self.n_features} feature columns"
            )
        return FeatureMatrix(
            X=self.X[:, :n_features], fingerprint=f"{self.fingerprint}:{n_features}"
        )


def ideal_projection(
    U: ArrayLike,
    spec: ProjectionSpec,
    *,
    workers: int = 1,
    dtype: np.dtype = np.float32,
) -> FeatureMatrix:
    """Compute ``X[i, j] = |(W U_i)_j + b_j + e_ij|`` with W streamed from its seed.

    Row j of W comes from the keyed stream ``(spec.seed, j)``, so the first N
    columns of the result equal the features of the same spec with N
    projections. The noise term ``e`` is zero unless ``spec.feature_noise`` is
    positive; it is complex Gaussian with per-component std
    ``feature_noise * component_std * ‖U_i‖`` and is keyed by feature column,
    which keeps the prefix property.

    Args:
        U: Inputs, shape (n, p).
        spec: Projection description.
        workers: Threads used for feature blocks.
        dtype: Storage dtype of X.

    Returns:
        FeatureMatrix of shape (n, N).

    Raises:
        ValueError: If U does not have ``spec.input_dim`` columns.
    """
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != spec.input_dim:
        raise ValueError(
            f"U has shape {U.shape}, spec expects (n, {spec.input_dim})"
        )
    n = U.shape[0]
    bias = spec.bias_vector()
    noise_scale = None
    if spec.feature_noise > 0:
        norms = np.sqrt(np.einsum("ij,ij->i", U, U))
        noise_scale = (spec.feature_noise * spec.component_std * norms)[:, None]
    X = np.empty((n, spec.n_features), dtype=dtype)

    def block(s: int, e: int) -> None:
        re, im = gaussian_row_pair(spec.seed, s, e, spec.input_dim, spec.component_std)
        if noise_scale is not None:
            noise_re, noise_im = noise_columns(spec.noise_seed, s, e, n)
        for c in range(0, n, SAMPLE_CHUNK):
            chunk = U[c : c + SAMPLE_CHUNK]
            real = chunk @ re.T + bias[s:e]
            imag = chunk @ im.T
            if noise_scale is not None:
                scale = noise_scale[c : c + SAMPLE_CHUNK]
                real += scale * noise_re[c : c + SAMPLE_CHUNK]
                imag += scale * noise_im[c : c + SAMPLE_CHUNK]
            X[c : c + SAMPLE_CHUNK, s:e] = np.hypot(real, imag)

    started = time.perf_counter()
    blocks = block_ranges(spec.n_features, spec.block_rows)
    run_jobs([lambda s=s, e=e: block(s, e) for s, e in blocks], workers, "W blocks")
    elapsed = time.perf_counter() - started
    rate = n * spec.n_features / elapsed if elapsed > 0 else float("inf")
    logger.info(
        f"Projected {n} samples to N={spec.n_features} in {elapsed:.2f}s "
        f"({rate:.3g} features/s)"
    )
    return FeatureMatrix(X=X, fingerprint=fingerprint(spec))


def projected_ridge(
    X: ArrayLike,
    X_test: ArrayLike,
    Y,
    gamma: float,
    *,
    form: RidgeForm = "auto",
    normalize: bool = True,
) -> np.ndarray:
    """Ridge regression on random features, predictions for ``X_test``.

    With ``normalize`` the Gram matrix is taken as ``(1/N) X Xᵀ``; this is
    applied as an effective regulariser ``gamma * N`` on the raw features,
    which yields identical predictions.

    ``form="auto"`` inverts the N × N system when N < n and the n × n one
    otherwise.

    Args:
        X: Training features (n, N).
        X_test: Test features (ñ, N).
        Y: LabelMatrix or (n, q) targets.
        gamma: Regulariser, > 0.
        form: "auto", "primal", or "dual".
        normalize: Apply the 1/N Gram normalisation.

    Returns:
        Predictions of shape (ñ, q).

    Raises:
        ValueError: On shape mismatch or gamma <= 0.
        numpy.linalg.LinAlgError: If the solve fails.
    """
    if isinstance(X, FeatureMatrix):
        X = X.X
    if isinstance(X_test, FeatureMatrix):
        X_test = X_test.X
    n, n_features = np.shape(X)
    if np.shape(X_test)[1] != n_features:
        raise ValueError(
            f"X_test has {np.shape(X_test)[1]} features, X has {n_features}"
        )
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    effective = gamma * n_features if normalize else gamma
    if form == "auto":
        form = "primal" if n_features < n else "dual"
    logger.debug(f"Projected ridge: n={n}, N={n_features}, form={form}")
    if form == "primal":
        return ridge_predict(X_test, ridge_fit_primal(X, Y, effective))
    if form == "dual":
        return ridge_predict_dual(X, X_test, Y, effective)
    raise ValueError(f"unknown ridge form {form!r}")


def empirical_gram(X: ArrayLike) -> np.ndarray:
    """``(1/N) X Xᵀ`` in float64."""
    X = np.asarray(X, dtype=np.float64)
    return (X @ X.T) / X.shape[1]


def gram_deviation(X: ArrayLike, K: np.ndarray) -> tuple[float, float]:
    """Max and RMS of ``|(1/N) X Xᵀ - K|`` over all entries."""
    diff = np.abs(empirical_gram(X) - K)
    return float(diff.max()), float(np.sqrt(np.mean(diff**2)))


def gram_convergence(
    U: ArrayLike,
    N_list: list[int],
    seed: int,
    trials: int = 5,
    *,
    component_std: float = 1.0,
    block_rows: int = 256,
    workers: int = 1,
) -> list[GramStat]:
    """Entrywise deviation of the empirical Gram matrix from the elliptic kernel.

    Trial t uses seed ``seed + t``; within a trial every N reuses the prefix
    of the features at max(N).

    Raises:
        ValueError: On an empty N list, more than 5000 samples, or trials < 1.
    """
    U = np.asarray(U, dtype=np.float64)
    if not N_list:
        raise ValueError("N_list must not be empty")
    if U.ndim != 2 or U.shape[0] > MAX_GRAM_SAMPLES:
        raise ValueError(
            f"gram_convergence needs a 2-D input with at most {MAX_GRAM_SAMPLES} rows, "
            f"got shape {U.shape}"
        )
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    ns = sorted(set(int(n) for n in N_list))
    K = elliptic_kernel_matrix(U, workers=workers) * component_std**2
    kernel_max = float(np.max(np.abs(K))) if K.size else 0.0

    max_abs = np.zeros(len(ns))
    rms = np.zeros(len(ns))
    for t in range(trials):
        spec = ProjectionSpec(
            seed=seed + t,
            n_features=ns[-1],
            input_dim=U.shape[1],
            component_std=component_std,
            block_rows=block_rows,
        )
        X = ideal_projection(U, spec, workers=workers, dtype=np.float64).X
        for i, n_features in enumerate(ns):
            m, r = gram_deviation(X[:, :n_features], K)
            max_abs[i] += m
            rms[i] += r
        logger.debug(f"Gram convergence trial {t + 1}/{trials} done")

    stats = [
        GramStat(
            N=n_features,
            max_abs=float(max_abs[i] / trials),
            rms=float(rms[i] / trials),
            trials=trials,
            kernel_max=kernel_max,
        )
        for i, n_features in enumerate(ns)
    ]
    logger.info(
        f"Gram convergence over N={ns[0]}..{ns[-1]}: "
        f"rms {stats[0].rms:.3g} -> {stats[-1].rms:.3g}"
    )
    return stats
