"""Experiment orchestration: exact kernel, linear baseline, random-feature sweeps."""

import logging
import math
import time
from collections.abc import Callable, Sequence

import numpy as np

from .datasets import N_CLASSES, Dataset
from .elliptic import KERNEL_BLOCK_ROWS, elliptic_kernel_matrix, kernel_workspace_bytes
from .features import (
    FeatureMatrix,
    empirical_gram,
    fingerprint,
    gram_deviation,
    ideal_projection,
    projected_ridge,
)
from .optical import (
    device_features,
    encoded_gram,
    frames_matrix,
    modulus_orders,
    quantize_grey,
)
from .ridge import (
    SYMMETRY_CHUNK,
    LabelMatrix,
    argmax_labels,
    classification_error,
    encode_labels,
    kernel_ridge_predict,
    ridge_fit,
    ridge_predict,
)
from .runner import run_jobs
from .types import (
    DEFAULT_GAMMA_GRID,
    DetectorSpec,
    EncodingAnalysis,
    FidelityPath,
    PowerLawFit,
    ProjectionSpec,
    RunOutcome,
    SweepRecord,
    SweepResult,
    TransmissionSpec,
)

logger = logging.getLogger(__name__)

HOLDOUT_FRACTION = 0.1
MIN_POWER_LAW_POINTS = 4
FIXED_EXPONENT = -2.0 / 3.0

# Interpreter, BLAS buffers, index arrays and other allocations not modelled
# term by term in the exact-kernel estimate.
MEMORY_OVERHEAD_BYTES = 64 * 2**20


class MemoryBudgetError(MemoryError):
    """A dense computation would exceed the configured memory budget."""

    def __init__(self, what: str, required_bytes: int, budget_bytes: int):
        self.required_bytes = required_bytes
        self.budget_bytes = budget_bytes
        super().__init__(
            f"{what} needs about {required_bytes:,} bytes "
            f"({required_bytes / 1e9:.1f} GB), budget is {budget_bytes:,} bytes "
            f"({budget_bytes / 1e9:.1f} GB)"
        )


def _holdout_sizes(n: int) -> tuple[int, int]:
    n_val = max(1, int(round(HOLDOUT_FRACTION * n)))
    return n - n_val, n_val


def estimate_exact_kernel_bytes(
    n_train: int,
    n_test: int,
    *,
    input_dim: int = 784,
    grid_search: bool = False,
    block_rows: int = KERNEL_BLOCK_ROWS,
    workers: int = 1,
) -> int:
    """Peak bytes of :func:`run_exact_kernel`.

    The peak is the largest of its stages, each counted in float64 entries:

    - building K: n² plus the kernel-block temporaries;
    - gamma selection: K, the f × f fit block, its regularised copy
      (factorised in place) and the v × f validation block, f + v = n;
    - the test kernel: K, K̃ (ñ·n) plus kernel-block temporaries;
    - the final solve: K, its regularised copy and K̃.

    Pixel features (n + ñ)·p, label matrices and a fixed overhead are added
    on top.
    """
    n, m, p = n_train, n_test, input_dim
    stages = [
        8 * n * n + kernel_workspace_bytes(n, n, block_rows, workers),
        8 * (n * n + m * n) + kernel_workspace_bytes(m, n, block_rows, workers),
        8 * (n * n + m * n + 2 * SYMMETRY_CHUNK * n),
        8 * (2 * n * n + m * n),
    ]
    if grid_search and n > 1:
        f, v = _holdout_sizes(n)
        stages.append(8 * (n * n + 2 * f * f + v * f))
    features = 8 * p * (n + m)
    labels = 8 * N_CLASSES * (4 * n + 2 * m)
    return max(stages) + features + labels + MEMORY_OVERHEAD_BYTES


def select_gamma(
    evaluate: Callable[[float], float], grid: Sequence[float] = DEFAULT_GAMMA_GRID
) -> tuple[float, dict[str, float]]:
    """Pick the grid value with the lowest validation error; ties go to the smallest.

    Returns:
        ``(best_gamma, {repr(gamma): error})``.
    """
    if not grid:
        raise ValueError("gamma grid must not be empty")
    scores: dict[str, float] = {}
    best, best_err = None, math.inf
    for gamma in sorted(grid):
        err = evaluate(gamma)
        scores[repr(float(gamma))] = err
        logger.debug(f"gamma={gamma:g}: validation error {err:.4f}")
        if err < best_err:
            best, best_err = float(gamma), err
    logger.info(f"Selected gamma={best:g} (validation error {best_err:.4f})")
    return best, scores


def _holdout(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded split of ``range(n)`` into fit and validation indices (10%)."""
    n_fit, n_val = _holdout_sizes(n)
    if n_fit < 1:
        raise ValueError(f"cannot hold out validation data from {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _elapsed_ms(started: float) -> float:
    return (time.perf_counter() - started) * 1e3


def _select_exact_gamma(
    K: np.ndarray,
    Y: LabelMatrix,
    labels: np.ndarray,
    grid: Sequence[float],
    seed: int,
) -> tuple[float, dict[str, float]]:
    """Grid search on kernel sub-blocks; the blocks are released on return."""
    fit, val = _holdout(K.shape[0], seed)
    K_fit, K_val = K[np.ix_(fit, fit)], K[np.ix_(val, fit)]
    Y_fit, truth = Y.take(fit), labels[val]

    def evaluate(g: float) -> float:
        pred = kernel_ridge_predict(K_fit, K_val, Y_fit, g)
        return classification_error(argmax_labels(pred), truth)

    return select_gamma(evaluate, grid)


def run_exact_kernel(
    train: Dataset,
    test: Dataset,
    gamma: float | None = None,
    *,
    grid: Sequence[float] = DEFAULT_GAMMA_GRID,
    seed: int = 0,
    memory_budget_bytes: int = 16 * 10**9,
    block_rows: int = KERNEL_BLOCK_ROWS,
    workers: int = 1,
) -> RunOutcome:
    """Elliptic kernel ridge classification with the full n × n kernel matrix.

    Args:
        train: Training set.
        test: Test set.
        gamma: Regulariser; None selects it on a seeded 10% hold-out.
        grid: Candidate gammas for selection.
        seed: Hold-out seed.
        memory_budget_bytes: Refuse to run above this estimate.
        block_rows: Kernel rows evaluated per job.
        workers: Threads used for the kernel matrix.

    Raises:
        MemoryBudgetError: If the dense matrices would not fit the budget.
    """
    required = estimate_exact_kernel_bytes(
        len(train),
        len(test),
        input_dim=train.input_dim,
        grid_search=gamma is None,
        block_rows=block_rows,
        workers=workers,
    )
    if required > memory_budget_bytes:
        raise MemoryBudgetError(
            f"exact kernel with n={len(train)}, n_test={len(test)}",
            required,
            memory_budget_bytes,
        )
    U, U_test = train.features(), test.features()
    Y = encode_labels(train.labels, N_CLASSES)
    stage_ms: dict[str, float] = {}

    started = time.perf_counter()
    K = elliptic_kernel_matrix(U, block_rows=block_rows, workers=workers)
    stage_ms["kernel"] = _elapsed_ms(started)
    scores: dict[str, float] = {}
    if gamma is None:
        t = time.perf_counter()
        gamma, scores = _select_exact_gamma(K, Y, train.labels, grid, seed)
        stage_ms["select"] = _elapsed_ms(t)

    t = time.perf_counter()
    K_test = elliptic_kernel_matrix(U_test, U, block_rows=block_rows, workers=workers)
    stage_ms["test_kernel"] = _elapsed_ms(t)
    t = time.perf_counter()
    pred = argmax_labels(kernel_ridge_predict(K, K_test, Y, gamma))
    stage_ms["solve"] = _elapsed_ms(t)
    error = classification_error(pred, test.labels)
    wall_ms = _elapsed_ms(started)
    logger.info(
        f"Exact kernel: n={len(train)}, n_test={len(test)}, gamma={gamma:g}, "
        f"error={error:.4f} ({wall_ms:.0f} ms)"
    )
    return RunOutcome(
        error=error,
        gamma=gamma,
        n_train=len(train),
        n_test=len(test),
        wall_ms=wall_ms,
        gamma_scores=scores,
        stage_ms=stage_ms,
    )


def run_linear_baseline(
    train: Dataset,
    test: Dataset,
    gamma: float | None = None,
    *,
    grid: Sequence[float] = DEFAULT_GAMMA_GRID,
    seed: int = 0,
) -> RunOutcome:
    """Ridge regression on raw pixels scaled to [0, 1]."""
    U, U_test = train.features(), test.features()
    Y = encode_labels(train.labels, N_CLASSES)

    started = time.perf_counter()
    stage_ms: dict[str, float] = {}
    scores: dict[str, float] = {}
    if gamma is None:
        fit, val = _holdout(len(train), seed)
        U_fit, U_val, Y_fit = U[fit], U[val], Y.take(fit)
        truth = train.labels[val]

        def evaluate(g: float) -> float:
            pred = ridge_predict(U_val, ridge_fit(U_fit, Y_fit, g))
            return classification_error(argmax_labels(pred), truth)

        gamma, scores = select_gamma(evaluate, grid)
        stage_ms["select"] = _elapsed_ms(started)

    t = time.perf_counter()
    pred = argmax_labels(ridge_predict(U_test, ridge_fit(U, Y, gamma)))
    stage_ms["solve"] = _elapsed_ms(t)
    error = classification_error(pred, test.labels)
    wall_ms = _elapsed_ms(started)
    logger.info(f"Linear baseline: gamma={gamma:g}, error={error:.4f} ({wall_ms:.0f} ms)")
    return RunOutcome(
        error=error,
        gamma=gamma,
        n_train=len(train),
        n_test=len(test),
        wall_ms=wall_ms,
        gamma_scores=scores,
        stage_ms=stage_ms,
    )


def _transmission_spec(
    train: Dataset, seed: int, output_dim: int, component_std: float, block_rows: int
) -> TransmissionSpec:
    return TransmissionSpec(
        seed=seed,
        input_dim=16 * train.input_dim,
        output_dim=output_dim,
        component_std=component_std,
        block_rows=block_rows,
    )


def _sweep_features(
    train: Dataset,
    test: Dataset,
    n_max: int,
    seed: int,
    path: FidelityPath,
    *,
    component_std: float,
    block_rows: int,
    detector: DetectorSpec,
    noise_seed: int,
    feature_noise: float,
    output_dim: int,
    workers: int,
) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Train and test features for one seed at the largest N of the sweep.

    On the device path test images continue the noise stream indices of the
    training images; on the ideal path the feature noise of sample i likewise
    follows the training samples.
    """
    if path == "ideal":
        spec = ProjectionSpec(
            seed=seed,
            n_features=n_max,
            input_dim=train.input_dim,
            component_std=component_std,
            block_rows=block_rows,
            feature_noise=feature_noise,
            noise_seed=noise_seed,
        )
        U = np.concatenate([train.features(), test.features()])
        fm = ideal_projection(U, spec, workers=workers)
    elif path == "device":
        t_spec = _transmission_spec(train, seed, output_dim, component_std, block_rows)
        images = np.concatenate([train.images, test.images])
        X = device_features(
            images, t_spec, detector, n_max, noise_seed=noise_seed, workers=workers
        )
        fm = FeatureMatrix(X=X, fingerprint=fingerprint(t_spec, detector))
    else:
        raise ValueError(f"unknown fidelity path {path!r}")
    n = len(train)
    return (
        FeatureMatrix(X=fm.X[:n], fingerprint=fm.fingerprint),
        FeatureMatrix(X=fm.X[n:], fingerprint=fm.fingerprint),
    )


def _probe_kernel(
    train: Dataset, n_probe: int, path: FidelityPath, component_std: float
) -> np.ndarray | None:
    """Reference kernel on the first ``n_probe`` training rows.

    The device path compares against the kernel of the DMD frames, the
    vectors the transmission matrix actually multiplies.
    """
    if n_probe == 0:
        return None
    probe = train.take(np.arange(min(n_probe, len(train))))
    if path == "device":
        U = frames_matrix(quantize_grey(probe.images))
    else:
        U = probe.features()
    return elliptic_kernel_matrix(U) * component_std**2


def _cosines(G: np.ndarray) -> np.ndarray:
    """``G[i, j] / sqrt(G[i, i] G[j, j])``, 0 where a diagonal entry is 0."""
    d = np.sqrt(np.clip(np.diag(G), 0.0, None))
    scale = np.outer(d, d)
    out = np.zeros_like(G)
    np.divide(G, scale, out=out, where=scale > 0)
    return out


def _rms(D: np.ndarray) -> float:
    return float(np.sqrt(np.mean(D**2)))


def encoding_analysis(
    sample: Dataset, t_spec: TransmissionSpec, n_features: int, *, workers: int = 1
) -> EncodingAnalysis:
    """Measure how the DMD encoding and the camera distort the kernel.

    Two effects are separated:

    - encoding: encoded frames have inner products ``Σ min(q, q′)`` instead of
      the pixel inner products of the ideal real-valued path, compared through
      their cosine matrices and through the elliptic kernels they induce;
    - detection order: the device takes ``sqrt(bin |y|²)``; binning the
      modulus instead gives ``bin |y|``. Both Gram matrices are compared with
      the elliptic kernel of the frames.

    Args:
        sample: Images to analyse.
        t_spec: Transmission matrix; its input size must match the frames.
        n_features: Number of output bins used for the Gram matrices.
        workers: Threads for the row blocks of H.
    """
    q = quantize_grey(sample.images)
    U = sample.features()
    min_rms = _rms(_cosines(encoded_gram(q)) - _cosines(U @ U.T))
    K_frames = elliptic_kernel_matrix(frames_matrix(q)) * t_spec.component_std**2
    frame_rms = _rms(_cosines(K_frames) - _cosines(elliptic_kernel_matrix(U)))

    bin_sqrt, sqrt_bin = modulus_orders(
        sample.images, t_spec, n_features, workers=workers
    )
    G_bin_sqrt, G_sqrt_bin = empirical_gram(bin_sqrt), empirical_gram(sqrt_bin)
    scale = float(np.max(np.abs(K_frames))) or 1.0
    analysis = EncodingAnalysis(
        n_images=len(sample),
        n_features=n_features,
        min_kernel_rms=min_rms,
        frame_kernel_rms=frame_rms,
        bin_sqrt_rms=_rms(G_bin_sqrt - K_frames) / scale,
        sqrt_bin_rms=_rms(G_sqrt_bin - K_frames) / scale,
        order_rms=_rms(G_bin_sqrt - G_sqrt_bin) / scale,
    )
    logger.info(
        f"Encoding analysis on {len(sample)} images: min-kernel cosine gap "
        f"{analysis.min_kernel_rms:.3g}, bin-then-sqrt {analysis.bin_sqrt_rms:.3g}, "
        f"sqrt-then-bin {analysis.sqrt_bin_rms:.3g}"
    )
    return analysis


def _trend_slope(records: list[SweepRecord]) -> float | None:
    """Least-squares slope of mean error against log N."""
    by_n: dict[int, list[float]] = {}
    for r in records:
        by_n.setdefault(r.N, []).append(r.error)
    if len(by_n) < 2:
        return None
    ns = sorted(by_n)
    means = [float(np.mean(by_n[n])) for n in ns]
    return float(np.polyfit(np.log(ns), means, 1)[0])


def run_rf_sweep(
    train: Dataset,
    test: Dataset,
    N_list: Sequence[int],
    seeds: Sequence[int],
    gamma: float | None = None,
    path: FidelityPath = "ideal",
    *,
    grid: Sequence[float] = DEFAULT_GAMMA_GRID,
    component_std: float = 1.0,
    block_rows: int = 256,
    detector: DetectorSpec | None = None,
    noise_seed: int = 0,
    feature_noise: float = 0.0,
    output_dim: int = 160000,
    gram_probe: int = 200,
    workers: int = 1,
    on_record: Callable[[SweepRecord], None] | None = None,
) -> SweepResult:
    """Classification error of random-feature ridge over a grid of N and seeds.

    Each seed's features are built once at max(N); smaller N use the leading
    columns. Every (N, seed) point is an independent job and the records come
    back sorted by (N, seed). A KeyboardInterrupt returns the finished points
    with ``partial=True``.

    Args:
        train: Training set.
        test: Test set.
        N_list: Feature counts.
        seeds: Projection seeds (one transmission matrix per seed).
        gamma: Regulariser; None selects it per point on a 10% hold-out.
        path: "ideal" for ``|W U|``, "device" for the simulated optics.
        grid: Candidate gammas.
        component_std: Std of each real component of W or H.
        block_rows: Rows of W or H generated per block.
        detector: Camera model for the device path; clean when omitted.
        noise_seed: Key of the shot-noise and feature-noise streams.
        feature_noise: Relative field noise of the ideal path, 0 disables it.
        output_dim: Camera pixels of the device path.
        gram_probe: Training rows used to measure the Gram deviation; 0 skips it.
        workers: Threads for projections and sweep points.
        on_record: Called with each record as it completes.

    Returns:
        SweepResult with records and run metadata, including per-seed feature
        build time and throughput and, on the device path, an
        :class:`~specklekernel.types.EncodingAnalysis` of the Gram-check rows.

    Raises:
        ValueError: On an empty or non-positive N list, no seeds, or feature
            noise requested on the device path.
    """
    ns = sorted(set(int(n) for n in N_list))
    if not ns or ns[0] < 1:
        raise ValueError(f"N_list must hold positive feature counts, got {N_list}")
    if not seeds:
        raise ValueError("at least one seed is required")
    if feature_noise > 0 and path != "ideal":
        raise ValueError("feature_noise applies to the ideal path only")
    detector = detector or DetectorSpec()
    Y = encode_labels(train.labels, N_CLASSES)
    stage_seconds: dict[str, float] = {}
    started = time.perf_counter()
    K_probe = _probe_kernel(train, gram_probe, path, component_std)
    stage_seconds["reference_kernel"] = time.perf_counter() - started

    metadata = {
        "path": path,
        "gamma": gamma if gamma is not None else "grid",
        "gamma_grid": list(grid),
        "seeds": list(seeds),
        "N_list": ns,
        "normalization": "1/N",
        "component_std": component_std,
        "block_rows": block_rows,
        "n_train": len(train),
        "n_test": len(test),
        "gram_probe": 0 if K_probe is None else K_probe.shape[0],
    }
    if path == "device":
        metadata["detector"] = detector.model_dump()
        metadata["noise_seed"] = noise_seed
        metadata["output_dim"] = output_dim
    else:
        metadata["feature_noise"] = feature_noise
        if feature_noise > 0:
            metadata["noise_seed"] = noise_seed

    if path == "device" and K_probe is not None:
        started = time.perf_counter()
        analysis = encoding_analysis(
            train.take(np.arange(K_probe.shape[0])),
            _transmission_spec(train, seeds[0], output_dim, component_std, block_rows),
            ns[-1],
            workers=workers,
        )
        metadata["encoding_analysis"] = analysis.model_dump()
        stage_seconds["encoding_analysis"] = time.perf_counter() - started

    selected: dict[str, float] = {}
    feature_build: dict[str, dict[str, float]] = {}
    records: list[SweepRecord] = []

    def point(n_features: int, seed: int, X: FeatureMatrix, X_test: FeatureMatrix):
        Xn, Xn_test = X.columns(n_features).X, X_test.columns(n_features).X
        started = time.perf_counter()
        g = gamma
        if g is None:
            fit, val = _holdout(len(train), seed)
            truth = train.labels[val]

            def evaluate(candidate: float) -> float:
                pred = projected_ridge(Xn[fit], Xn[val], Y.take(fit), candidate)
                return classification_error(argmax_labels(pred), truth)

            g, _ = select_gamma(evaluate, grid)
        pred = argmax_labels(projected_ridge(Xn, Xn_test, Y, g))
        wall_ms = _elapsed_ms(started)
        gram_rms = math.nan
        if K_probe is not None:
            _, gram_rms = gram_deviation(Xn[: K_probe.shape[0]], K_probe)
        return g, SweepRecord(
            N=n_features,
            seed=seed,
            error=classification_error(pred, test.labels),
            gram_rms=gram_rms,
            wall_ms=wall_ms,
        )

    def keep(_: int, result: tuple[float, SweepRecord]) -> None:
        g, record = result
        selected[f"{record.N}/{record.seed}"] = g
        records.append(record)
        logger.info(
            f"N={record.N} seed={record.seed}: error={record.error:.4f} "
            f"gram_rms={record.gram_rms:.4g} ({record.wall_ms:.0f} ms)"
        )
        if on_record is not None:
            on_record(record)

    partial = False
    stage_seconds["features"] = stage_seconds["solve"] = 0.0
    try:
        for seed in seeds:
            started = time.perf_counter()
            X, X_test = _sweep_features(
                train,
                test,
                ns[-1],
                seed,
                path,
                component_std=component_std,
                block_rows=block_rows,
                detector=detector,
                noise_seed=noise_seed,
                feature_noise=feature_noise,
                output_dim=output_dim,
                workers=workers,
            )
            elapsed = time.perf_counter() - started
            n_values = (len(train) + len(test)) * ns[-1]
            feature_build[str(seed)] = {
                "seconds": elapsed,
                "features_per_second": n_values / elapsed if elapsed > 0 else math.inf,
            }
            stage_seconds["features"] += elapsed

            started = time.perf_counter()
            jobs = [
                lambda n=n, s=seed, X=X, X_test=X_test: point(n, s, X, X_test)
                for n in ns
            ]
            run_jobs(jobs, workers, f"sweep points (seed {seed})", on_result=keep)
            stage_seconds["solve"] += time.perf_counter() - started
    except KeyboardInterrupt:
        partial = True
        logger.warning(f"Sweep interrupted after {len(records)} point(s)")

    metadata["feature_build"] = feature_build
    metadata["stage_seconds"] = stage_seconds
    if gamma is None:
        metadata["selected_gamma"] = dict(sorted(selected.items()))
    slope = _trend_slope(records)
    metadata["trend_slope"] = slope
    if slope is not None and slope >= 0:
        logger.warning(
            f"Mean error does not decrease with N (slope {slope:.4g} per log N)"
        )
    return SweepResult(metadata=metadata, partial=partial, records=records)


def _log_residual(logd: np.ndarray, logn: np.ndarray, log_c: float, slope: float) -> float:
    return float(np.sqrt(np.mean((logd - (log_c + slope * logn)) ** 2)))


def fit_power_law(sweep: SweepResult, err_inf: float) -> PowerLawFit:
    """Fit ``mean_err(N) - err_inf = c * N^exponent`` in log-log space.

    Uses the per-N mean error over seeds. Points with a nonpositive excess
    error are excluded and reported. A second fit holds the exponent at -2/3
    and solves for c only.

    Raises:
        ValueError: With fewer than 4 distinct N, or fewer than 2 usable points.
    """
    summary = sweep.summary()
    if len(summary) < MIN_POWER_LAW_POINTS:
        raise ValueError(
            f"power-law fit needs at least {MIN_POWER_LAW_POINTS} distinct N, "
            f"got {len(summary)}"
        )
    used = [s for s in summary if s.mean_error - err_inf > 0]
    excluded = [s.N for s in summary if s.mean_error - err_inf <= 0]
    if excluded:
        logger.warning(f"Excluded N={excluded} from the fit: error <= asymptote")
    if len(used) < 2:
        raise ValueError(
            f"only {len(used)} point(s) lie above err_inf={err_inf}; need at least 2"
        )

    logn = np.log([s.N for s in used])
    logd = np.log([s.mean_error - err_inf for s in used])
    slope, intercept = np.polyfit(logn, logd, 1)
    fixed_log_c = float(np.mean(logd - FIXED_EXPONENT * logn))
    fit = PowerLawFit(
        amplitude=float(np.exp(intercept)),
        exponent=float(slope),
        residual=_log_residual(logd, logn, float(intercept), float(slope)),
        fixed_exponent=FIXED_EXPONENT,
        fixed_amplitude=float(np.exp(fixed_log_c)),
        fixed_residual=_log_residual(logd, logn, fixed_log_c, FIXED_EXPONENT),
        used_N=[s.N for s in used],
        excluded_N=excluded,
    )
    logger.info(
        f"Power law: c={fit.amplitude:.4g}, exponent={fit.exponent:.4f}; "
        f"fixed -2/3: c={fit.fixed_amplitude:.4g}"
    )
    return fit
