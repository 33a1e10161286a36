"""specklekernel Command Line Interface."""

import logging
from pathlib import Path
from typing import Annotated, Any

import typer
try:  # typer >= 0.26 vendors click; its Context returns this enum
    from typer._click.core import ParameterSource
except ImportError:
    from click.core import ParameterSource
from pydantic import ValidationError

from .bench import fit_power_law, run_exact_kernel, run_linear_baseline, run_rf_sweep
from .datasets import Dataset, IdxFormatError, load_idx, mnist_paths, subsample
from .features import (
    FeatureMatrix,
    fingerprint,
    gram_convergence,
    ideal_projection,
)
from .logging_config import setup_logging
from .optical import device_features
from .results import emit_gram_stats, emit_results, manifest_path, write_manifest
from .storage import write_features
from .types import (
    ProjectionSpec,
    RunConfig,
    RunOutcome,
    SweepRecord,
    SweepResult,
    TransmissionSpec,
)
from .utils import load_config

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "SPECKLEKERNEL_DATA_DIR"
CONVERGENCE_SAMPLES = 200

app = typer.Typer(
    name="specklekernel",
    help="specklekernel: random-projection kernel machines and their optical simulation.",
    add_completion=False,
    no_args_is_help=True,
    pretty_exceptions_show_locals=False,
)

# Options shared by several commands.
DataDir = Annotated[
    Path | None,
    typer.Option(
        "--data-dir",
        envvar=DATA_DIR_ENV,
        help="Directory holding the standard MNIST IDX files (optionally .gz).",
    ),
]
TrainImages = Annotated[
    Path | None, typer.Option("--train-images", help="Training images IDX file.")
]
TrainLabels = Annotated[
    Path | None, typer.Option("--train-labels", help="Training labels IDX file.")
]
TestImages = Annotated[
    Path | None, typer.Option("--test-images", help="Test images IDX file.")
]
TestLabels = Annotated[
    Path | None, typer.Option("--test-labels", help="Test labels IDX file.")
]
NTrain = Annotated[
    int | None,
    typer.Option("--n-train", help="Stratified training subset size (all when unset)."),
]
NTest = Annotated[
    int | None,
    typer.Option("--n-test", help="Stratified test subset size (all when unset)."),
]
Seed = Annotated[int, typer.Option("--seed", help="Base seed.")]
Gamma = Annotated[
    float | None,
    typer.Option("--gamma", help="Ridge regulariser; grid search when unset."),
]
GammaGrid = Annotated[
    str | None,
    typer.Option(
        "--gamma-grid", help="Comma-separated candidate gammas (default 1e-3..1e2)."
    ),
]
NFeatures = Annotated[
    str | None,
    typer.Option("--N", "--n-features", help="Comma-separated feature counts."),
]
FidelityPathOpt = Annotated[
    str, typer.Option("--path", help="Feature path: 'ideal' or 'device'.")
]
ShotNoise = Annotated[
    bool, typer.Option("--shot-noise", help="Poisson photon noise on the camera.")
]
PhotonBudget = Annotated[
    float,
    typer.Option("--photon-budget", help="Mean photon count at the frame mean."),
]
QuantizeBits = Annotated[
    int, typer.Option("--quantize-bits", help="Camera ADC bits: 0 (off) or 8.")
]
Correlation = Annotated[
    str, typer.Option("--correlation", help="Pixel correlation: 'off' or 'smear'.")
]
NoiseSeed = Annotated[
    int,
    typer.Option("--noise-seed", help="Seed of the shot-noise and feature-noise streams."),
]
FeatureNoise = Annotated[
    float,
    typer.Option(
        "--feature-noise",
        help="Relative complex noise added to the ideal projection (0 disables).",
    ),
]
ComponentStd = Annotated[
    float,
    typer.Option("--component-std", help="Std of each real projection component."),
]
BlockRows = Annotated[
    int, typer.Option("--block-rows", help="Projection rows generated per block.")
]
Workers = Annotated[int, typer.Option("--workers", "-w", help="Worker threads.")]
Output = Annotated[
    Path | None,
    typer.Option("--output", "-o", help="Results file (default results/<command>.*)."),
]
Format = Annotated[str, typer.Option("--format", help="Results format: csv or json.")]
ConfigFile = Annotated[
    Path | None,
    typer.Option(
        "--config",
        help="YAML/JSON file with settings; flags given on the command line win.",
    ),
]
LogLevel = Annotated[
    str,
    typer.Option(
        "--log-level",
        "-l",
        help="Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)",
    ),
]
LogConfig = Annotated[
    Path | None,
    typer.Option("--log-config", help="External logging configuration file (YAML/JSON)"),
]
Quiet = Annotated[
    bool, typer.Option("--quiet", "-q", help="Suppress output except errors")
]

_NOT_CONFIG = {"ctx", "config", "log_level", "log_config", "quiet"}


def _build_config(ctx: typer.Context, command: str, params: dict[str, Any]) -> RunConfig:
    """Merge flags with an optional config file into a validated RunConfig.

    File values only fill options left at their defaults.
    """
    setup_logging(params["log_level"], params["quiet"], params["log_config"])
    values = {k: v for k, v in params.items() if k not in _NOT_CONFIG}

    config_file = params.get("config")
    if config_file is not None:
        try:
            from_file = load_config(config_file)
        except (FileNotFoundError, ValueError) as e:
            raise typer.BadParameter(str(e), param_hint="'--config'")
        for key, value in from_file.items():
            if key == "command":
                continue
            if key not in values or (
                ctx.get_parameter_source(key) == ParameterSource.DEFAULT
            ):
                values[key] = value

    values = {k: v for k, v in values.items() if v is not None}
    try:
        cfg = RunConfig(command=command, **values)
    except ValidationError as e:
        raise typer.BadParameter(str(e))
    logger.debug(f"Run configuration: {cfg.model_dump(mode='json')}")
    return cfg


def _split_paths(cfg: RunConfig, split: str) -> tuple[Path, Path]:
    explicit = (
        (cfg.train_images, cfg.train_labels)
        if split == "train"
        else (cfg.test_images, cfg.test_labels)
    )
    if all(p is not None for p in explicit):
        return explicit
    if cfg.data_dir is None:
        raise typer.BadParameter(
            f"no {split} dataset: set --data-dir (or {DATA_DIR_ENV}) "
            f"or pass --{split}-images and --{split}-labels",
            param_hint="'--data-dir'",
        )
    if not cfg.data_dir.is_dir():
        raise typer.BadParameter(
            f"dataset directory does not exist: {cfg.data_dir}",
            param_hint="'--data-dir'",
        )
    images, labels = mnist_paths(cfg.data_dir, split)
    return explicit[0] or images, explicit[1] or labels


def _load_split(cfg: RunConfig, split: str, n_sub: int | None) -> Dataset:
    images, labels = _split_paths(cfg, split)
    for path, kind in ((images, "images"), (labels, "labels")):
        if not path.exists():
            explicit = getattr(cfg, f"{split}_{kind}") is not None
            hint = f"'--{split}-{kind}'" if explicit else "'--data-dir'"
            raise typer.BadParameter(f"file not found: {path}", param_hint=hint)
    try:
        ds = load_idx(images, labels, split=split)
    except IdxFormatError as e:
        raise _fail(e)
    if n_sub is not None and n_sub < len(ds):
        ds = subsample(ds, n_sub, cfg.seed)
    logger.info(f"Loaded {len(ds)} {split} images from {images}")
    return ds


def _load_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    return _load_split(cfg, "train", cfg.n_train), _load_split(cfg, "test", cfg.n_test)


def _hashes(*datasets: Dataset) -> dict[str, str]:
    return {ds.split: ds.sha256() for ds in datasets}


def _single_run(cfg: RunConfig, outcome: RunOutcome, model: str) -> SweepResult:
    metadata = {
        "model": model,
        "gamma": outcome.gamma,
        "gamma_scores": outcome.gamma_scores,
        "n_train": outcome.n_train,
        "n_test": outcome.n_test,
        "stage_ms": outcome.stage_ms,
    }
    record = SweepRecord(N=0, seed=cfg.seed, error=outcome.error, wall_ms=outcome.wall_ms)
    return SweepResult(metadata=metadata, records=[record])


def _finish(
    cfg: RunConfig,
    sweep: SweepResult,
    datasets: dict[str, str],
    extra: dict[str, Any] | None = None,
) -> None:
    path = emit_results(sweep, cfg.format, cfg.results_path)
    write_manifest(
        manifest_path(path),
        cfg,
        datasets=datasets,
        results_file=path,
        partial=sweep.partial,
        extra={"metadata": sweep.metadata, **(extra or {})},
    )
    for summary in sweep.summary():
        typer.echo(
            f"N={summary.N}: error={summary.mean_error:.4f} "
            f"(± {summary.error_std:.4f}, {summary.seeds} seed(s))"
        )
    typer.echo(f"Results written to {path}")
    if sweep.partial:
        logger.error("Run interrupted; partial results written")
        raise typer.Exit(code=1)


def _fail(e: Exception) -> typer.Exit:
    logger.error(f"Run failed: {type(e).__name__}: {e}")
    return typer.Exit(code=1)


@app.command("kernel-exact")
def kernel_exact(
    ctx: typer.Context,
    data_dir: DataDir = None,
    train_images: TrainImages = None,
    train_labels: TrainLabels = None,
    test_images: TestImages = None,
    test_labels: TestLabels = None,
    n_train: NTrain = None,
    n_test: NTest = None,
    seed: Seed = 0,
    gamma: Gamma = None,
    gamma_grid: GammaGrid = None,
    memory_budget_gb: Annotated[
        float,
        typer.Option("--memory-budget-gb", help="Refuse runs needing more memory."),
    ] = 16.0,
    workers: Workers = 1,
    output: Output = None,
    format: Format = "csv",
    config: ConfigFile = None,
    log_level: LogLevel = "INFO",
    log_config: LogConfig = None,
    quiet: Quiet = False,
) -> None:
    """Elliptic kernel ridge regression with the exact n x n kernel matrix.

    Examples:
        specklekernel kernel-exact --n-train 500 --n-test 200 --seed 7
    """
    cfg = _build_config(ctx, "kernel-exact", locals())
    train, test = _load_data(cfg)
    try:
        outcome = run_exact_kernel(
            train,
            test,
            cfg.gamma,
            grid=cfg.gamma_grid,
            seed=cfg.seed,
            memory_budget_bytes=cfg.memory_budget_bytes,
            workers=cfg.workers,
        )
        sweep = _single_run(cfg, outcome, "elliptic-kernel")
    except Exception as e:
        raise _fail(e)
    _finish(cfg, sweep, _hashes(train, test))


@app.command("linear-baseline")
def linear_baseline(
    ctx: typer.Context,
    data_dir: DataDir = None,
    train_images: TrainImages = None,
    train_labels: TrainLabels = None,
    test_images: TestImages = None,
    test_labels: TestLabels = None,
    n_train: NTrain = None,
    n_test: NTest = None,
    seed: Seed = 0,
    gamma: Gamma = None,
    gamma_grid: GammaGrid = None,
    output: Output = None,
    format: Format = "csv",
    config: ConfigFile = None,
    log_level: LogLevel = "INFO",
    log_config: LogConfig = None,
    quiet: Quiet = False,
) -> None:
    """Linear ridge regression on raw pixels."""
    cfg = _build_config(ctx, "linear-baseline", locals())
    train, test = _load_data(cfg)
    try:
        outcome = run_linear_baseline(
            train, test, cfg.gamma, grid=cfg.gamma_grid, seed=cfg.seed
        )
        sweep = _single_run(cfg, outcome, "linear")
    except Exception as e:
        raise _fail(e)
    _finish(cfg, sweep, _hashes(train, test))


@app.command("rf-sweep")
def rf_sweep(
    ctx: typer.Context,
    data_dir: DataDir = None,
    train_images: TrainImages = None,
    train_labels: TrainLabels = None,
    test_images: TestImages = None,
    test_labels: TestLabels = None,
    n_train: NTrain = None,
    n_test: NTest = None,
    seed: Seed = 0,
    n_seeds: Annotated[
        int, typer.Option("--seeds", help="Number of seeds: seed, seed+1, ...")
    ] = 5,
    gamma: Gamma = None,
    gamma_grid: GammaGrid = None,
    n_features: NFeatures = None,
    path: FidelityPathOpt = "ideal",
    shot_noise: ShotNoise = False,
    photon_budget: PhotonBudget = 1e4,
    quantize_bits: QuantizeBits = 0,
    correlation_mode: Correlation = "off",
    noise_seed: NoiseSeed = 0,
    feature_noise: FeatureNoise = 0.0,
    component_std: ComponentStd = 1.0,
    block_rows: BlockRows = 256,
    gram_probe: Annotated[
        int,
        typer.Option("--gram-probe", help="Training rows for the Gram deviation (0 skips)."),
    ] = 200,
    err_inf: Annotated[
        float | None,
        typer.Option("--err-inf", help="Asymptotic error; enables the power-law fit."),
    ] = None,
    workers: Workers = 1,
    output: Output = None,
    format: Format = "csv",
    config: ConfigFile = None,
    log_level: LogLevel = "INFO",
    log_config: LogConfig = None,
    quiet: Quiet = False,
) -> None:
    """Classification error of random-feature ridge regression versus N.

    Examples:
        specklekernel rf-sweep --N 64,512,4096 --seeds 3
        specklekernel rf-sweep --path device --shot-noise --photon-budget 1e4
    """
    cfg = _build_config(ctx, "rf-sweep", locals())
    train, test = _load_data(cfg)
    extra: dict[str, Any] = {}
    try:
        sweep = run_rf_sweep(
            train,
            test,
            cfg.n_features,
            cfg.seeds,
            cfg.gamma,
            cfg.path,
            grid=cfg.gamma_grid,
            component_std=cfg.component_std,
            block_rows=cfg.block_rows,
            detector=cfg.detector_spec(),
            noise_seed=cfg.noise_seed,
            feature_noise=cfg.feature_noise,
            gram_probe=cfg.gram_probe,
            workers=cfg.workers,
        )
    except Exception as e:
        raise _fail(e)
    if cfg.err_inf is not None and not sweep.partial:
        try:
            extra["power_law"] = fit_power_law(sweep, cfg.err_inf).model_dump()
        except ValueError as e:
            logger.warning(f"Power-law fit skipped: {e}")
    _finish(cfg, sweep, _hashes(train, test), extra)


@app.command("convergence")
def convergence(
    ctx: typer.Context,
    data_dir: DataDir = None,
    train_images: TrainImages = None,
    train_labels: TrainLabels = None,
    n_train: Annotated[
        int | None,
        typer.Option("--n-train", help="Training samples in the Gram matrix (200 when unset)."),
    ] = None,
    seed: Seed = 0,
    n_features: NFeatures = None,
    trials: Annotated[
        int, typer.Option("--trials", help="Independent seeds averaged per N.")
    ] = 5,
    component_std: ComponentStd = 1.0,
    block_rows: BlockRows = 256,
    workers: Workers = 1,
    output: Output = None,
    format: Format = "csv",
    config: ConfigFile = None,
    log_level: LogLevel = "INFO",
    log_config: LogConfig = None,
    quiet: Quiet = False,
) -> None:
    """Deviation of the empirical Gram matrix (1/N) X Xᵀ from the elliptic kernel."""
    cfg = _build_config(ctx, "convergence", locals())
    train = _load_split(cfg, "train", cfg.n_train or CONVERGENCE_SAMPLES)
    try:
        stats = gram_convergence(
            train.features(),
            cfg.n_features,
            cfg.seed,
            cfg.trials,
            component_std=cfg.component_std,
            block_rows=cfg.block_rows,
            workers=cfg.workers,
        )
        path = emit_gram_stats(stats, cfg.format, cfg.results_path)
    except Exception as e:
        raise _fail(e)
    write_manifest(
        manifest_path(path),
        cfg,
        datasets=_hashes(train),
        results_file=path,
        extra={"n_samples": len(train)},
    )
    for s in stats:
        typer.echo(f"N={s.N}: max={s.max_abs:.4g} rms={s.rms:.4g}")
    typer.echo(f"Results written to {path}")


@app.command("features")
def features(
    ctx: typer.Context,
    data_dir: DataDir = None,
    train_images: TrainImages = None,
    train_labels: TrainLabels = None,
    n_train: NTrain = None,
    seed: Seed = 0,
    n_features: NFeatures = None,
    path: FidelityPathOpt = "ideal",
    shot_noise: ShotNoise = False,
    photon_budget: PhotonBudget = 1e4,
    quantize_bits: QuantizeBits = 0,
    correlation_mode: Correlation = "off",
    noise_seed: NoiseSeed = 0,
    feature_noise: FeatureNoise = 0.0,
    component_std: ComponentStd = 1.0,
    block_rows: BlockRows = 256,
    workers: Workers = 1,
    output: Output = None,
    config: ConfigFile = None,
    log_level: LogLevel = "INFO",
    log_config: LogConfig = None,
    quiet: Quiet = False,
) -> None:
    """Write the feature matrix of the training set at max(N) to an SPKF file.

    The file is bitwise identical for any --workers value.
    """
    cfg = _build_config(ctx, "features", locals())
    train = _load_split(cfg, "train", cfg.n_train)
    n_max = cfg.n_features[-1]
    try:
        if cfg.path == "ideal":
            spec = ProjectionSpec(
                seed=cfg.seed,
                n_features=n_max,
                input_dim=train.input_dim,
                component_std=cfg.component_std,
                block_rows=cfg.block_rows,
                feature_noise=cfg.feature_noise,
                noise_seed=cfg.noise_seed,
            )
            fm = ideal_projection(train.features(), spec, workers=cfg.workers)
            specs = {"projection": spec.model_dump()}
        else:
            t_spec = TransmissionSpec(
                seed=cfg.seed,
                input_dim=16 * train.input_dim,
                component_std=cfg.component_std,
                block_rows=cfg.block_rows,
            )
            d_spec = cfg.detector_spec()
            X = device_features(
                train.images,
                t_spec,
                d_spec,
                n_max,
                noise_seed=cfg.noise_seed,
                workers=cfg.workers,
            )
            fm = FeatureMatrix(X=X, fingerprint=fingerprint(t_spec, d_spec))
            specs = {"transmission": t_spec.model_dump(), "detector": d_spec.model_dump()}
        out = write_features(
            cfg.results_path, fm, {"path": cfg.path, "dataset": train.sha256(), **specs}
        )
    except Exception as e:
        raise _fail(e)
    write_manifest(
        manifest_path(out),
        cfg,
        datasets=_hashes(train),
        results_file=out,
        extra={"specs": specs, "fingerprint": fm.fingerprint},
    )
    typer.echo(f"Features written to {out}")


def main():
    """CLI entry point function."""
    app()


if __name__ == "__main__":
    main()
