"""Pydantic models for projections, detectors, results and run configuration."""

import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

MAX_SEED = 2**64 - 1
DEFAULT_GAMMA_GRID = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0]
DEFAULT_N_GRID = [64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384]

FidelityPath = Literal["ideal", "device"]
OutputFormat = Literal["csv", "json"]
CorrelationMode = Literal["off", "smear"]
CommandName = Literal[
    "kernel-exact", "linear-baseline", "rf-sweep", "convergence", "features"
]


def _parse_number_list(value: Any, cast: type) -> Any:
    """Accept '64,512,4096' strings and bare scalars as lists."""
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        return [cast(float(p)) if cast is int else cast(p) for p in parts]
    if isinstance(value, (int, float)):
        return [value]
    return value


class TransmissionSpec(BaseModel):
    """Seeded complex Gaussian transmission matrix H of the scattering medium."""

    model_config = {"frozen": True}

    seed: int = Field(0, ge=0, le=MAX_SEED, description="64-bit key of the H stream")
    input_dim: int = Field(
        12544, ge=1, description="Number of DMD mirrors in the compact frame (112²)"
    )
    output_dim: int = Field(
        160000, ge=1, description="Number of camera pixels (400²)"
    )
    component_std: float = Field(
        1.0, gt=0, description="Std of the real and imaginary parts of each entry"
    )
    block_rows: int = Field(
        256, ge=1, description="Rows of H generated per streamed block"
    )

    @property
    def output_side(self) -> int:
        """Side length of the square camera grid."""
        side = math.isqrt(self.output_dim)
        if side * side != self.output_dim:
            raise ValueError(
                f"output_dim={self.output_dim} is not a square camera grid"
            )
        return side


class DetectorSpec(BaseModel):
    """Camera model applied to the speckle field."""

    model_config = {"frozen": True}

    shot_noise: bool = Field(False, description="Replace intensities by Poisson counts")
    photon_budget: float = Field(
        1e4, gt=0, description="Mean photon count at the frame-mean intensity"
    )
    quantize_bits: Literal[0, 8] = Field(
        0, description="0 disables quantisation, 8 maps [0, max] onto 0..255"
    )
    correlation_mode: CorrelationMode = Field(
        "off", description="'smear' convolves the frame with a 2x2 box kernel"
    )

    @property
    def is_clean(self) -> bool:
        """True when detection reduces to |y|² pixel by pixel."""
        return (
            not self.shot_noise
            and self.quantize_bits == 0
            and self.correlation_mode == "off"
        )


class ProjectionSpec(BaseModel):
    """Ideal random projection X = |W U + b| with a seeded complex Gaussian W."""

    model_config = {"frozen": True}

    seed: int = Field(0, ge=0, le=MAX_SEED, description="64-bit key of the W stream")
    n_features: int = Field(..., ge=1, description="Number of projections N")
    input_dim: int = Field(..., ge=1, description="Input dimension p")
    bias: Optional[tuple[float, ...]] = Field(
        None, description="Bias vector of length N, zero when omitted"
    )
    component_std: float = Field(1.0, gt=0, description="Std of each W component")
    block_rows: int = Field(256, ge=1, description="Rows of W generated per block")
    feature_noise: float = Field(
        0.0,
        ge=0,
        description="Std of complex Gaussian noise added to W u + b, relative to "
        "the per-component field std of each sample (component_std · ‖u‖)",
    )
    noise_seed: int = Field(
        0, ge=0, le=MAX_SEED, description="Key of the feature-noise streams"
    )

    @model_validator(mode="after")
    def check_bias_length(self) -> "ProjectionSpec":
        if self.bias is not None and len(self.bias) != self.n_features:
            raise ValueError(
                f"bias has length {len(self.bias)}, expected n_features={self.n_features}"
            )
        return self

    def bias_vector(self) -> np.ndarray:
        if self.bias is None:
            return np.zeros(self.n_features)
        return np.asarray(self.bias, dtype=np.float64)


class SweepRecord(BaseModel):
    """One (N, seed) point of a random-feature sweep."""

    N: int = Field(..., ge=0, description="Feature count; 0 marks an exact-kernel run")
    seed: int = Field(..., ge=0)
    error: float = Field(..., description="Test classification error in [0, 1]")
    gram_rms: float = Field(
        float("nan"), description="RMS deviation of (1/N)XXᵀ from the kernel"
    )
    wall_ms: float = Field(0.0, ge=0, description="Solve wall time in milliseconds")


class SweepSummary(BaseModel):
    """Per-N aggregate of sweep records over seeds."""

    N: int
    mean_error: float
    error_std: float
    gram_rms: float
    wall_ms: float
    seeds: int


class SweepResult(BaseModel):
    """Records of a sweep plus the metadata needed to interpret them."""

    metadata: Dict[str, Any] = Field(default_factory=dict)
    partial: bool = Field(False, description="True when the sweep was interrupted")
    records: List[SweepRecord] = Field(default_factory=list)

    @field_validator("records")
    def order_records(cls, v: List[SweepRecord]) -> List[SweepRecord]:
        return sorted(v, key=lambda r: (r.N, r.seed))

    def summary(self) -> List[SweepSummary]:
        """Aggregate records per N, in strictly increasing N."""
        by_n: Dict[int, List[SweepRecord]] = {}
        for record in self.records:
            by_n.setdefault(record.N, []).append(record)
        out = []
        for n_features in sorted(by_n):
            group = by_n[n_features]
            errors = np.array([r.error for r in group])
            grams = np.array([r.gram_rms for r in group])
            out.append(
                SweepSummary(
                    N=n_features,
                    mean_error=float(errors.mean()),
                    error_std=float(errors.std(ddof=1)) if len(group) > 1 else 0.0,
                    gram_rms=float(grams.mean()),
                    wall_ms=float(np.mean([r.wall_ms for r in group])),
                    seeds=len(group),
                )
            )
        return out


class GramStat(BaseModel):
    """Entrywise deviation of the empirical Gram matrix at one N."""

    N: int = Field(..., ge=1)
    max_abs: float = Field(..., description="max |G_N - K|, averaged over trials")
    rms: float = Field(..., description="RMS of G_N - K, averaged over trials")
    trials: int = Field(..., ge=1)
    kernel_max: float = Field(..., description="max |K| of the reference kernel")


class PowerLawFit(BaseModel):
    """Fit of err(N) - err_inf = c * N^exponent."""

    amplitude: float
    exponent: float
    residual: float = Field(..., description="RMS residual in log space")
    fixed_exponent: float = -2.0 / 3.0
    fixed_amplitude: float
    fixed_residual: float
    used_N: List[int]
    excluded_N: List[int] = Field(default_factory=list)


class RunOutcome(BaseModel):
    """Result of a single exact-kernel or linear-baseline run."""

    error: float
    gamma: float
    n_train: int
    n_test: int
    wall_ms: float
    gamma_scores: Dict[str, float] = Field(
        default_factory=dict, description="Validation error per grid gamma"
    )
    stage_ms: Dict[str, float] = Field(
        default_factory=dict, description="Wall time per pipeline stage"
    )


class EncodingAnalysis(BaseModel):
    """Kernel distortions introduced by the DMD encoding and the camera.

    RMS values are taken over all entries of image-by-image matrices. Cosine
    comparisons are scale free; Gram comparisons are relative to max |K| of
    the elliptic kernel on the DMD frames.
    """

    n_images: int = Field(..., ge=1)
    n_features: int = Field(..., ge=1)
    min_kernel_rms: float = Field(
        ..., description="Cosine gap between Σ min(q, q′) and pixel inner products"
    )
    frame_kernel_rms: float = Field(
        ..., description="Cosine gap between elliptic kernels on frames and on pixels"
    )
    bin_sqrt_rms: float = Field(
        ..., description="Gram of sqrt(bin |y|²) against the frame kernel"
    )
    sqrt_bin_rms: float = Field(
        ..., description="Gram of bin |y| against the frame kernel"
    )
    order_rms: float = Field(
        ..., description="Gap between the two Grams, bin-then-sqrt and sqrt-then-bin"
    )


class RunConfig(BaseModel):
    """Validated description of one CLI experiment; serialised into the manifest."""

    command: CommandName
    data_dir: Optional[Path] = Field(None, description="Directory with MNIST IDX files")
    train_images: Optional[Path] = None
    train_labels: Optional[Path] = None
    test_images: Optional[Path] = None
    test_labels: Optional[Path] = None
    n_train: Optional[int] = Field(None, ge=1, description="Stratified train subset")
    n_test: Optional[int] = Field(None, ge=1, description="Stratified test subset")
    seed: int = Field(0, ge=0, le=MAX_SEED, description="Base seed")
    n_seeds: int = Field(1, ge=1, description="Seeds seed, seed+1, ...")
    gamma: Optional[float] = Field(None, gt=0, description="None selects by grid")
    gamma_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_GAMMA_GRID))
    n_features: List[int] = Field(default_factory=lambda: list(DEFAULT_N_GRID))
    path: FidelityPath = "ideal"
    shot_noise: bool = False
    photon_budget: float = Field(1e4, gt=0)
    quantize_bits: Literal[0, 8] = 0
    correlation_mode: CorrelationMode = "off"
    noise_seed: int = Field(0, ge=0, le=MAX_SEED)
    feature_noise: float = Field(
        0.0, ge=0, description="Relative field noise of the ideal projection"
    )
    component_std: float = Field(1.0, gt=0)
    block_rows: int = Field(256, ge=1)
    workers: int = Field(1, ge=1)
    trials: int = Field(5, ge=1)
    memory_budget_gb: float = Field(16.0, gt=0)
    gram_probe: int = Field(200, ge=0)
    err_inf: Optional[float] = Field(
        None, ge=0, le=1, description="Asymptotic error for the power-law fit"
    )
    output: Optional[Path] = Field(None, description="Results file path")
    format: OutputFormat = "csv"

    @field_validator("n_features", mode="before")
    def parse_n_features(cls, v):
        return _parse_number_list(v, int)

    @field_validator("gamma_grid", mode="before")
    def parse_gamma_grid(cls, v):
        return _parse_number_list(v, float)

    @field_validator("n_features")
    def check_n_features(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("n_features must not be empty")
        if any(n < 1 for n in v):
            raise ValueError("every feature count must be >= 1")
        return sorted(set(v))

    @field_validator("gamma_grid")
    def check_gamma_grid(cls, v: List[float]) -> List[float]:
        if not v or any(not (g > 0 and math.isfinite(g)) for g in v):
            raise ValueError("gamma_grid must hold positive finite values")
        return sorted(set(v))

    @model_validator(mode="after")
    def check_feature_noise(self) -> "RunConfig":
        if self.feature_noise > 0 and self.path != "ideal":
            raise ValueError("feature_noise applies to the ideal path only")
        return self

    @property
    def seeds(self) -> List[int]:
        return list(range(self.seed, self.seed + self.n_seeds))

    @property
    def results_path(self) -> Path:
        """Explicit output path, else ``results/<command>.<csv|json|spkf>``."""
        if self.output is not None:
            return self.output
        suffix = "spkf" if self.command == "features" else self.format
        return Path("results") / f"{self.command}.{suffix}"

    @property
    def memory_budget_bytes(self) -> int:
        return int(self.memory_budget_gb * 1e9)

    def detector_spec(self) -> DetectorSpec:
        return DetectorSpec(
            shot_noise=self.shot_noise,
            photon_budget=self.photon_budget,
            quantize_bits=self.quantize_bits,
            correlation_mode=self.correlation_mode,
        )
