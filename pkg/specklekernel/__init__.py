"""specklekernel: elliptic-kernel machines from modulus random projections."""

from .bench import (
    encoding_analysis,
    fit_power_law,
    run_exact_kernel,
    run_linear_baseline,
    run_rf_sweep,
)
from .elliptic import complete_E, complete_K, elliptic_kernel, elliptic_kernel_matrix
from .features import FeatureMatrix, gram_convergence, ideal_projection, projected_ridge
from .optical import device_features, modulus_orders
from .types import (
    DetectorSpec,
    EncodingAnalysis,
    ProjectionSpec,
    RunConfig,
    SweepRecord,
    SweepResult,
    TransmissionSpec,
)

__version__ = "0.3.0"

__all__ = [
    "complete_K",
    "complete_E",
    "elliptic_kernel",
    "elliptic_kernel_matrix",
    "ideal_projection",
    "projected_ridge",
    "gram_convergence",
    "FeatureMatrix",
    "device_features",
    "modulus_orders",
    "run_exact_kernel",
    "run_linear_baseline",
    "run_rf_sweep",
    "encoding_analysis",
    "fit_power_law",
    "DetectorSpec",
    "EncodingAnalysis",
    "ProjectionSpec",
    "RunConfig",
    "SweepRecord",
    "SweepResult",
    "TransmissionSpec",
]
