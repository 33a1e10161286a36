"""Linear and kernel ridge regression for one-hot classification.

All solves go through a Cholesky factorisation of a regularised symmetric
positive-definite matrix; explicit inverses are never formed.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg

logger = logging.getLogger(__name__)

RidgeForm = Literal["auto", "primal", "dual"]

SYMMETRY_TOLERANCE = 1e-10

# Rows per float64 chunk when accumulating UᵀU from (possibly float32) features.
_GRAM_CHUNK = 4096
# Rows compared per step of the kernel symmetry check.
SYMMETRY_CHUNK = 256


@dataclass(frozen=True)
class LabelMatrix:
    """One-hot targets: ``Y[i, j] == 1`` iff sample i has label j + 1."""

    Y: np.ndarray
    q: int

    def __post_init__(self):
        if self.Y.ndim != 2 or self.Y.shape[1] != self.q:
            raise ValueError(f"Y must have shape (n, {self.q}), got {self.Y.shape}")
        if self.Y.shape[0] and not (
            np.all((self.Y == 0) | (self.Y == 1)) and np.all(self.Y.sum(axis=1) == 1)
        ):
            raise ValueError("every row of Y must be one-hot")

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    def labels(self) -> np.ndarray:
        """1-based labels encoded by the rows."""
        return np.argmax(self.Y, axis=1) + 1

    def take(self, indices: ArrayLike) -> "LabelMatrix":
        return LabelMatrix(Y=self.Y[np.asarray(indices)], q=self.q)


@dataclass(frozen=True)
class RidgeModel:
    """Coefficients ``beta`` (p × q) of a fitted ridge regression."""

    beta: np.ndarray
    gamma: float
    form: Literal["primal", "dual"] = "primal"

    def __post_init__(self):
        _check_gamma(self.gamma)


@dataclass(frozen=True)
class KernelRidgePredictor:
    """Dual coefficients ``alpha = (K + γI)⁻¹ Y`` of a kernel ridge fit."""

    alpha: np.ndarray
    gamma: float

    @property
    def n_train(self) -> int:
        return self.alpha.shape[0]

    def predict(self, K_test: ArrayLike) -> np.ndarray:
        """Return ``K̃ alpha`` for a test kernel of shape (ñ, n)."""
        K_test = _as_matrix(K_test, "K_test")
        if K_test.shape[1] != self.n_train:
            raise ValueError(
                f"K_test has {K_test.shape[1]} columns, expected {self.n_train}"
            )
        return K_test @ self.alpha

    def residual(self, K: ArrayLike, Y: "LabelMatrix | ArrayLike") -> float:
        """Relative residual ‖(K + γI) alpha − Y‖ / ‖Y‖."""
        K = _as_matrix(K, "K")
        targets = _targets(Y)
        lhs = K @ self.alpha + self.gamma * self.alpha
        return float(np.linalg.norm(lhs - targets) / np.linalg.norm(targets))


def _check_gamma(gamma: float) -> None:
    if not (isinstance(gamma, (int, float, np.floating)) and math.isfinite(gamma)):
        raise ValueError(f"gamma must be a finite number, got {gamma!r}")
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma!r}")


def _as_matrix(M: ArrayLike, name: str) -> np.ndarray:
    arr = np.asarray(M)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    # min and max propagate NaN and expose ±inf without an elementwise mask
    if arr.size and not (np.isfinite(arr.min()) and np.isfinite(arr.max())):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _max_asymmetry(K: np.ndarray) -> float:
    """``max |K - Kᵀ|`` computed over row chunks."""
    worst = 0.0
    for s in range(0, K.shape[0], SYMMETRY_CHUNK):
        diff = K[s : s + SYMMETRY_CHUNK] - K[:, s : s + SYMMETRY_CHUNK].T
        np.abs(diff, out=diff)
        worst = max(worst, float(diff.max()))
    return worst


def _targets(Y: "LabelMatrix | ArrayLike") -> np.ndarray:
    if isinstance(Y, LabelMatrix):
        return Y.Y.astype(np.float64)
    return _as_matrix(Y, "Y").astype(np.float64)


def _gram_and_moment(U: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate UᵀU and UᵀY in float64 over row chunks."""
    p = U.shape[1]
    G = np.zeros((p, p))
    R = np.zeros((p, Y.shape[1]))
    for s in range(0, U.shape[0], _GRAM_CHUNK):
        chunk = np.asarray(U[s : s + _GRAM_CHUNK], dtype=np.float64)
        G += chunk.T @ chunk
        R += chunk.T @ Y[s : s + _GRAM_CHUNK]
    return G, R


def _regularized(G: np.ndarray, gamma: float, copy: bool = True) -> np.ndarray:
    A = np.array(G, dtype=np.float64, copy=copy)
    A[np.diag_indices_from(A)] += gamma
    return A


def solve_spd(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive-definite A by Cholesky.

    A is factorised in place and holds its Cholesky factor afterwards; callers
    pass a private regularised copy.

    Raises:
        numpy.linalg.LinAlgError: If A is not numerically positive definite.
    """
    # A is symmetric: its transpose is a Fortran-ordered view LAPACK overwrites
    # without the copy f2py makes for C-ordered input.
    a = A.T if A.flags.c_contiguous else A
    try:
        factor = linalg.cho_factor(a, lower=True, overwrite_a=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise np.linalg.LinAlgError(
            f"{A.shape[0]}x{A.shape[0]} regularised system with gamma={gamma:g} "
            f"is not numerically positive definite: {e}"
        ) from e
    return linalg.cho_solve(factor, B, check_finite=False)


def encode_labels(labels: ArrayLike, q: int) -> LabelMatrix:
    """One-hot encode 1-based integer labels.

    Args:
        labels: Integer labels in [1, q].
        q: Number of classes.

    Returns:
        LabelMatrix with ``Y[i, labels[i] - 1] == 1``.

    Raises:
        ValueError: If a label is outside [1, q] or not an integer.
    """
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError("labels must be a 1-D vector")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise ValueError("labels must be integers")
        arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 1 or arr.max() > q):
        bad = arr[(arr < 1) | (arr > q)][0]
        raise ValueError(f"label {bad} outside [1, {q}]")
    Y = np.zeros((arr.size, q))
    Y[np.arange(arr.size), arr.astype(np.int64) - 1] = 1.0
    return LabelMatrix(Y=Y, q=q)


def ridge_fit_primal(
    U: ArrayLike, Y: "LabelMatrix | ArrayLike", gamma: float
) -> RidgeModel:
    """Fit ``beta = (UᵀU + γI_p)⁻¹ UᵀY``.

    Raises:
        ValueError: On non-finite entries, empty data, or gamma <= 0.
        numpy.linalg.LinAlgError: If the solve fails.
    """
    _check_gamma(gamma)
    U = _as_matrix(U, "U")
    targets = _targets(Y)
    if U.shape[0] < 1 or U.shape[1] < 1:
        raise ValueError(f"U must have at least one row and column, got {U.shape}")
    if targets.shape[0] != U.shape[0]:
        raise ValueError(f"U has {U.shape[0]} rows but Y has {targets.shape[0]}")
    G, R = _gram_and_moment(U, targets)
    beta = solve_spd(_regularized(G, gamma, copy=False), R, gamma)
    return RidgeModel(beta=beta, gamma=float(gamma), form="primal")


def ridge_fit_dual(
    U: ArrayLike, Y: "LabelMatrix | ArrayLike", gamma: float
) -> RidgeModel:
    """Fit ``beta = Uᵀ (UUᵀ + γI_n)⁻¹ Y`` (inverts an n × n matrix)."""
    _check_gamma(gamma)
    U = _as_matrix(U, "U").astype(np.float64, copy=False)
    targets = _targets(Y)
    if targets.shape[0] != U.shape[0]:
        raise ValueError(f"U has {U.shape[0]} rows but Y has {targets.shape[0]}")
    alpha = solve_spd(_regularized(U @ U.T, gamma, copy=False), targets, gamma)
    return RidgeModel(beta=U.T @ alpha, gamma=float(gamma), form="dual")


def ridge_fit(
    U: ArrayLike, Y: "LabelMatrix | ArrayLike", gamma: float, form: RidgeForm = "auto"
) -> RidgeModel:
    """Fit ridge regression, inverting the smaller of the p × p and n × n systems.

    ``form="auto"`` uses the primal form when p <= n and the dual otherwise.
    """
    n, p = np.shape(U)
    if form == "auto":
        form = "primal" if p <= n else "dual"
    if form == "primal":
        return ridge_fit_primal(U, Y, gamma)
    if form == "dual":
        return ridge_fit_dual(U, Y, gamma)
    raise ValueError(f"unknown ridge form {form!r}")


def ridge_predict(U_test: ArrayLike, model: RidgeModel) -> np.ndarray:
    """Predict ``U_test @ beta``.

    Raises:
        ValueError: If the feature dimension does not match ``beta``.
    """
    U_test = _as_matrix(U_test, "U_test")
    if U_test.shape[1] != model.beta.shape[0]:
        raise ValueError(
            f"U_test has {U_test.shape[1]} features, model expects {model.beta.shape[0]}"
        )
    out = np.empty((U_test.shape[0], model.beta.shape[1]))
    for s in range(0, U_test.shape[0], _GRAM_CHUNK):
        out[s : s + _GRAM_CHUNK] = (
            np.asarray(U_test[s : s + _GRAM_CHUNK], dtype=np.float64) @ model.beta
        )
    return out


def fit_kernel_ridge(
    K: ArrayLike, Y: "LabelMatrix | ArrayLike", gamma: float
) -> KernelRidgePredictor:
    """Solve ``(K + γI) alpha = Y`` for a symmetric kernel matrix K.

    Working memory beyond K is one n × n copy, factorised in place.

    Raises:
        ValueError: If K is not square, not symmetric within 1e−10 (relative
            to max |K|), or gamma <= 0.
        numpy.linalg.LinAlgError: If K + γI is numerically singular.
    """
    _check_gamma(gamma)
    K = _as_matrix(K, "K").astype(np.float64, copy=False)
    if K.shape[0] != K.shape[1]:
        raise ValueError(f"K must be square, got {K.shape}")
    targets = _targets(Y)
    if targets.shape[0] != K.shape[0]:
        raise ValueError(f"K has {K.shape[0]} rows but Y has {targets.shape[0]}")
    if K.size:
        asymmetry = _max_asymmetry(K)
        scale = max(1.0, abs(float(K.max())), abs(float(K.min())))
        if asymmetry > SYMMETRY_TOLERANCE * scale:
            raise ValueError(f"K is not symmetric (max |K - Kᵀ| = {asymmetry:.3e})")
    alpha = solve_spd(_regularized(K, gamma), targets, gamma)
    return KernelRidgePredictor(alpha=alpha, gamma=float(gamma))


def kernel_ridge_predict(
    K: ArrayLike, K_test: ArrayLike, Y: "LabelMatrix | ArrayLike", gamma: float
) -> np.ndarray:
    """Kernel ridge predictions ``K̃ (K + γI)⁻¹ Y``."""
    return fit_kernel_ridge(K, Y, gamma).predict(K_test)


def ridge_predict_dual(
    U: ArrayLike, U_test: ArrayLike, Y: "LabelMatrix | ArrayLike", gamma: float
) -> np.ndarray:
    """Predict through inner products only: ``ŨUᵀ (UUᵀ + γI_n)⁻¹ Y``.

    This is kernel ridge regression with the linear kernel and shares its
    solve path exactly.
    """
    U = _as_matrix(U, "U").astype(np.float64, copy=False)
    U_test = _as_matrix(U_test, "U_test").astype(np.float64, copy=False)
    if U_test.shape[1] != U.shape[1]:
        raise ValueError(
            f"U_test has {U_test.shape[1]} features, U has {U.shape[1]}"
        )
    return kernel_ridge_predict(U @ U.T, U_test @ U.T, Y, gamma)


def argmax_labels(Y_pred: ArrayLike) -> np.ndarray:
    """1-based index of the largest entry of each row; ties go to the lowest index.

    Raises:
        ValueError: If a row contains NaN or there are no columns.
    """
    Y_pred = np.asarray(Y_pred, dtype=np.float64)
    if Y_pred.ndim != 2 or Y_pred.shape[1] < 1:
        raise ValueError(f"Y_pred must be (n, q) with q >= 1, got {Y_pred.shape}")
    if np.isnan(Y_pred).any():
        row = int(np.flatnonzero(np.isnan(Y_pred).any(axis=1))[0])
        raise ValueError(f"NaN in prediction row {row}")
    return np.argmax(Y_pred, axis=1).astype(np.int64) + 1


def classification_error(pred: ArrayLike, truth: ArrayLike) -> float:
    """Fraction of positions where ``pred`` and ``truth`` differ.

    Raises:
        ValueError: On length mismatch or empty input.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("classification_error needs at least one prediction")
    return float(np.mean(pred != truth))
