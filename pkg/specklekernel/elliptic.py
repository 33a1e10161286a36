"""Complete elliptic integrals and the elliptic kernel of modulus random features.

The kernel is the N -> infinity limit of ``(1/N) <|W u|, |W v|>`` for a complex
Gaussian W whose real and imaginary parts are i.i.d. standard normal:

    k(u, v) = sqrt(<u,u><v,v>) / 2 * { -sin²θ K(cos²θ) + 2 E(cos²θ)
              + |sinθ| (2 E(-cos²θ/sin²θ) - K(-cos²θ/sin²θ)) }

with K, E taken in the *parameter* convention m (not the modulus k = sqrt(m)).
"""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy import special

from .runner import run_jobs

logger = logging.getLogger(__name__)

K_PARAM_LIMIT = 1.0 - 1e-15
E_PARAM_LIMIT = 1.0

# Below this |sinθ| the negative parameter -cos²θ/sin²θ exceeds 1e12 in size and
# the closed form switches to its small-angle expansion.
SERIES_SIN_THRESHOLD = 1e-6

KERNEL_BLOCK_ROWS = 512
# Upper bound on block-sized float64 arrays alive at once while one kernel block
# is evaluated (inner products, norms, cosines, and the closed-form terms).
KERNEL_BLOCK_TEMPORARIES = 16


def _as_parameter(m: ArrayLike, limit: float, name: str) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: parameter m must be finite, got {m!r}")
    if np.any(arr > limit):
        worst = float(np.max(arr))
        raise ValueError(f"{name}: parameter m must satisfy m <= {limit!r}, got {worst!r}")
    return arr


def _unwrap(arr: np.ndarray, values: np.ndarray) -> float | np.ndarray:
    return float(values) if arr.ndim == 0 else values


def complete_K(m: ArrayLike) -> float | np.ndarray:
    """Complete elliptic integral of the first kind, ∫₀^{π/2} dt / √(1 − m sin²t).

    Args:
        m: Parameter (scalar or array), finite and at most 1 − 1e−15.

    Returns:
        K(m) as a float for scalar input, otherwise an array of the same shape.

    Raises:
        ValueError: If any m is non-finite or exceeds the domain limit.
    """
    arr = _as_parameter(m, K_PARAM_LIMIT, "complete_K")
    return _unwrap(arr, special.ellipk(arr))


def complete_E(m: ArrayLike) -> float | np.ndarray:
    """Complete elliptic integral of the second kind, ∫₀^{π/2} √(1 − m sin²t) dt.

    Args:
        m: Parameter (scalar or array), finite and at most 1.

    Returns:
        E(m) as a float for scalar input, otherwise an array of the same shape.

    Raises:
        ValueError: If any m is non-finite or greater than 1.
    """
    arr = _as_parameter(m, E_PARAM_LIMIT, "complete_E")
    return _unwrap(arr, special.ellipe(arr))


@dataclass(frozen=True)
class KernelPair:
    """Two vectors with their norms and the cosine of the angle between them."""

    u: np.ndarray
    v: np.ndarray
    norm_u: float
    norm_v: float
    cos_theta: float

    @classmethod
    def from_vectors(cls, u: ArrayLike, v: ArrayLike) -> "KernelPair":
        """Build a pair, computing norms and a clamped cosine.

        Raises:
            ValueError: On length mismatch, non-vector input, or NaN entries.
        """
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if u.ndim != 1 or v.ndim != 1:
            raise ValueError("kernel arguments must be 1-D vectors")
        if u.shape != v.shape:
            raise ValueError(f"vector length mismatch: {u.shape[0]} != {v.shape[0]}")
        if np.isnan(u).any() or np.isnan(v).any():
            raise ValueError("kernel arguments contain NaN")
        norm_u = float(np.sqrt(np.dot(u, u)))
        norm_v = float(np.sqrt(np.dot(v, v)))
        if norm_u > 0 and norm_v > 0:
            cos_theta = float(np.clip(np.dot(u, v) / (norm_u * norm_v), -1.0, 1.0))
        else:
            cos_theta = 0.0
        return cls(u=u, v=v, norm_u=norm_u, norm_v=norm_v, cos_theta=cos_theta)


def _series_braces(sin2: np.ndarray) -> np.ndarray:
    # Small-angle expansion of the brace expression: the logarithmic terms of
    # K and E cancel at first order, leaving 4 - sin²θ + O(sin⁴θ log sinθ).
    return 4.0 - sin2


def _closed_form_braces(cos2: np.ndarray, sin2: np.ndarray) -> np.ndarray:
    sin_abs = np.sqrt(sin2)
    m_neg = -cos2 / sin2
    return (
        -sin2 * complete_K(cos2)
        + 2.0 * complete_E(cos2)
        + sin_abs * (2.0 * complete_E(m_neg) - complete_K(m_neg))
    )


def kernel_from_geometry(norm_product: ArrayLike, cos_theta: ArrayLike) -> np.ndarray:
    """Evaluate the elliptic kernel from ``‖u‖·‖v‖`` and ``cosθ`` elementwise.

    Entries with a zero norm product evaluate to 0.
    """
    norm_product = np.asarray(norm_product, dtype=np.float64)
    cos2 = np.square(np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0))
    cos2, norm_product = np.broadcast_arrays(cos2, norm_product)
    sin2 = np.maximum(1.0 - cos2, 0.0)

    braces = np.empty(cos2.shape)
    near = np.sqrt(sin2) < SERIES_SIN_THRESHOLD
    far = ~near
    if far.any():
        braces[far] = _closed_form_braces(cos2[far], sin2[far])
    if near.any():
        braces[near] = _series_braces(sin2[near])
    return 0.5 * norm_product * braces


def elliptic_kernel(pair: KernelPair) -> float:
    """Elliptic kernel k(u, v) of a vector pair.

    The value is symmetric in (u, v), invariant under v -> -v, homogeneous of
    degree one in each argument, and 0 when either vector is zero.

    Args:
        pair: Vectors with precomputed norms and cosine.

    Returns:
        Nonnegative kernel value.
    """
    norm_product = pair.norm_u * pair.norm_v
    if norm_product == 0.0:
        return 0.0
    return float(kernel_from_geometry(norm_product, pair.cos_theta))


def _as_rows(A: ArrayLike, name: str) -> np.ndarray:
    arr = np.asarray(A, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if np.isnan(arr).any():
        raise ValueError(f"{name} contains NaN")
    return arr


def _row_norms(A: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", A, A))


def _kernel_block(
    A: np.ndarray, norms_a: np.ndarray, B: np.ndarray, norms_b: np.ndarray
) -> np.ndarray:
    cos = A @ B.T
    norm_product = np.outer(norms_a, norms_b)
    # Pairs with a zero vector keep their inner product, which is 0.
    np.divide(cos, norm_product, out=cos, where=norm_product > 0)
    return kernel_from_geometry(norm_product, cos)


def kernel_workspace_bytes(
    rows: int, cols: int, block_rows: int = KERNEL_BLOCK_ROWS, workers: int = 1
) -> int:
    """Peak temporary bytes of :func:`elliptic_kernel_matrix` beyond its output."""
    if rows == 0 or cols == 0:
        return 0
    n_blocks = -(-rows // block_rows)
    concurrent = min(workers, n_blocks)
    return 8 * KERNEL_BLOCK_TEMPORARIES * min(block_rows, rows) * cols * concurrent


def elliptic_kernel_matrix(
    A: ArrayLike,
    B: ArrayLike | None = None,
    *,
    block_rows: int = KERNEL_BLOCK_ROWS,
    workers: int = 1,
) -> np.ndarray:
    """Kernel matrix with entries k(A_i, B_j).

    When ``B`` is omitted or is the same object as ``A`` only the upper
    triangle is evaluated and mirrored, so the result is exactly symmetric.

    Args:
        A: Matrix of shape (n, p).
        B: Matrix of shape (m, p); defaults to ``A``.
        block_rows: Rows of ``A`` evaluated per job.
        workers: Threads used for the row blocks.

    Returns:
        Array of shape (n, m).

    Raises:
        ValueError: On mismatched column counts or NaN entries.
    """
    symmetric = B is None or B is A
    A = _as_rows(A, "A")
    B = A if symmetric else _as_rows(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(
            f"column mismatch: A has {A.shape[1]} columns, B has {B.shape[1]}"
        )
    n, m = A.shape[0], B.shape[0]
    K = np.zeros((n, m))
    if n == 0 or m == 0:
        return K

    norms_a = _row_norms(A)
    norms_b = norms_a if symmetric else _row_norms(B)
    blocks = [(s, min(s + block_rows, n)) for s in range(0, n, block_rows)]

    # Each job writes its own rows (and, when symmetric, the mirrored columns);
    # the written regions of different jobs are disjoint.
    if symmetric:

        def upper(s: int, e: int) -> None:
            blk = _kernel_block(A[s:e], norms_a[s:e], A[s:], norms_a[s:])
            diag = blk[:, : e - s]
            blk[:, : e - s] = np.triu(diag) + np.triu(diag, 1).T
            K[s:e, s:] = blk
            K[s:, s:e] = blk.T

        jobs = [lambda s=s, e=e: upper(s, e) for s, e in blocks]
    else:

        def rows(s: int, e: int) -> None:
            K[s:e] = _kernel_block(A[s:e], norms_a[s:e], B, norms_b)

        jobs = [lambda s=s, e=e: rows(s, e) for s, e in blocks]
    run_jobs(jobs, workers, "kernel blocks")

    logger.debug(f"Elliptic kernel matrix {n}x{m} (symmetric={symmetric})")
    return K
