"""Dense float64 matrix primitives shared by the model and the losses.

A "matrix" throughout the package is a 2-D C-contiguous ``float64`` ndarray
(row-major). All public operations validate their inputs and guarantee finite
outputs; reductions rely on numpy's fixed left-to-right accumulation so
results are reproducible bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeMismatchError, ZeroRowError

# Rows with norm at or below this are treated as directionless.
ZERO_NORM_EPS = 1e-12


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting other ranks."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got ndim={m.ndim}")
    return m


def check_finite(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.linalg.norm(m, axis=1)


def l2_normalize_rows(m) -> np.ndarray:
    """Scale each row to unit Euclidean norm.

    Raises ZeroRowError when any row norm is <= 1e-12; direction would be
    undefined.
    """
    m = check_finite(as_matrix(m))
    norms = row_norms(m)
    if np.any(norms <= ZERO_NORM_EPS):
        bad = int(np.argmax(norms <= ZERO_NORM_EPS))
        raise ZeroRowError(f"row {bad} has norm {norms[bad]:.3e} <= {ZERO_NORM_EPS}")
    return m / norms[:, None]


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax, stabilized by per-row max subtraction."""
    m = check_finite(as_matrix(m))
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def matmul(a, b) -> np.ndarray:
    """Matrix product with shape validation and a finite-output check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    return check_finite(out, "matmul result")
