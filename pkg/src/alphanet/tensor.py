"""Dense tensor values and primitive numeric operations.

Tensors are plain numpy arrays, row-major, float32 by default.  A
float64 mode exists solely for finite-difference gradient checking; the
helpers here pick the dtype from a single switch so every layer stays
consistent within a run.
"""

from __future__ import annotations

import numpy as np

__all__ = ["DTYPE32", "DTYPE64", "ShapeError", "as_tensor", "matmul", "check_finite"]

DTYPE32 = np.float32
DTYPE64 = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def as_tensor(x, dtype=DTYPE32) -> np.ndarray:
    return np.asarray(x, dtype=dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check naming both operands."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def check_finite(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Raise if the array contains NaN or Inf; returns the array unchanged."""
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {name}")
    return x
