"""Array primitives shared by the rest of the package.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. This module only adds the handful of selection and reduction helpers
that need a fixed, testable contract.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


def as_tensor(values, copy: bool = True) -> np.ndarray:
    """C-contiguous float64 array; ``copy=False`` copies only when it has to."""
    if copy:
        return np.array(values, dtype=DTYPE, order="C")
    return np.ascontiguousarray(values, dtype=DTYPE)


def frozen(values) -> np.ndarray:
    """Read-only float64 copy, for arrays shared between workers."""
    arr = as_tensor(values)
    arr.flags.writeable = False
    return arr


def top_k_indices(values, k: int) -> list[int]:
    """Indices of the ``k`` largest entries, largest first.

    Ties go to the lower index.
    """
    v = np.asarray(values, dtype=DTYPE).ravel()
    if not 1 <= k <= v.size:
        raise ValueError(f"k must be in [1, {v.size}], got {k}")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    # stable sort on the negated scores keeps lower indices first among ties
    order = np.argsort(-v, kind="stable")
    return [int(i) for i in order[:k]]


def reduce_over_axes(t, keep_axis: int) -> np.ndarray:
    """Sum every axis except ``keep_axis``."""
    arr = np.asarray(t, dtype=DTYPE)
    if not -arr.ndim <= keep_axis < arr.ndim:
        raise ValueError(f"axis {keep_axis} invalid for shape {arr.shape}")
    keep_axis %= arr.ndim
    moved = np.moveaxis(arr, keep_axis, 0)
    return moved.reshape(moved.shape[0], -1).sum(axis=1)
