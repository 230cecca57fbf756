"""Array conventions for state batches.

A state batch is a plain float ndarray of shape (n, d): n samples of a
d-dimensional state.  A single vector of shape (d,) is accepted
anywhere a batch is and is promoted to shape (1, d).  Source points
may also be a single (d,) vector shared by the whole batch.
"""

from __future__ import annotations

import numpy as np

__all__ = ["as_batch", "match_source"]


def as_batch(x, name: str = "x") -> np.ndarray:
    """Validate and return a (n, d) float64 batch."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have shape (n, d), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def match_source(x: np.ndarray, source, name: str = "source") -> np.ndarray:
    """Validate a source-point array against a batch.

    Accepts shape (d,) (broadcast over rows) or the batch shape (n, d).
    """
    arr = np.asarray(source, dtype=np.float64)
    if arr.ndim == 1:
        if arr.shape[0] != x.shape[1]:
            raise ValueError(
                f"{name} has dimension {arr.shape[0]}, batch has {x.shape[1]}"
            )
        arr = arr[None, :]
    elif arr.shape != x.shape and arr.shape != (1, x.shape[1]):
        raise ValueError(
            f"{name} shape {arr.shape} does not match batch shape {x.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr
