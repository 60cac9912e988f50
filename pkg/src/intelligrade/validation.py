"""Input-validation helpers shared by the transforms and estimators."""

import numpy as np


def as_float_array(x, name="array", ndim=None):
    """Convert to a finite float64 ndarray, optionally enforcing rank."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_distribution(p, name="distribution", tol=1e-9):
    """Validate a probability vector: nonnegative, sums to 1 within tol."""
    arr = as_float_array(p, name=name, ndim=1)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if arr.min() < -1e-12:
        raise ValueError(f"{name} has negative entries (min {arr.min():g})")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} sums to {total!r}, expected 1 within {tol:g}")
    return arr


def check_labels(y, n_classes, name="labels"):
    """Validate integer class labels in ``[0, n_classes)``."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == arr.astype(np.int64)):
            raise ValueError(f"{name} must be integers")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
        raise ValueError(f"{name} out of range for {n_classes} classes")
    return arr
