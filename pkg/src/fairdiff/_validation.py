"""Small input-validation helpers shared across the package."""

import numpy as np

SIMPLEX_ATOL = 1e-6


class NotFittedError(RuntimeError):
    """Raised when a fit-dependent method is called before fit."""


def check_fitted(obj, attr):
    if getattr(obj, attr, None) is None:
        raise NotFittedError(
            f"{type(obj).__name__} is not fitted; call fit() first"
        )


def as_2d(x, name="X"):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    return arr


def check_simplex(p, name="p", atol=SIMPLEX_ATOL):
    """Validate that ``p`` rows are probability vectors."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr < -atol):
        raise ValueError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=atol):
        raise ValueError(f"{name} rows must sum to 1 (got sums {sums})")
    return arr


def check_timestep(t, timesteps):
    """Validate scalar or per-row integer timesteps against [1, T]."""
    arr = np.asarray(t)
    if arr.size and (arr.min() < 1 or arr.max() > timesteps):
        raise ValueError(f"timestep t={t} outside [1, {timesteps}]")
    return t


def check_same_width(a, b, name_a="a", name_b="b"):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(
            f"width mismatch: {name_a} has shape {a.shape}, {name_b} has shape {b.shape}"
        )
    return a, b
