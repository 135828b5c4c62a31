"""Input validation helpers used at the public API boundaries."""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ShapeMismatchError


def check_random_state(seed) -> np.random.Generator:
    """Coerce an int seed, Generator or None into a numpy Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (int, np.integer)):
        return np.random.default_rng(seed)
    raise TypeError(f"seed must be None, an int or a Generator, got {type(seed).__name__}")


def check_feature_array(features, name: str = "features") -> np.ndarray:
    """Validate a [T, C, w, h] feature array and return it as float64."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeMismatchError(f"{name} must have 4 axes (T, C, w, h), got {arr.ndim}")
    if min(arr.shape) < 1:
        raise ShapeMismatchError(f"{name} has an empty axis: shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_frame_vectors(vectors, name: str = "frame vectors") -> np.ndarray:
    """Validate a [L, D] per-frame feature matrix."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must have 2 axes (frames, dims), got {arr.ndim}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_scores(scores, length: int | None = None, name: str = "scores") -> np.ndarray:
    """Validate a 1-D probability/score vector with entries in [0, 1]."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"{name} must be 1-D, got {arr.ndim} axes")
    if length is not None and arr.shape[0] != length:
        raise ShapeMismatchError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def check_mask(mask, length: int | None = None, name: str = "mask") -> np.ndarray:
    """Validate a binary 0/1 frame mask, returned as int64."""
    arr = np.asarray(mask)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"{name} must be 1-D, got {arr.ndim} axes")
    if length is not None and arr.shape[0] != length:
        raise ShapeMismatchError(f"{name} has length {arr.shape[0]}, expected {length}")
    out = arr.astype(np.int64, copy=True)
    if not np.array_equal(out, np.asarray(arr, dtype=np.float64)):
        raise ValueError(f"{name} must contain integers")
    if out.size and not np.isin(out, (0, 1)).all():
        raise ValueError(f"{name} must be binary 0/1")
    return out


def check_fraction(value, name: str = "fraction") -> float:
    """Validate a fraction in (0, 1]."""
    if not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a number, got {type(value).__name__}")
    value = float(value)
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value}")
    return value
