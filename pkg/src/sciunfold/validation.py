"""Shared input validation for user-facing entry points.

These helpers coerce to float64 numpy arrays and raise the package's error
types with the offending name in the message, so estimators and the CLI
fail the same way."""

import numpy as np

from .errors import ContractError, ShapeError


def as_array(x, name="array"):
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError):
        raise ContractError(f"{name} is not numeric")
    if arr.size == 0:
        raise ContractError(f"{name} is empty")
    if not np.isfinite(arr).all():
        raise ContractError(f"{name} contains non-finite values")
    return arr


def as_frame(x, name="frame"):
    """A single 2-d measurement or image."""
    arr = as_array(x, name)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-d [H,W], got shape {arr.shape}")
    return arr


def as_cube(x, name="cube"):
    """A video cube [B,H,W]."""
    arr = as_array(x, name)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be 3-d [B,H,W], got shape {arr.shape}")
    return arr


def as_mask_stack(x, name="masks"):
    arr = as_cube(x, name)
    if arr.min() < 0:
        raise ContractError(f"{name} must be nonnegative")
    if not arr.any():
        raise ContractError(f"{name} is all zero")
    return arr


def require_unit_range(x, name="values"):
    arr = as_array(x, name)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ContractError(
            f"{name} must lie in [0,1], got [{arr.min():.4g}, {arr.max():.4g}]")
    return arr
