"""The sensing process: per-frame masks fold a video cube into one coded shot.

The sensing operator H is only ever applied (apply_H / apply_Ht); its dense
form is never materialized. Because H H^T is diagonal with entries
psi = sum_b C_b^2, every solver downstream gets its closed forms from the two
cached planes psi and mask_sum.
"""

import numpy as np

from . import autodiff as ad
from . import ops
from .errors import ContractError, DegenerateMaskError, ShapeError


class SciSystem:
    """Immutable bundle of the mask stack and its derived planes."""

    def __init__(self, masks):
        masks = ops.as_f64(masks)
        if masks.ndim != 3:
            raise ShapeError(f"masks must be [B,H,W], got {masks.shape}")
        if masks.shape[0] < 1:
            raise ContractError("mask stack needs at least one frame")
        if masks.min() < 0.0 or masks.max() > 1.0:
            raise ContractError(
                f"mask values must lie in [0,1], got [{masks.min()}, {masks.max()}]")
        self.masks = masks
        self.psi = (masks * masks).sum(axis=0)
        self.mask_sum = masks.sum(axis=0)
        for arr in (self.masks, self.psi, self.mask_sum):
            arr.setflags(write=False)

    @property
    def b(self):
        return self.masks.shape[0]

    @property
    def frame_shape(self):
        return self.masks.shape[1:]

    def sliced(self, b):
        """Subsystem using the first b masks (for shorter measurement bursts)."""
        if not 1 <= b <= self.b:
            raise ContractError(f"cannot slice {b} masks from a stack of {self.b}")
        return SciSystem(self.masks[:b])

    def __repr__(self):
        return f"SciSystem(b={self.b}, frame={self.frame_shape})"


def _check_cube(x, system, what):
    shape = x.shape if isinstance(x, ad.Var) else np.shape(x)
    if tuple(shape) != system.masks.shape:
        raise ShapeError(f"{what} has shape {tuple(shape)}, masks are {system.masks.shape}")


def _check_frame(y, system, what):
    shape = y.shape if isinstance(y, ad.Var) else np.shape(y)
    if tuple(shape) != system.frame_shape:
        raise ShapeError(f"{what} has shape {tuple(shape)}, frames are {system.frame_shape}")


def apply_H(x, system):
    """Y = sum_b C_b * x_b; works on plain cubes and traced ones."""
    _check_cube(x, system, "apply_H input")
    return (system.masks * x).sum(axis=0)


def apply_Ht(y, system):
    """(H^T y)_b = C_b * y."""
    _check_frame(y, system, "apply_Ht input")
    return system.masks * y


def encode(scene, system, noise_sigma=0.0, rng=None):
    """One coded measurement of a scene, optionally with additive Gaussian noise."""
    scene = ops.as_f64(scene)
    _check_cube(scene, system, "scene")
    if noise_sigma < 0:
        raise ContractError(f"noise_sigma must be non-negative, got {noise_sigma}")
    y = apply_H(scene, system)
    if noise_sigma > 0:
        if rng is None:
            raise ContractError("encode with noise_sigma > 0 needs an rng")
        y = y + rng.normal(y.shape, std=noise_sigma)
    return y


def normalized_measurement(y, system):
    """Ybar = y / sum_b C_b. Fails loudly on pixels no mask ever exposes."""
    _check_frame(y, system, "measurement")
    dead = np.argwhere(system.mask_sum == 0.0)
    if dead.size:
        i, j = dead[0]
        raise DegenerateMaskError(
            f"pixel ({i}, {j}) is never exposed by any mask "
            f"({len(dead)} such pixels); normalization is undefined")
    return y / system.mask_sum


def random_masks(b, h, w, rng, repair=True, alive_prefix=None):
    """Bernoulli(0.5) binary masks.

    With repair=True, any pixel left dark in every frame gets one frame forced
    to 1 (frame (i+j) mod B, a fixed choice so the result depends only on the
    rng stream). This keeps mask_sum and psi strictly positive, which the
    normalized measurement and the GAP correction divide by.

    alive_prefix=k additionally guarantees coverage within the first k frames,
    so every leading slice of at least k frames stays non-degenerate (training
    measures shorter clips through such slices).
    """
    prefix = b if alive_prefix is None else int(alive_prefix)
    if not 1 <= prefix <= b:
        raise ContractError(f"alive_prefix must lie in 1..{b}, got {prefix}")
    masks = rng.bernoulli(0.5, (b, h, w))
    if repair:
        dead = masks[:prefix].sum(axis=0) == 0.0
        if dead.any():
            ii, jj = np.nonzero(dead)
            masks[(ii + jj) % prefix, ii, jj] = 1.0
    return masks
