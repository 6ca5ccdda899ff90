"""Array primitives every other module builds on.

All arrays are float64 numpy in C order. Feature maps are [C, H, W]; video
cubes are [B, H, W]. Every function here is a pure function of its inputs and
bit-deterministic for fixed inputs.
"""

import numpy as np

from .errors import ShapeError


def as_f64(x):
    """Coerce to a C-order float64 array, preserving 0-d scalars."""
    return np.asarray(x, dtype=np.float64, order="C")


def im2col(x, k):
    """Unfold zero-padded k x k patches of x [C,H,W] into a (C*k*k, H*W) matrix.

    Column (i*W + j) holds the patch centered at (i, j), so a convolution is a
    single matrix product against the (C_out, C*k*k) kernel matrix.
    """
    c, h, w = x.shape
    p = k // 2
    xp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, p:p + h, p:p + w] = x
    s0, s1, s2 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(c, k, k, h, w), strides=(s0, s1, s2, s1, s2), writeable=False)
    return win.reshape(c * k * k, h * w)


def col2im(cols, c, h, w, k):
    """Adjoint of im2col: scatter-add a (C*k*k, H*W) matrix back to [C,H,W]."""
    p = k // 2
    acc = np.zeros((c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    win = cols.reshape(c, k, k, h, w)
    for di in range(k):
        for dj in range(k):
            acc[:, di:di + h, dj:dj + w] += win[:, di, dj]
    return acc[:, p:p + h, p:p + w]


def check_conv_shapes(x, kernel, bias):
    """Validate conv2d operand shapes; raises ShapeError on any mismatch."""
    if x.ndim != 3 or kernel.ndim != 4 or bias.ndim != 1:
        raise ShapeError(
            f"conv2d expects x[C,H,W], kernel[O,C,k,k], bias[O]; "
            f"got {x.shape}, {kernel.shape}, {bias.shape}")
    c_out, c_in, k, k2 = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square with odd size, got {k}x{k2}")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d input has {x.shape[0]} channels, kernel expects {c_in}")
    if bias.shape[0] != c_out:
        raise ShapeError(f"conv2d bias has length {bias.shape[0]}, kernel emits {c_out}")


def conv2d(x, kernel, bias):
    """Same-padded 2D cross-correlation.

    x: [C_in, H, W]; kernel: [C_out, C_in, k, k] with k odd; bias: [C_out].
    Zero-fill padding preserves the spatial dims.
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    bias = np.asarray(bias)
    check_conv_shapes(x, kernel, bias)
    c_out, c_in, k, _ = kernel.shape
    _, h, w = x.shape
    cols = im2col(x, k)
    out = kernel.reshape(c_out, c_in * k * k) @ cols + bias[:, None]
    return out.reshape(c_out, h, w)


def avg_pool2(x):
    """Mean over non-overlapping 2x2 blocks: [C,H,W] -> [C,H/2,W/2].

    Summed pairwise so that pooling an upsampled tensor is exactly the identity.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"avg_pool2 expects [C,H,W], got {x.shape}")
    _, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    return ((x[:, 0::2, 0::2] + x[:, 0::2, 1::2])
            + (x[:, 1::2, 0::2] + x[:, 1::2, 1::2])) * 0.25


def upsample2(x):
    """Nearest-neighbor 2x upsampling: [C,H,W] -> [C,2H,2W]."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"upsample2 expects [C,H,W], got {x.shape}")
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def concat_channels(a, b):
    """Stack b's channels after a's. Spatial dims must match; zero channels are fine."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(f"concat_channels expects [C,H,W] pairs, got {a.shape}, {b.shape}")
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels spatial mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=0)
