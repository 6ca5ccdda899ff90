"""Independent oracles shared by the test suite.

Everything here is deliberately naive (nested loops, dense matrices, central
differences) so it cannot share bugs with the vectorized implementations it
checks.
"""

import numpy as np


def naive_conv2d(x, kernel, bias):
    """Sliding-window cross-correlation with zero padding, one output element at a time."""
    c_out, c_in, k, _ = kernel.shape
    _, h, w = x.shape
    p = k // 2
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = bias[o]
                for c in range(c_in):
                    for di in range(k):
                        for dj in range(k):
                            ii, jj = i + di - p, j + dj - p
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += kernel[o, c, di, dj] * x[c, ii, jj]
                out[o, i, j] = acc
    return out


def naive_avg_pool2(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ci in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ci, i, j] = np.mean(x[ci, 2 * i:2 * i + 2, 2 * j:2 * j + 2])
    return out


def naive_upsample2(x):
    c, h, w = x.shape
    out = np.zeros((c, 2 * h, 2 * w))
    for ci in range(c):
        for i in range(2 * h):
            for j in range(2 * w):
                out[ci, i, j] = x[ci, i // 2, j // 2]
    return out


def dense_H(masks):
    """Explicit sensing matrix [n, n*B] built from per-frame diagonal blocks."""
    b, h, w = masks.shape
    n = h * w
    mat = np.zeros((n, n * b))
    for fb in range(b):
        mat[:, fb * n:(fb + 1) * n] = np.diag(masks[fb].ravel())
    return mat


def finite_diff(f, arr, h=1e-5):
    """Central-difference gradient of scalar f with respect to every element of arr.

    arr is mutated in place during probing and restored afterwards.
    """
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        grad.ravel()[i] = (hi - lo) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rel=1e-4, absolute=1e-7, label=""):
    """Per-element |a - n| <= max(rel * |n|, absolute)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    tol = np.maximum(rel * np.abs(numeric), absolute)
    err = np.abs(analytic - numeric)
    if not np.all(err <= tol):
        worst = np.unravel_index(np.argmax(err - tol), err.shape)
        raise AssertionError(
            f"gradient mismatch{' at ' + label if label else ''}: element {worst} "
            f"analytic={analytic[worst]:.6e} numeric={numeric[worst]:.6e} "
            f"err={err[worst]:.3e} tol={tol[worst]:.3e}")
