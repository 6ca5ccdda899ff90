"""PSNR and SSIM for frames in [0,1], plus per-cube report assembly."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .io import worker_count

PSNR_CAP = 100.0


def psnr(a, b):
    """10*log10(1/MSE) for unit-range frames, capped at 100 dB so identical
    frames stay finite in reports."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean structural similarity with Gaussian weighting over valid windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeError(f"ssim expects 2-d frames, got {a.shape}")
    if min(a.shape) < window:
        raise ContractError(f"frame {a.shape} smaller than {window}x{window} window")
    w = _gaussian_window(window, sigma)

    def local_means(x):
        patches = np.lib.stride_tricks.sliding_window_view(x, (window, window))
        return np.tensordot(patches, w, axes=([2, 3], [0, 1]))

    mu_a = local_means(a)
    mu_b = local_means(b)
    saa = local_means(a * a) - mu_a * mu_a
    sbb = local_means(b * b) - mu_b * mu_b
    sab = local_means(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-frame scores with their averages and the timed solve."""
    psnr_db: list
    ssim: list
    mean_psnr_db: float
    mean_ssim: float
    seconds: float


def score_cube(recon, truth, seconds=0.0):
    """Score a reconstruction frame by frame; both cubes are clipped to [0,1]
    first (metrics are defined on the normalized range)."""
    recon = np.clip(np.asarray(recon, dtype=np.float64), 0.0, 1.0)
    truth = np.clip(np.asarray(truth, dtype=np.float64), 0.0, 1.0)
    if recon.shape != truth.shape:
        raise ShapeError(f"recon {recon.shape} vs truth {truth.shape}")
    if recon.ndim != 3:
        raise ShapeError(f"expected [B,H,W] cubes, got {recon.shape}")

    def score_frame(i):
        return psnr(recon[i], truth[i]), ssim(recon[i], truth[i])

    # frames are independent; ELP_THREADS (via worker_count) caps the pool,
    # and ordered collection keeps results identical to the serial loop
    workers = min(worker_count(), recon.shape[0])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(score_frame, range(recon.shape[0])))
    else:
        scored = [score_frame(i) for i in range(recon.shape[0])]
    psnrs = [p for p, _ in scored]
    ssims = [s for _, s in scored]
    return MetricReport(psnr_db=psnrs, ssim=ssims,
                        mean_psnr_db=float(np.mean(psnrs)),
                        mean_ssim=float(np.mean(ssims)),
                        seconds=float(seconds))
