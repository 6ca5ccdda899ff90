"""Denoisers realizing the implicit prior of the v-subproblem.

Three families plug into the unfolded solver:

- denoise_tv: anisotropic total variation via projected dual ascent; the
  classic baseline and the inference-only prior.
- CnnPrior / denoise_cnn: a fully convolutional U-net whose input stacks the
  B_max tiled frames of u with a noise plane (the stage's gamma2) and the
  normalized measurement, B_max + 2 channels in all. Per-scale local features
  accumulate across stages in a FeatureLedger; every prior after the first
  concatenates the running sum into its encoder, so features learned by early
  stages stay visible to late ones.
- IdentityPrior / TvPrior: tiny config objects the solver accepts in place of
  a network.

The CNN output is residual (v = u + correction), so a zero-weight network is
exactly the identity.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import ops
from .errors import ContractError, ShapeError


def _dy(v):
    return v[:, 1:, :] - v[:, :-1, :]


def _dx(v):
    return v[:, :, 1:] - v[:, :, :-1]


def _div_t(p, q, shape):
    """Adjoint of the stacked difference operator (D_y, D_x)."""
    out = np.zeros(shape)
    out[:, 1:, :] += p
    out[:, :-1, :] -= p
    out[:, :, 1:] += q
    out[:, :, :-1] -= q
    return out


def tv_objective(v, ref, weight):
    """weight * anisotropic TV(v) + 0.5 * ||v - ref||^2."""
    tv = np.abs(_dy(v)).sum() + np.abs(_dx(v)).sum()
    return weight * tv + 0.5 * ((v - ref) ** 2).sum()


def denoise_tv(u, weight, iters):
    """Approximate prox of anisotropic TV by clipped dual ascent.

    Never returns a point with a worse TV+fidelity objective than u itself.
    Weights below 1e-12 mean an exact identity.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 3:
        raise ShapeError(f"denoise_tv expects [B,H,W], got {u.shape}")
    if weight < 0:
        raise ContractError(f"tv weight must be positive, got {weight}")
    if iters < 1:
        raise ContractError(f"tv iters must be a positive integer, got {iters}")
    if weight < 1e-12:
        return u.copy()
    step = 0.125  # 1 / lambda_max(D D^T) for the 2D difference operator
    p = np.zeros((u.shape[0], u.shape[1] - 1, u.shape[2]))
    q = np.zeros((u.shape[0], u.shape[1], u.shape[2] - 1))
    for _ in range(iters):
        v = u - _div_t(p, q, u.shape)
        p = np.clip(p + step * _dy(v), -weight, weight)
        q = np.clip(q + step * _dx(v), -weight, weight)
    v = u - _div_t(p, q, u.shape)
    if tv_objective(v, u, weight) > tv_objective(u, u, weight):
        return u.copy()
    return v


@dataclass(frozen=True)
class TvPrior:
    """Stage denoiser config: run denoise_tv with these settings."""
    weight: float = 0.07
    iters: int = 5


@dataclass(frozen=True)
class IdentityPrior:
    """Stage denoiser config: v = u (useful for exactly invertible systems)."""


@dataclass(frozen=True)
class FeatureLedger:
    """Running per-scale sums of encoder local features across priors."""
    features: tuple

    def shapes(self):
        return tuple(f.shape if hasattr(f, "shape") else None for f in self.features)


@dataclass
class DenoiserInput:
    """What every prior network sees: the estimate to clean, the stage's
    penalty level as a plane, and the normalized measurement."""
    u: object          # [B_actual, H, W]
    noise_map: object  # [H, W], every element the stage's gamma2
    y_norm: object     # [H, W]


class CnnPrior:
    """U-net denoiser, fully convolutional, no batch normalization.

    first=True builds the topology used by the opening prior of a run (no
    incoming ledger, so encoder fuse convolutions see w_j channels); later
    priors see 2*w_j after concatenating the ledger. The head convolution is
    zero-initialized so a fresh model starts as the identity refinement.
    """

    def __init__(self, b_max, widths=(8, 16, 32), convs_per_scale=2, kernel=3,
                 first=True, rng=None, name="prior"):
        if b_max < 1:
            raise ContractError(f"b_max must be >= 1, got {b_max}")
        if not widths:
            raise ContractError("widths must be non-empty")
        if convs_per_scale < 2:
            raise ContractError(f"convs_per_scale must be >= 2, got {convs_per_scale}")
        if kernel % 2 == 0:
            raise ContractError(f"kernel must be odd, got {kernel}")
        self.b_max = int(b_max)
        self.widths = tuple(int(w) for w in widths)
        self.convs_per_scale = int(convs_per_scale)
        self.kernel = int(kernel)
        self.first = bool(first)
        self.name = name
        self.params = {}
        self._build(rng)

    @property
    def n_scales(self):
        return len(self.widths)

    @property
    def spatial_divisor(self):
        return 2 ** (self.n_scales - 1)

    def _add_conv(self, label, c_in, c_out, rng, zero=False):
        k = self.kernel
        fan_in = c_in * k * k
        if zero or rng is None:
            w = np.zeros((c_out, c_in, k, k))
        else:
            w = rng.normal((c_out, c_in, k, k), std=np.sqrt(2.0 / fan_in))
        self.params[f"{self.name}_{label}_w"] = ad.Parameter(w, f"{self.name}_{label}_w")
        self.params[f"{self.name}_{label}_b"] = ad.Parameter(
            np.zeros(c_out), f"{self.name}_{label}_b")

    def _build(self, rng):
        prev = self.b_max + 2
        for j, w in enumerate(self.widths):
            self._add_conv(f"enc{j}_local", prev, w, rng)
            fuse_in = w if self.first else 2 * w
            for t in range(1, self.convs_per_scale):
                self._add_conv(f"enc{j}_fuse{t}", fuse_in, w, rng)
                fuse_in = w
            prev = w
        for j in range(self.n_scales - 2, -1, -1):
            self._add_conv(f"dec{j}_reduce", self.widths[j + 1], self.widths[j], rng)
            self._add_conv(f"dec{j}_fuse", 2 * self.widths[j], self.widths[j], rng)
        self._add_conv("head", self.widths[0], self.b_max, rng, zero=True)

    def parameters(self):
        return list(self.params.values())

    def copy_from(self, other):
        """Copy every parameter whose shape matches; returns the skipped names."""
        skipped = []
        for name, p in self.params.items():
            src = other.params.get(name.replace(self.name, other.name, 1))
            if src is not None and src.value.shape == p.value.shape:
                p.value[...] = src.value
            else:
                skipped.append(name)
        return skipped

    def _get(self, label, lift):
        w = self.params[f"{self.name}_{label}_w"]
        b = self.params[f"{self.name}_{label}_b"]
        if lift is None:
            return w.value, b.value
        return lift(w), lift(b)

    def forward(self, x, ledger_in, lift=None):
        """x: [b_max+2, H, W] stacked input. Returns (correction [b_max,H,W],
        new ledger features)."""
        skips = []
        new_feats = []
        for j in range(self.n_scales):
            w, b = self._get(f"enc{j}_local", lift)
            local = ad.relu(ad.conv2d(x, w, b))
            if ledger_in is None:
                feat = local
                new_feats.append(local)
            else:
                feat = ad.concat_channels([local, ledger_in.features[j]])
                new_feats.append(ledger_in.features[j] + local)
            for t in range(1, self.convs_per_scale):
                w, b = self._get(f"enc{j}_fuse{t}", lift)
                feat = ad.relu(ad.conv2d(feat, w, b))
            skips.append(feat)
            if j < self.n_scales - 1:
                x = ad.avg_pool2(feat)
        d = skips[-1]
        for j in range(self.n_scales - 2, -1, -1):
            w, b = self._get(f"dec{j}_reduce", lift)
            d = ad.relu(ad.conv2d(ad.upsample2(d), w, b))
            w, b = self._get(f"dec{j}_fuse", lift)
            d = ad.relu(ad.conv2d(ad.concat_channels([d, skips[j]]), w, b))
        w, b = self._get("head", lift)
        return ad.conv2d(d, w, b), new_feats

    def __repr__(self):
        return (f"CnnPrior(name={self.name!r}, b_max={self.b_max}, "
                f"widths={self.widths}, first={self.first})")


def _shape_of(x):
    return tuple(x.shape) if hasattr(x, "shape") else None


def denoise_cnn(inp, prior, ledger_in=None, lift=None):
    """Run one CNN prior. Returns (v, ledger_out).

    The u frames are tiled cyclically up to the prior's b_max, pushed through
    the network together with the noise and measurement planes, and the b_max
    output channels are folded back to B_actual by averaging each frame's
    copies. v = u + folded correction.
    """
    u = inp.u
    shape = _shape_of(u)
    if shape is None or len(shape) != 3:
        raise ShapeError(f"denoiser input u must be [B,H,W], got {shape}")
    b_actual, h, w = shape
    if h % prior.spatial_divisor or w % prior.spatial_divisor:
        raise ShapeError(
            f"spatial dims {h}x{w} must be divisible by {prior.spatial_divisor} "
            f"for {prior.n_scales} scales")
    if b_actual > prior.b_max:
        raise ContractError(f"{b_actual} frames exceed the prior's b_max={prior.b_max}")
    if (ledger_in is None) != prior.first:
        raise ContractError(
            "first prior runs without a ledger, later priors require one "
            f"(prior.first={prior.first}, ledger given: {ledger_in is not None})")
    if ledger_in is not None:
        if len(ledger_in.features) != prior.n_scales:
            raise ShapeError(
                f"ledger has {len(ledger_in.features)} scales, prior has {prior.n_scales}")
        for j, feat in enumerate(ledger_in.features):
            expect = (prior.widths[j], h // 2 ** j, w // 2 ** j)
            if _shape_of(feat) != expect:
                raise ShapeError(
                    f"ledger scale {j} has shape {_shape_of(feat)}, expected {expect}")
    noise_plane = ad.broadcast_to(inp.noise_map, (1, h, w))
    y_plane = ad.broadcast_to(inp.y_norm, (1, h, w))
    x = ad.concat_channels([ad.tile_frames(u, prior.b_max), noise_plane, y_plane])
    correction, new_feats = prior.forward(x, ledger_in, lift)
    v = u + ad.fold_frames(correction, b_actual)
    return v, FeatureLedger(tuple(new_feats))
