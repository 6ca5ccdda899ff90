"""End-to-end training of the unfolded solver at desk scale.

Training runs in two periods: the first trains a pure single-prior schedule
(m stages), the second builds the full (m, n) schedule, copies the pretrained
parameters into the matching stages, seeds every added prior from the last
pretrained one, and trains end to end. Each optimizer step draws a fresh
batch: scene, spatial crop, frame count B_actual from a configured set, and
noise level, all from one seeded stream so reruns are bit-identical.

Measurements for B_actual < B_max use the leading B_actual mask frames, so
the training mask stack must keep every pixel alive within its first
min(b_choices) frames (random_masks(..., alive_prefix=...) guarantees this).
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ShapeError
from .forward_model import encode
from .priors import CnnPrior
from .rng import Rng
from .unfolding import StageSchedule, run_elp


@dataclass(frozen=True)
class SyntheticScene:
    """A short clip with known toroidal motion, values in [0,1]."""
    frames: np.ndarray
    kind: str
    velocity: tuple


def synth_scene(kind, n_x, n_y, b, velocity, rng):
    """Deterministic moving test scene; frame t is frame t-1 rolled by velocity."""
    if kind == "moving-square":
        base = np.full((n_x, n_y), 0.1 + 0.1 * float(rng.uniform(())))
        side = max(2, min(n_x, n_y) // 3)
        i0 = int(rng.integers(0, n_x - side + 1))
        j0 = int(rng.integers(0, n_y - side + 1))
        base[i0:i0 + side, j0:j0 + side] = 0.6 + 0.35 * float(rng.uniform(()))
    elif kind == "moving-gradient":
        ii, jj = np.meshgrid(np.arange(n_x), np.arange(n_y), indexing="ij")
        fi = 1 + int(rng.integers(1, 3))
        phase = 2 * np.pi * float(rng.uniform(()))
        base = 0.5 + 0.45 * np.sin(2 * np.pi * fi * ii / n_x
                                   + 2 * np.pi * jj / n_y + phase)
    else:
        raise ContractError(f"unknown scene kind {kind!r}")
    frames = np.empty((b, n_x, n_y))
    frames[0] = base
    for t in range(1, b):
        frames[t] = np.roll(frames[t - 1], velocity, axis=(0, 1))
    return SyntheticScene(frames=frames, kind=kind, velocity=tuple(velocity))


def rearrange_temporal(frames, b_max):
    """Repeat the frame sequence until b_max frames are filled, truncating
    the last repetition: 5 frames at b_max=8 give [f1..f5, f1, f2, f3]."""
    shape = frames.shape if hasattr(frames, "shape") else None
    if shape is None or len(shape) != 3:
        raise ShapeError(f"expected [B,H,W] frames, got {shape}")
    if shape[0] > b_max:
        raise ContractError(f"{shape[0]} frames exceed b_max={b_max}")
    return ad.tile_frames(frames, b_max)


def mse_loss(pred, truth):
    """Mean squared error over a batch of cubes: total squared difference
    divided by S * B * n_x * n_y."""
    pred = list(pred)
    truth = list(truth)
    if len(pred) != len(truth) or not pred:
        raise ShapeError(f"batch sizes differ or empty: {len(pred)} vs {len(truth)}")
    total = None
    count = 0
    for p, t in zip(pred, truth):
        p_shape = tuple(p.shape)
        if p_shape != tuple(t.shape):
            raise ShapeError(f"pred {p_shape} vs truth {tuple(t.shape)}")
        d = p - t
        sq = (d * d).sum()
        total = sq if total is None else total + sq
        count += int(np.prod(p_shape))
    return total / count


@dataclass
class AdamState:
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard bias-corrected Adam; updates parameter values in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p in params:
        g = grads[p.name]
        m = state.first.setdefault(p.name, np.zeros_like(p.value))
        v = state.second.setdefault(p.name, np.zeros_like(p.value))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p.value[...] = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def lr_schedule(lr0, epoch, warmup=5, interval=15, factor=0.9):
    """lr0 * factor ** floor(max(0, epoch - warmup) / interval)."""
    return lr0 * factor ** int(max(0, epoch - warmup) // interval)


@dataclass
class TrainConfig:
    height: int = 32
    width: int = 32
    b_max: int = 8
    m: int = 3
    n: int = 2
    widths: tuple = (8, 16, 32)
    convs_per_scale: int = 2
    kernel: int = 3
    batch_size: int = 2
    epochs_p1: int = 10
    epochs_p2: int = 10
    steps_per_epoch: int = 10
    lr_p1: float = 2e-3
    lr_p2: float = 5e-4
    decay_factor: float = 0.9
    decay_interval: int = 15
    warmup_epochs: int = 5
    sigma_range: tuple = (0.0, 0.0)
    b_choices: tuple = (3, 4, 5, 8)
    val_scenes: int = 2
    init_log_gamma1: float = 0.0
    init_log_gamma2: float = -1.386294361119890618  # gamma2 = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.lr_p2 >= self.lr_p1:
            raise ContractError(
                f"period-2 lr ({self.lr_p2}) must be below period-1 lr ({self.lr_p1})")
        if self.m < 1 or self.n < 0:
            raise ContractError(f"bad stage counts m={self.m}, n={self.n}")
        if not self.b_choices or max(self.b_choices) > self.b_max \
                or min(self.b_choices) < 1:
            raise ContractError(f"b_choices {self.b_choices} must lie in 1..{self.b_max}")
        if not 0 <= self.sigma_range[0] <= self.sigma_range[1]:
            raise ContractError(f"bad sigma range {self.sigma_range}")
        if min(self.epochs_p1, self.epochs_p2, self.steps_per_epoch,
               self.batch_size, self.val_scenes) < 1:
            raise ContractError("epochs, steps, batch and val sizes must be >= 1")

    @classmethod
    def desk_scale(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def paper_scale(cls, **overrides):
        """The published operating point; hours of compute, kept for reference."""
        base = dict(height=256, width=256, b_max=8, m=8, n=5,
                    widths=(64, 128, 256), batch_size=3,
                    epochs_p1=100, epochs_p2=100, steps_per_epoch=100,
                    lr_p1=1e-4, lr_p2=2e-5, b_choices=(8,))
        base.update(overrides)
        return cls(**base)


@dataclass
class EpochRow:
    period: int
    epoch: int
    lr: float
    train_loss: float
    val_loss_start: float
    val_loss_end: float


@dataclass
class TrainResult:
    schedule: StageSchedule
    priors: list
    history: list
    config: TrainConfig


def _scene_cube(scene):
    return scene.frames if isinstance(scene, SyntheticScene) else np.asarray(scene)


def _check_training_inputs(config, data, system):
    if not data:
        raise ContractError("training needs at least one scene")
    if system.b != config.b_max:
        raise ContractError(f"system has {system.b} mask frames, config.b_max"
                            f"={config.b_max}")
    if system.frame_shape != (config.height, config.width):
        raise ShapeError(f"system frame {system.frame_shape} != configured "
                         f"{(config.height, config.width)}")
    for b in set(config.b_choices):
        if (system.sliced(b).mask_sum == 0).any():
            raise ContractError(
                f"mask stack has dead pixels within its first {b} frames; "
                f"generate masks with alive_prefix={min(config.b_choices)}")
    cubes = [_scene_cube(s) for s in data]
    for idx, cube in enumerate(cubes):
        if cube.ndim != 3 or cube.shape[0] < config.b_max:
            raise ShapeError(f"scene {idx} has shape {cube.shape}; need at "
                             f"least {config.b_max} frames")
        if cube.shape[1] < config.height or cube.shape[2] < config.width:
            raise ShapeError(f"scene {idx} is smaller than the configured "
                             f"{config.height}x{config.width} crop")
        if cube.min() < 0 or cube.max() > 1:
            raise ContractError(f"scene {idx} has values outside [0,1]")
    return cubes


def _center_crop(cube, h, w):
    oi = (cube.shape[1] - h) // 2
    oj = (cube.shape[2] - w) // 2
    return cube[:, oi:oi + h, oj:oj + w]


def _val_batch(cubes, config):
    picks = cubes[-config.val_scenes:] if len(cubes) > config.val_scenes else cubes
    return [_center_crop(c, config.height, config.width)[:config.b_max]
            for c in picks]


def _val_loss(schedule, priors, val_cubes, system, config):
    preds = []
    for cube in val_cubes:
        y = encode(cube, system)
        preds.append(run_elp(y, system, schedule, priors))
    return float(mse_loss(preds, val_cubes))


def _draw_item(sampler, cubes, system, config):
    cube = cubes[int(sampler.integers(0, len(cubes)))]
    oi = int(sampler.integers(0, cube.shape[1] - config.height + 1))
    oj = int(sampler.integers(0, cube.shape[2] - config.width + 1))
    b = config.b_choices[int(sampler.integers(0, len(config.b_choices)))]
    lo, hi = config.sigma_range
    sigma = float(sampler.uniform((), lo, hi)) if hi > lo else lo
    truth = cube[:b, oi:oi + config.height, oj:oj + config.width]
    return truth, system.sliced(b), sigma


def _build_priors(config, m_plus_n, root, stream_base):
    priors = []
    for i in range(m_plus_n):
        priors.append(CnnPrior(
            b_max=config.b_max, widths=config.widths,
            convs_per_scale=config.convs_per_scale, kernel=config.kernel,
            first=(i == 0), rng=root.split(stream_base + i),
            name=f"stage{i + 1}"))
    return priors


def _train_period(period, schedule, priors, cubes, val_cubes, system, config,
                  epochs, lr0, history):
    params = schedule.parameters()
    for prior in priors:
        params.extend(prior.parameters())
    adam = AdamState()
    sampler = Rng(config.seed).split(period)
    for epoch in range(epochs):
        lr = lr_schedule(lr0, epoch, config.warmup_epochs,
                         config.decay_interval, config.decay_factor)
        val_start = _val_loss(schedule, priors, val_cubes, system, config)
        step_losses = []
        for step in range(config.steps_per_epoch):
            items = [_draw_item(sampler, cubes, system, config)
                     for _ in range(config.batch_size)]
            tape = ad.Tape()
            preds, truths = [], []
            for truth, sys_b, sigma in items:
                y = encode(truth, sys_b, noise_sigma=sigma,
                           rng=sampler if sigma > 0 else None)
                preds.append(run_elp(y, sys_b, schedule, priors,
                                     lift=tape.param))
                truths.append(truth)
            loss = mse_loss(preds, truths)
            value = float(loss.data)
            if not np.isfinite(value):
                raise ContractError(
                    f"non-finite loss {value} at period {period} epoch {epoch} "
                    f"step {step}")
            grads = ad.backward(loss)
            adam_step(params, grads, adam, lr)
            step_losses.append(value)
        val_end = _val_loss(schedule, priors, val_cubes, system, config)
        history.append(EpochRow(period=period, epoch=epoch, lr=lr,
                                train_loss=float(np.mean(step_losses)),
                                val_loss_start=val_start, val_loss_end=val_end))
    return history


def clone_for_period2(config, schedule1, priors1):
    """Build the (m, n) model from the pretrained (m, 0) one: stage 0..m
    penalties and the first m priors copy over; everything added starts from
    the last pretrained stage."""
    root = Rng(config.seed)
    schedule2 = StageSchedule(config.m, config.n)
    for i in range(config.m + config.n + 1):
        src = min(i, config.m)
        schedule2.log_gamma1[i].value[...] = schedule1.log_gamma1[src].value
        schedule2.log_gamma2[i].value[...] = schedule1.log_gamma2[src].value
    priors2 = _build_priors(config, config.m + config.n, root, stream_base=200)
    for i, p in enumerate(priors2):
        p.copy_from(priors1[i] if i < config.m else priors1[-1])
    return schedule2, priors2


def train_two_period(config, data, system):
    """Run both training periods; returns the trained model and per-epoch
    history (one row per epoch, both periods)."""
    cubes = _check_training_inputs(config, data, system)
    val_cubes = _val_batch(cubes, config)
    train_cubes = cubes[:-config.val_scenes] \
        if len(cubes) > config.val_scenes else cubes
    root = Rng(config.seed)
    history = []

    schedule1 = StageSchedule(config.m, 0,
                              init_log_gamma1=config.init_log_gamma1,
                              init_log_gamma2=config.init_log_gamma2)
    priors1 = _build_priors(config, config.m, root, stream_base=100)
    _train_period(1, schedule1, priors1, train_cubes, val_cubes, system,
                  config, config.epochs_p1, config.lr_p1, history)

    schedule2, priors2 = clone_for_period2(config, schedule1, priors1)
    _train_period(2, schedule2, priors2, train_cubes, val_cubes, system,
                  config, config.epochs_p2, config.lr_p2, history)
    return TrainResult(schedule=schedule2, priors=priors2, history=history,
                       config=config)
