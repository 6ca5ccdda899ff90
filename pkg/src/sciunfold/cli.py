"""Command-line surface: simulate, reconstruct, train, eval.

Every subcommand exits 0 on success and nonzero on any error, printing the
failure to stderr. File formats are the package's VCUBE/checkpoint/PGM/CSV
formats; see the io module.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import io as sciio
from .errors import ContractError, SciUnfoldError, ShapeError
from .forward_model import SciSystem, encode, random_masks
from .metrics import score_cube
from .priors import TvPrior
from .rng import Rng
from .training import TrainConfig, synth_scene, train_two_period
from .unfolding import StageSchedule, run_elp, run_gap_tv


def _parse_size(text):
    try:
        h, w = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ContractError(f"size must look like 32x32, got {text!r}")
    return h, w


def _parse_pair(text, what):
    try:
        a, b = (int(p) for p in text.split(","))
    except ValueError:
        raise ContractError(f"{what} must look like M,N, got {text!r}")
    return a, b


def _derived(path, tag, ext):
    stem, _ = os.path.splitext(path)
    return f"{stem}.{tag}{ext}"


def cmd_simulate(args):
    rng_masks = Rng(args.seed).split(1)
    rng_scene = Rng(args.seed).split(2)
    rng_noise = Rng(args.seed).split(3)
    if args.scene is not None:
        cube = sciio.read_vcube(args.scene)
        if cube.ndim != 3:
            raise ShapeError(f"{args.scene}: expected [B,H,W], got {cube.shape}")
        if cube.shape[0] < args.b:
            raise ContractError(f"{args.scene} has {cube.shape[0]} frames, "
                                f"need {args.b}")
        if cube.min() < 0 or cube.max() > 1:
            raise ContractError(f"{args.scene}: values outside [0,1]")
        truth = cube[:args.b]
    else:
        h, w = _parse_size(args.size)
        vel = _parse_pair(args.velocity, "velocity")
        truth = synth_scene(args.synth, h, w, args.b, vel, rng_scene).frames
    masks = random_masks(args.b, truth.shape[1], truth.shape[2], rng_masks,
                         alive_prefix=args.alive_prefix)
    system = SciSystem(masks)
    y = encode(truth, system, noise_sigma=args.sigma,
               rng=rng_noise if args.sigma > 0 else None)
    sciio.write_vcube(args.masks, masks)
    sciio.write_vcube(args.out, y)
    truth_path = args.truth or _derived(args.out, "truth", ".vcube")
    sciio.write_vcube(truth_path, truth)
    print(f"wrote masks {args.masks}, measurement {args.out}, truth {truth_path}")
    return 0


def _solve(args, y, system):
    if args.solver == "gaptv":
        return run_gap_tv(y, system, iters=args.iters,
                          tv_weight=args.tv_weight, tv_iters=args.tv_iters)
    if args.checkpoint is None and not args.tv_prior:
        raise ContractError("solver elp needs --checkpoint or --tv-prior")
    if args.checkpoint is not None:
        data = sciio.load_checkpoint(args.checkpoint)
        if args.stages is not None:
            m, n = _parse_pair(args.stages, "--stages")
            if (m, n) != (data["m"], data["n"]):
                raise ContractError(
                    f"--stages {m},{n} does not match checkpoint stages "
                    f"{data['m']},{data['n']}")
        schedule, priors = sciio.model_from_checkpoint(data)
        if system.b > data["b_max"]:
            raise ContractError(f"measurement has {system.b} frames but the "
                                f"checkpoint was trained at b_max={data['b_max']}")
        return np.clip(run_elp(y, system, schedule, priors), 0.0, 1.0)
    m, n = _parse_pair(args.stages or "3,2", "--stages")
    schedule = StageSchedule(m, n)
    prior = TvPrior(weight=args.tv_weight, iters=args.tv_iters)
    return np.clip(run_elp(y, system, schedule, prior), 0.0, 1.0)


def cmd_reconstruct(args):
    y = sciio.read_vcube(args.measurement)
    masks = sciio.read_vcube(args.masks)
    if masks.ndim != 3:
        raise ShapeError(f"{args.masks}: expected [B,H,W] masks, got {masks.shape}")
    system = SciSystem(masks)
    started = time.perf_counter()
    recon = _solve(args, y, system)
    seconds = time.perf_counter() - started
    sciio.write_vcube(args.out, recon)
    for i in range(recon.shape[0]):
        sciio.write_pgm(_derived(args.out, f"frame{i:02d}", ".pgm"), recon[i])
    line = f"{args.solver}: reconstructed {recon.shape} in {seconds:.3f} s"
    if args.truth is not None:
        truth = sciio.read_vcube(args.truth)
        report = score_cube(recon, truth, seconds=seconds)
        line += f", psnr {report.mean_psnr_db:.2f} dB, ssim {report.mean_ssim:.4f}"
        if args.report is not None:
            scene = os.path.splitext(os.path.basename(args.measurement))[0]
            sciio.write_metric_csv(args.report, scene, report, args.solver)
    print(line)
    return 0


def _config_to_train(cfg):
    kwargs = {}
    ints = ("height", "width", "b_max", "m", "n", "convs_per_scale", "kernel",
            "batch_size", "epochs_p1", "epochs_p2", "steps_per_epoch",
            "decay_interval", "warmup_epochs", "val_scenes", "seed")
    floats = ("lr_p1", "lr_p2", "decay_factor", "init_log_gamma1",
              "init_log_gamma2")
    for key in ints:
        if key in cfg:
            kwargs[key] = cfg.get_int(key)
    for key in floats:
        if key in cfg:
            kwargs[key] = cfg.get_float(key)
    if "widths" in cfg:
        kwargs["widths"] = cfg.get_int_tuple("widths")
    if "b_choices" in cfg:
        kwargs["b_choices"] = cfg.get_int_tuple("b_choices")
    if "sigma_lo" in cfg or "sigma_hi" in cfg:
        kwargs["sigma_range"] = (cfg.get_float("sigma_lo", 0.0),
                                 cfg.get_float("sigma_hi", 0.0))
    return TrainConfig(**kwargs)


def _training_scenes(args, cfg, config):
    if args.data is not None:
        paths = sorted(p for p in os.listdir(args.data) if p.endswith(".vcube"))
        if not paths:
            raise ContractError(f"no .vcube scene files in {args.data}")
        return [sciio.read_vcube(os.path.join(args.data, p)) for p in paths]
    n_scenes = config.get_int("n_scenes", 16)
    scene_size = config.get_int("scene_size", max(cfg.height, cfg.width) + 16)
    rng = Rng(cfg.seed).split(5)
    vels = [(1, 0), (2, 1), (1, 1), (-1, 1), (2, -1), (0, 1), (1, 2), (-2, 1)]
    scenes = []
    for i in range(n_scenes):
        kind = "moving-square" if i % 2 == 0 else "moving-gradient"
        scenes.append(synth_scene(kind, scene_size, scene_size, cfg.b_max,
                                  vels[i % len(vels)], rng.split(i)))
    return scenes


def cmd_train(args):
    config = sciio.load_config(args.config)
    cfg = _config_to_train(config)
    if args.data is None and not args.synth:
        raise ContractError("training needs --data DIR or --synth")
    scenes = _training_scenes(args, cfg, config)
    mask_seed = config.get_int("mask_seed", cfg.seed + 1)
    masks = random_masks(cfg.b_max, cfg.height, cfg.width, Rng(mask_seed),
                         alive_prefix=min(cfg.b_choices))
    system = SciSystem(masks)
    result = train_two_period(cfg, scenes, system)
    steps = (cfg.epochs_p1 + cfg.epochs_p2) * cfg.steps_per_epoch
    sciio.save_checkpoint(args.out, result.schedule, result.priors,
                          seed=cfg.seed, step_count=steps)
    masks_path = args.masks_out or _derived(args.out, "masks", ".vcube")
    sciio.write_vcube(masks_path, masks)
    loss_path = args.loss_csv or _derived(args.out, "loss", ".csv")
    sciio.write_loss_csv(loss_path, result.history)
    last = result.history[-1]
    print(f"trained (m={cfg.m}, n={cfg.n}) for {steps} steps; "
          f"val {result.history[0].val_loss_start:.5f} -> {last.val_loss_end:.5f}; "
          f"wrote {args.out}, {masks_path}, {loss_path}")
    return 0


def cmd_eval(args):
    recon = sciio.read_vcube(args.recon)
    truth = sciio.read_vcube(args.truth)
    report = score_cube(recon, truth)
    scene = os.path.splitext(os.path.basename(args.recon))[0]
    if args.report is not None:
        sciio.write_metric_csv(args.report, scene, report, args.solver)
    print(f"{'frame':>5s} {'psnr_db':>9s} {'ssim':>7s}")
    for i, (p, s) in enumerate(zip(report.psnr_db, report.ssim)):
        print(f"{i:5d} {p:9.3f} {s:7.4f}")
    print(f"{'mean':>5s} {report.mean_psnr_db:9.3f} {report.mean_ssim:7.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sciunfold",
        description="Video snapshot compressive imaging: simulate, "
                    "reconstruct, train, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="encode a scene into one measurement")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="ground-truth VCUBE [B,H,W] in [0,1]")
    src.add_argument("--synth", choices=("moving-square", "moving-gradient"),
                     help="generate a synthetic scene instead")
    p.add_argument("--b", type=int, required=True, help="frames per measurement")
    p.add_argument("--size", default="32x32", help="synthetic frame size HxW")
    p.add_argument("--velocity", default="1,1", help="synthetic shift di,dj")
    p.add_argument("--masks", required=True, help="output mask VCUBE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.0, help="measurement noise")
    p.add_argument("--alive-prefix", type=int, default=None,
                   help="repair masks so the first K frames cover every pixel")
    p.add_argument("--out", required=True, help="output measurement VCUBE")
    p.add_argument("--truth", default=None, help="output truth VCUBE path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="solve one measurement")
    p.add_argument("--measurement", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--solver", choices=("gaptv", "elp"), required=True)
    p.add_argument("--checkpoint", default=None, help="trained model (elp)")
    p.add_argument("--stages", default=None, help="M,N stage counts")
    p.add_argument("--tv-prior", action="store_true",
                   help="run elp with the TV denoiser instead of a checkpoint")
    p.add_argument("--iters", type=int, default=60, help="gaptv iterations")
    p.add_argument("--tv-weight", type=float, default=0.07)
    p.add_argument("--tv-iters", type=int, default=5)
    p.add_argument("--truth", default=None, help="truth VCUBE for metrics")
    p.add_argument("--out", required=True, help="output reconstruction VCUBE")
    p.add_argument("--report", default=None, help="metrics CSV (needs --truth)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="train the unfolded model")
    p.add_argument("--config", required=True, help="key = value config file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="directory of .vcube training scenes")
    src.add_argument("--synth", action="store_true",
                     help="train on generated synthetic scenes")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--masks-out", default=None)
    p.add_argument("--loss-csv", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a reconstruction against truth")
    p.add_argument("--recon", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", default=None, help="metrics CSV path")
    p.add_argument("--solver", default="file", help="solver label for the CSV")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SciUnfoldError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
