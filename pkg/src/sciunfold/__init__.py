"""Video snapshot compressive imaging: forward model, closed-form projection,
learned and classical priors, unfolded ADMM solvers, and training utilities.

The public surface is re-exported here; the CLI lives behind
``python -m sciunfold``.
"""

from .errors import (CheckpointMismatchError, ConfigError, ContractError,
                     DegenerateMaskError, FileFormatError, SciUnfoldError,
                     ShapeError, UnsupportedPrimitiveError)
from .estimators import GapTvReconstructor, UnfoldedReconstructor
from .forward_model import (SciSystem, apply_H, apply_Ht, encode,
                            normalized_measurement, random_masks)
from .io import (load_checkpoint, load_config, model_from_checkpoint,
                 read_vcube, save_checkpoint, worker_count, write_loss_csv,
                 write_metric_csv, write_pgm, write_vcube)
from .metrics import MetricReport, psnr, score_cube, ssim
from .priors import CnnPrior, IdentityPrior, TvPrior, denoise_cnn, denoise_tv
from .projection import PriorTerm, project_ensemble, project_single
from .rng import Rng
from .training import (TrainConfig, TrainResult, mse_loss, synth_scene,
                       train_two_period)
from .unfolding import StageSchedule, run_elp, run_gap_tv

__all__ = [
    "CheckpointMismatchError", "ConfigError", "ContractError",
    "DegenerateMaskError", "FileFormatError", "SciUnfoldError", "ShapeError",
    "UnsupportedPrimitiveError",
    "GapTvReconstructor", "UnfoldedReconstructor",
    "SciSystem", "apply_H", "apply_Ht", "encode", "normalized_measurement",
    "random_masks",
    "load_checkpoint", "load_config", "model_from_checkpoint", "read_vcube",
    "save_checkpoint", "worker_count", "write_loss_csv", "write_metric_csv",
    "write_pgm", "write_vcube",
    "MetricReport", "psnr", "score_cube", "ssim",
    "CnnPrior", "IdentityPrior", "TvPrior", "denoise_cnn", "denoise_tv",
    "PriorTerm", "project_ensemble", "project_single",
    "Rng",
    "TrainConfig", "TrainResult", "mse_loss", "synth_scene",
    "train_two_period",
    "StageSchedule", "run_elp", "run_gap_tv",
]
