"""Scikit-learn style wrappers around the solvers.

fit() takes the mask stack (the measurement system is what gets "learned"
about at solve time); transform() maps measurements to video cubes. Both
estimators accept a single [H,W] measurement or a batch [S,H,W] and return
[B,H,W] or [S,B,H,W] accordingly. Constructor arguments are stored verbatim
so get_params/set_params/clone behave as sklearn expects; validation happens
in fit."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import io as sciio
from .errors import ContractError
from .forward_model import SciSystem
from .priors import TvPrior
from .unfolding import StageSchedule, run_elp, run_gap_tv
from .validation import as_mask_stack


class _MaskFittedMixin:
    def _fit_system(self, masks):
        self.system_ = SciSystem(as_mask_stack(masks))
        return self

    def _require_fitted(self):
        if not hasattr(self, "system_"):
            raise NotFittedError(
                f"{type(self).__name__} needs fit(masks) before transform")

    def _solve_batch(self, Y, solve):
        self._require_fitted()
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 2:
            return solve(Y)
        if Y.ndim == 3:
            return np.stack([solve(y) for y in Y])
        raise ContractError(f"expected [H,W] or [S,H,W] measurements, "
                            f"got shape {Y.shape}")

    def predict(self, Y):
        return self.transform(Y)


class GapTvReconstructor(_MaskFittedMixin, TransformerMixin, BaseEstimator):
    """Plug-and-play baseline: alternating projection with a TV denoiser."""

    def __init__(self, iters=60, tv_weight=0.07, tv_iters=5):
        self.iters = iters
        self.tv_weight = tv_weight
        self.tv_iters = tv_iters

    def fit(self, X, y=None):
        """X is the mask stack [B,H,W]; y is ignored."""
        return self._fit_system(X)

    def transform(self, Y):
        return self._solve_batch(
            Y, lambda y: run_gap_tv(y, self.system_, iters=self.iters,
                                    tv_weight=self.tv_weight,
                                    tv_iters=self.tv_iters))


class UnfoldedReconstructor(_MaskFittedMixin, TransformerMixin, BaseEstimator):
    """Unfolded ADMM solver, either restored from a checkpoint or run with
    the TV denoiser at the given stage counts."""

    def __init__(self, checkpoint=None, stages=(3, 2), tv_weight=0.07,
                 tv_iters=5):
        self.checkpoint = checkpoint
        self.stages = stages
        self.tv_weight = tv_weight
        self.tv_iters = tv_iters

    @classmethod
    def from_checkpoint(cls, path):
        return cls(checkpoint=path)

    def fit(self, X, y=None):
        """X is the mask stack [B,H,W]; y is ignored."""
        self._fit_system(X)
        if self.checkpoint is not None:
            data = sciio.load_checkpoint(self.checkpoint)
            if self.system_.b > data["b_max"]:
                raise ContractError(
                    f"mask stack has {self.system_.b} frames but the "
                    f"checkpoint was trained at b_max={data['b_max']}")
            self.schedule_, self.prior_ = sciio.model_from_checkpoint(data)
        else:
            m, n = self.stages
            self.schedule_ = StageSchedule(m, n)
            self.prior_ = TvPrior(weight=self.tv_weight, iters=self.tv_iters)
        return self

    def transform(self, Y):
        return self._solve_batch(
            Y, lambda y: np.clip(
                run_elp(y, self.system_, self.schedule_, self.prior_), 0, 1))
