"""The unfolded solver: m single-prior stages, n ensemble stages, and the
GAP-TV iterative baseline.

Every stage runs the same four updates in order: denoise u = x - lambda2 /
gamma2 into v, refresh lambda2 with that v, refresh lambda1 with the
measurement residual of the previous x, then solve the data subproblem in
closed form. Stages 1..m project against their own prior term only; stages
m+1..m+n gather the terms of stages m..m+j into one ensemble projection.
Retained buffer entries keep the values they were created with; later stages
never rewrite them.

All math routes through the generic primitives, so the same code runs on
plain arrays for inference and on traced variables for training (pass
lift=tape.param to pull the schedule and prior weights onto a tape).
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DegenerateMaskError, ShapeError
from .forward_model import apply_H, apply_Ht, normalized_measurement
from .priors import (CnnPrior, DenoiserInput, IdentityPrior, TvPrior,
                     denoise_cnn, denoise_tv)
from .projection import (GAMMA_FLOOR, PriorTerm, project_ensemble,
                         project_single)


class StageSchedule:
    """Per-stage penalty weights, log-parameterized so gamma stays positive.

    Index 0 belongs to the opening projection that produces x0; stage i uses
    index i. A schedule with m single-prior stages and n ensemble stages
    therefore carries m + n + 1 pairs.
    """

    def __init__(self, m, n=0, init_log_gamma1=0.0, init_log_gamma2=0.0):
        if m < 1:
            raise ContractError(f"need at least one single-prior stage, got m={m}")
        if n < 0:
            raise ContractError(f"ensemble stage count must be >= 0, got n={n}")
        self.m = int(m)
        self.n = int(n)
        self.log_gamma1 = [
            ad.Parameter(np.asarray(float(init_log_gamma1)), f"log_gamma1_{i}")
            for i in range(self.m + self.n + 1)]
        self.log_gamma2 = [
            ad.Parameter(np.asarray(float(init_log_gamma2)), f"log_gamma2_{i}")
            for i in range(self.m + self.n + 1)]

    @property
    def n_stages(self):
        return self.m + self.n

    def gamma1(self, i, lift=None):
        p = self.log_gamma1[i]
        return ad.exp(lift(p)) if lift is not None else float(np.exp(p.value))

    def gamma2(self, i, lift=None):
        p = self.log_gamma2[i]
        return ad.exp(lift(p)) if lift is not None else float(np.exp(p.value))

    def parameters(self):
        out = []
        for p1, p2 in zip(self.log_gamma1, self.log_gamma2):
            out.extend([p1, p2])
        return out

    def __repr__(self):
        return f"StageSchedule(m={self.m}, n={self.n})"


@dataclass
class SolverState:
    """Everything a stage hands to the next one."""
    x: object
    lambda1: object
    lambda2: object
    ensemble_buffer: list = field(default_factory=list)
    ledger: object = None


def update_lambda1(lambda1_prev, gamma1, y, x_prev, system):
    """lambda1' = lambda1 - gamma1 * (y - H x_prev)."""
    _check_gamma_positive(gamma1)
    return lambda1_prev - gamma1 * (y - apply_H(x_prev, system))


def update_lambda2(lambda2_prev, gamma2, x_prev, v):
    """lambda2' = lambda2 - gamma2 * (x_prev - v)."""
    _check_gamma_positive(gamma2)
    shapes = {_shape(lambda2_prev), _shape(x_prev), _shape(v)}
    if len(shapes) != 1:
        raise ShapeError(f"lambda2/x/v shapes differ: {sorted(shapes, key=str)}")
    return lambda2_prev - gamma2 * (x_prev - v)


def _shape(a):
    return tuple(a.shape) if hasattr(a, "shape") else None


def _check_gamma_positive(g):
    if isinstance(g, ad.Var):
        return
    if float(np.asarray(g).reshape(()).item()) <= GAMMA_FLOOR:
        raise ContractError(f"gamma must be positive, got {g}")


def stage_priors(prior, n_stages):
    """Normalize the prior argument to one entry per stage.

    A TV or identity config is shared across stages. CNN priors come as a
    list, one per stage, the first built with first=True and the rest with
    first=False so the feature ledger threads through.
    """
    if isinstance(prior, (TvPrior, IdentityPrior)):
        return [prior] * n_stages
    if isinstance(prior, CnnPrior):
        prior = [prior]
    priors = list(prior)
    if len(priors) != n_stages:
        raise ContractError(f"got {len(priors)} priors for {n_stages} stages")
    b_maxes = set()
    for idx, p in enumerate(priors):
        if not isinstance(p, CnnPrior):
            raise ContractError(f"stage {idx + 1} prior is {type(p).__name__}, "
                                "expected CnnPrior")
        if p.first != (idx == 0):
            raise ContractError(
                f"stage {idx + 1} prior has first={p.first}; only the opening "
                "stage runs without a feature ledger")
        b_maxes.add(p.b_max)
    if len(b_maxes) > 1:
        raise ContractError(f"priors disagree on b_max: {sorted(b_maxes)}")
    return priors


def _denoise(u, stage_prior, gamma2, ledger, y_norm, lift):
    if isinstance(stage_prior, IdentityPrior):
        return u, ledger
    if isinstance(stage_prior, TvPrior):
        if isinstance(u, ad.Var):
            raise ContractError("the TV prior is inference-only; train CNN priors")
        return denoise_tv(u, stage_prior.weight, stage_prior.iters), ledger
    h, w = _shape(u)[1:]
    noise_map = ad.broadcast_to(gamma2, (h, w))
    inp = DenoiserInput(u=u, noise_map=noise_map, y_norm=y_norm)
    return denoise_cnn(inp, stage_prior, ledger_in=ledger, lift=lift)


def run_elp(y, system, schedule, prior, counters=None, lift=None, on_stage=None):
    """Run the full unfolded solve; returns the final cube clamped to [0, inf).

    counters, when given, is a dict whose "denoise", "project_single" and
    "project_ensemble" entries are incremented as those operations run.
    on_stage(i, state) is called after each stage completes.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != system.frame_shape:
        raise ShapeError(f"measurement shape {y.shape} != frame {system.frame_shape}")
    priors = stage_priors(prior, schedule.n_stages)
    y_norm = normalized_measurement(y, system)
    cube_shape = (system.b,) + system.frame_shape
    zeros_cube = np.zeros(cube_shape)

    opening = PriorTerm(v=zeros_cube, lambda2=zeros_cube,
                        gamma2=schedule.gamma2(0, lift))
    x = project_single(opening, y, np.zeros(system.frame_shape),
                       schedule.gamma1(0, lift), system)
    if counters is not None:
        counters["project_single"] = counters.get("project_single", 0) + 1
    state = SolverState(x=x, lambda1=np.zeros(system.frame_shape),
                        lambda2=zeros_cube)

    for i in range(1, schedule.n_stages + 1):
        gamma1 = schedule.gamma1(i, lift)
        gamma2 = schedule.gamma2(i, lift)
        u = state.x - state.lambda2 / gamma2
        v, state.ledger = _denoise(u, priors[i - 1], gamma2, state.ledger,
                                   y_norm, lift)
        if counters is not None:
            counters["denoise"] = counters.get("denoise", 0) + 1
        state.lambda2 = update_lambda2(state.lambda2, gamma2, state.x, v)
        state.lambda1 = update_lambda1(state.lambda1, gamma1, y, state.x, system)
        term = PriorTerm(v=v, lambda2=state.lambda2, gamma2=gamma2)
        if i <= schedule.m:
            if i == schedule.m:
                state.ensemble_buffer = [term]
            state.x = project_single(term, y, state.lambda1, gamma1, system)
            if counters is not None:
                counters["project_single"] = counters.get("project_single", 0) + 1
        else:
            state.ensemble_buffer.append(term)
            state.x = project_ensemble(state.ensemble_buffer, y, state.lambda1,
                                       gamma1, system)
            if counters is not None:
                counters["project_ensemble"] = counters.get("project_ensemble", 0) + 1
        if on_stage is not None:
            on_stage(i, state)
    return ad.relu(state.x)


def run_gap_tv(y, system, iters, tv_weight=0.07, tv_iters=5):
    """GAP iterations with a TV denoiser; returns the final cube in [0, 1].

    Each projection lands exactly on the measurement constraint H x = y; the
    TV step then pulls toward piecewise-smooth frames. iters=0 returns the
    normalized measurement replicated across frames.
    """
    y = np.asarray(y, dtype=np.float64)
    if iters < 0:
        raise ContractError(f"iters must be >= 0, got {iters}")
    if (system.psi <= 0).any():
        bad = np.argwhere(system.psi <= 0)[0]
        raise DegenerateMaskError(f"psi is zero at pixel ({bad[0]}, {bad[1]}); "
                                  "every pixel needs mask energy")
    y_bar = normalized_measurement(y, system)
    v = np.broadcast_to(y_bar, (system.b,) + system.frame_shape).copy()
    for _ in range(int(iters)):
        x = v + apply_Ht((y - apply_H(v, system)) / system.psi, system)
        v = denoise_tv(x, tv_weight, tv_iters)
    return np.clip(v, 0.0, 1.0)
