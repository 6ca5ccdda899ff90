"""Closed-form x-updates for the data subproblem.

Both solvers invert (gamma2_bar I + gamma1 H^T H) in one shot: because H H^T
is the diagonal matrix diag(psi), the Woodbury identity reduces the inverse to
elementwise work,

    x = (r - H^T( (H r) / (gamma2_bar/gamma1 + psi) )) / gamma2_bar,

so cost and memory stay linear in B * n_x * n_y.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ShapeError
from .forward_model import apply_H, apply_Ht

GAMMA_FLOOR = 1e-12


@dataclass
class PriorTerm:
    """One denoised estimate with its multiplier and penalty weight."""
    v: object        # video cube (array or traced)
    lambda2: object  # same dims as v
    gamma2: object   # positive scalar (float or traced)

    def __post_init__(self):
        _check_gamma(self.gamma2, "gamma2")
        v_shape = self.v.shape if hasattr(self.v, "shape") else None
        l_shape = self.lambda2.shape if hasattr(self.lambda2, "shape") else None
        if v_shape != l_shape:
            raise ShapeError(f"v has shape {v_shape} but lambda2 has {l_shape}")


def _check_gamma(g, name):
    # traced gammas come from exp(log_gamma) and are structurally positive
    if isinstance(g, ad.Var):
        return
    arr = np.asarray(g)
    if arr.size != 1:
        raise ContractError(f"{name} must be a scalar, got shape {arr.shape}")
    if arr.reshape(()).item() <= GAMMA_FLOOR:
        raise ContractError(f"{name} must exceed {GAMMA_FLOOR}, got {arr.reshape(()).item()}")


def _one_shot(r, gamma2_bar, gamma1, system):
    denom = gamma2_bar / gamma1 + system.psi
    correction = apply_Ht(apply_H(r, system) / denom, system)
    return (r - correction) / gamma2_bar


def project_single(term, y, lambda1, gamma1, system):
    """Solve (gamma2 I + gamma1 H^T H) x = lambda2 + gamma2 v + gamma1 H^T (y - lambda1/gamma1)."""
    _check_gamma(gamma1, "gamma1")
    _check_gamma(term.gamma2, "gamma2")
    r = term.lambda2 + term.gamma2 * term.v \
        + gamma1 * apply_Ht(y - lambda1 / gamma1, system)
    return _one_shot(r, term.gamma2, gamma1, system)


def project_ensemble(terms, y, lambda1, gamma1, system):
    """Solve the gathered system with gamma2_bar = sum_k gamma2^k and
    rhs = sum_k (lambda2^k + gamma2^k v^k) + gamma1 H^T (y - lambda1/gamma1)."""
    terms = list(terms)
    if not terms:
        raise ContractError("project_ensemble needs at least one term")
    _check_gamma(gamma1, "gamma1")
    gamma2_bar = None
    r = None
    for term in terms:
        _check_gamma(term.gamma2, "gamma2")
        contrib = term.lambda2 + term.gamma2 * term.v
        gamma2_bar = term.gamma2 if gamma2_bar is None else gamma2_bar + term.gamma2
        r = contrib if r is None else r + contrib
    r = r + gamma1 * apply_Ht(y - lambda1 / gamma1, system)
    return _one_shot(r, gamma2_bar, gamma1, system)
