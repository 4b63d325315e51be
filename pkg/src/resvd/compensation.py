"""Two-stage whitened truncation with residual compensation.

The rank budget ``r = r_i + r_r`` is split between a whitened truncation of
the weight itself and a plain truncation of the leftover residual:

1. factor ``W S`` at rank ``r_i`` and fold ``S^{-1}`` into the right factor,
   giving the intermediate approximation ``W_ri``;
2. factor the residual ``W - W_ri`` at rank ``r_r`` in unwhitened space;
3. concatenate both factor pairs (stage-1 columns first).

The combined product is never worse than truncating ``W S`` at rank ``r``
directly, because the discarded whitened tail is itself a rank-``r_r``
competitor to the optimal residual truncation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import ScalingContext
from .errors import DimensionError
from .linalg import FactorPair, as_matrix, rank_budget, svd, truncate


@dataclass(frozen=True)
class CompensationConfig:
    """Layer compression ratio and the residual share of the rank budget."""

    layer_ratio: float
    beta: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.layer_ratio < 1.0:
            raise ValueError(f"layer_ratio must be in [0, 1), got {self.layer_ratio!r}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta!r}")


def _whitened_stage(w: np.ndarray, ctx: ScalingContext, r: int, name: str) -> FactorPair:
    # Truncate WS, then absorb S^{-1} into the right factor so that
    # u_hat @ v_hat == SVD_r(WS) S^{-1} exactly.
    pair = truncate(svd(w @ ctx.s, name=f"{name} (whitened)"), r)
    return FactorPair(u_hat=pair.u_hat, v_hat=pair.v_hat @ ctx.s_inv, rank=r)


def compress_matrix(
    w,
    ctx: ScalingContext,
    cfg: CompensationConfig,
    name: str = "matrix",
) -> FactorPair:
    """Residual-compensated low-rank factorization of one weight matrix.

    With ``beta == 0`` the result is bit-identical to
    :func:`direct_truncate_matrix` at the same budget.
    """
    arr = as_matrix(w, name)
    m, n = arr.shape
    if ctx.s.shape[0] != n:
        raise DimensionError(
            f"{name}: scaling context is {ctx.s.shape[0]}x{ctx.s.shape[0]} "
            f"but the weight expects width {n}"
        )
    budget = rank_budget(m, n, cfg.layer_ratio, cfg.beta)
    stage1 = _whitened_stage(arr, ctx, budget.r_i, name)
    if budget.r_r == 0:
        return stage1
    residual = arr - stage1.u_hat @ stage1.v_hat
    stage2 = truncate(svd(residual, name=f"{name} (residual)"), budget.r_r)
    return FactorPair(
        u_hat=np.hstack([stage1.u_hat, stage2.u_hat]),
        v_hat=np.vstack([stage1.v_hat, stage2.v_hat]),
        rank=budget.r,
    )


def direct_truncate_matrix(w, ctx: ScalingContext, r: int, name: str = "matrix") -> FactorPair:
    """Single-stage whitened truncation at rank ``r`` (the comparison baseline)."""
    arr = as_matrix(w, name)
    if ctx.s.shape[0] != arr.shape[1]:
        raise DimensionError(
            f"{name}: scaling context is {ctx.s.shape[0]}x{ctx.s.shape[0]} "
            f"but the weight expects width {arr.shape[1]}"
        )
    return _whitened_stage(arr, ctx, r, name)
