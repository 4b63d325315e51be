"""Calibration samples, activation capture, and whitening contexts.

Whitening follows the Cholesky-of-Gram construction: for a weight matrix
with input activations X, ``S`` is the lower Cholesky factor of
``X^T X + ridge*I``. Truncating ``W S`` instead of ``W`` then minimizes the
activation-weighted output loss, and weights are reconstructed through
``S^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionError, SingularWhiteningError
from .linalg import as_matrix
from .model import SequentialModel, apply_activation

DEFAULT_RIDGE_SCALE = 1e-6


@dataclass(frozen=True)
class CalibrationSet:
    """A batch of calibration rows plus the seed and source they came from."""

    samples: np.ndarray
    seed: int = 0
    source: str = "unknown"

    def __post_init__(self):
        object.__setattr__(self, "samples", as_matrix(self.samples, "calibration samples"))

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def input_dim(self) -> int:
        return self.samples.shape[1]

    def subsample(self, n: int, seed: int) -> "CalibrationSet":
        """Seeded random row selection without replacement (all rows if n >= size)."""
        if n < 1:
            raise ValueError("subsample size must be >= 1")
        if n >= self.num_samples:
            return CalibrationSet(samples=self.samples, seed=seed, source=self.source)
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(self.num_samples, size=n, replace=False))
        return CalibrationSet(samples=self.samples[idx], seed=seed, source=self.source)


@dataclass(frozen=True)
class ScalingContext:
    """Whitening matrix S (lower-triangular, positive diagonal) and its inverse."""

    s: np.ndarray
    s_inv: np.ndarray
    ridge: float

    def __post_init__(self):
        n = self.s.shape[0]
        if self.s.shape != (n, n) or self.s_inv.shape != (n, n):
            raise DimensionError("scaling matrices must be square and same-sized")
        if np.any(np.diag(self.s) <= 0):
            raise SingularWhiteningError("whitening factor has a non-positive diagonal")
        if np.max(np.abs(self.s @ self.s_inv - np.eye(n))) > 1e-6:
            raise SingularWhiteningError(
                "whitening factor is too ill-conditioned to invert; increase the ridge"
            )


def whiten(x, ridge: float | None = None) -> ScalingContext:
    """Build a ScalingContext from an activation matrix.

    Args:
        x: activations, one row per observed input.
        ridge: diagonal regularizer added to the Gram matrix. ``None`` picks
            ``1e-6 * trace(X^T X)/n``; pass 0.0 for strict whitening.

    Raises:
        SingularWhiteningError: when the regularized Gram matrix is not
            positive definite (try a larger ridge).
    """
    arr = as_matrix(x, "activations")
    n = arr.shape[1]
    gram = arr.T @ arr
    if ridge is None:
        ridge = DEFAULT_RIDGE_SCALE * float(np.trace(gram)) / n
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if ridge > 0:
        gram = gram + ridge * np.eye(n)
    try:
        s = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularWhiteningError(
            f"activation Gram matrix is not positive definite (ridge={ridge!r}); "
            "increase the ridge"
        ) from exc
    s_inv = solve_triangular(s, np.eye(n), lower=True)
    return ScalingContext(s=s, s_inv=s_inv, ridge=float(ridge))


def capture_activations(model: SequentialModel, calib: CalibrationSet) -> dict[str, np.ndarray]:
    """Inputs seen by every weight matrix during forward passes over the calibration set.

    Keys are ``"<layer>/<matrix>"`` in forward order. All sample rows are
    stacked into one activation matrix per weight; no per-batch averaging.
    """
    if calib.input_dim != model.input_dim:
        raise DimensionError(
            f"calibration width {calib.input_dim} != input width "
            f"{model.input_dim} of layer {model.layers[0].name!r}"
        )
    captured: dict[str, np.ndarray] = {}
    h = calib.samples
    for layer in model.layers:
        for entry in layer.entries:
            captured[f"{layer.name}/{entry.name}"] = h
            h = entry.apply(h)
        h = apply_activation(layer.activation, h)
    return captured


def whitening_contexts(
    model: SequentialModel,
    activations: dict[str, np.ndarray],
    ridge: float | None = None,
) -> dict[str, ScalingContext]:
    """One ScalingContext per captured weight matrix, keyed like the activation map."""
    return {key: whiten(x, ridge) for key, x in activations.items()}
