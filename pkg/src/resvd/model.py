"""Sequential layered models: forward evaluation, error reports, parameter/MAC accounting.

A model is an ordered stack of layers; each layer applies its weight entries
in sequence as ``h -> h @ W^T`` and finishes with one elementwise activation.
Entries hold either a dense matrix or a low-rank :class:`~resvd.linalg.FactorPair`;
factored entries are evaluated as ``(h @ v_hat^T) @ u_hat^T`` without ever
materializing the product.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

import numpy as np
from scipy.special import expit

from .errors import DimensionError
from .linalg import FactorPair, as_matrix

if TYPE_CHECKING:
    from .calibration import CalibrationSet

ACTIVATIONS = ("identity", "relu", "silu")
STORE_DTYPES = ("f64", "f32")

_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


def apply_activation(name: str, x: np.ndarray) -> np.ndarray:
    if name == "identity":
        return x
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "silu":
        return x * expit(x)
    raise ValueError(f"unknown activation {name!r}")


def _check_name(kind: str, name: str) -> None:
    if not _NAME_RE.match(name):
        raise ValueError(f"{kind} name {name!r} must match [A-Za-z0-9._-]+")


@dataclass(frozen=True)
class MatrixEntry:
    """One named weight of shape (rows, cols), stored dense or factored.

    ``rows``/``cols`` always record the original dense shape so compression
    ratios stay exact after factorization. ``store_dtype`` remembers the
    on-disk precision so containers round-trip byte-identically.
    """

    name: str
    rows: int
    cols: int
    dense: np.ndarray | None = None
    factors: FactorPair | None = None
    store_dtype: str = "f64"

    def __post_init__(self):
        _check_name("matrix", self.name)
        if self.store_dtype not in STORE_DTYPES:
            raise ValueError(f"store_dtype must be one of {STORE_DTYPES}")
        if (self.dense is None) == (self.factors is None):
            raise ValueError("exactly one of dense/factors must be set")
        if self.dense is not None and self.dense.shape != (self.rows, self.cols):
            raise DimensionError(
                f"entry {self.name!r}: dense shape {self.dense.shape} != "
                f"declared ({self.rows}, {self.cols})"
            )
        if self.factors is not None and self.factors.shape != (self.rows, self.cols):
            raise DimensionError(
                f"entry {self.name!r}: factored shape {self.factors.shape} != "
                f"declared ({self.rows}, {self.cols})"
            )

    @property
    def is_factored(self) -> bool:
        return self.factors is not None

    @property
    def param_count(self) -> int:
        if self.factors is not None:
            return self.factors.param_count
        return self.rows * self.cols

    def mac_count(self, batch: int) -> int:
        if self.factors is not None:
            r = self.factors.rank
            return batch * self.cols * r + batch * r * self.rows
        return batch * self.rows * self.cols

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.factors is not None:
            return (x @ self.factors.v_hat.T) @ self.factors.u_hat.T
        return x @ self.dense.T


@dataclass(frozen=True)
class Layer:
    name: str
    entries: tuple[MatrixEntry, ...]
    activation: str = "identity"

    def __post_init__(self):
        _check_name("layer", self.name)
        if not self.entries:
            raise ValueError(f"layer {self.name!r} has no weight entries")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        seen = set()
        for e in self.entries:
            if e.name in seen:
                raise ValueError(f"duplicate matrix name {e.name!r} in layer {self.name!r}")
            seen.add(e.name)
        for a, b in zip(self.entries, self.entries[1:]):
            if a.rows != b.cols:
                raise DimensionError(
                    f"layer {self.name!r}: entry {a.name!r} outputs width {a.rows} "
                    f"but {b.name!r} expects {b.cols}"
                )

    @property
    def input_dim(self) -> int:
        return self.entries[0].cols

    @property
    def output_dim(self) -> int:
        return self.entries[-1].rows

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for e in self.entries:
            h = e.apply(h)
        return apply_activation(self.activation, h)


@dataclass(frozen=True)
class SequentialModel:
    layers: tuple[Layer, ...]
    input_dim: int
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        seen = set()
        for layer in self.layers:
            if layer.name in seen:
                raise ValueError(f"duplicate layer name {layer.name!r}")
            seen.add(layer.name)
        if self.layers[0].input_dim != self.input_dim:
            raise DimensionError(
                f"model input_dim {self.input_dim} != first layer width "
                f"{self.layers[0].input_dim}"
            )
        for a, b in zip(self.layers, self.layers[1:]):
            if a.output_dim != b.input_dim:
                raise DimensionError(
                    f"layer {a.name!r} outputs width {a.output_dim} but "
                    f"{b.name!r} expects {b.input_dim}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class LayerwiseErrorReport:
    """Relative output error per layer; entries are (1-based index, error).

    Errors are nan where the reference output has zero norm (undefined).
    ``final_error`` always equals the last per-layer entry.
    """

    per_layer: tuple[tuple[int, float], ...]
    final_error: float
    config: Mapping | None = None


def forward(model: SequentialModel, x) -> list[np.ndarray]:
    """Run all layers on a batch of row vectors, returning every layer's output."""
    h = as_matrix(x, "input")
    if h.shape[1] != model.input_dim:
        raise DimensionError(
            f"input width {h.shape[1]} != model input_dim {model.input_dim}"
        )
    outputs = []
    for layer in model.layers:
        h = layer.forward(h)
        outputs.append(h)
    return outputs


def parameter_count(model: SequentialModel) -> int:
    return sum(e.param_count for layer in model.layers for e in layer.entries)


def mac_count(model: SequentialModel, batch: int) -> int:
    """Multiply-accumulate ops for one forward pass over ``batch`` rows."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    return sum(e.mac_count(batch) for layer in model.layers for e in layer.entries)


def same_skeleton(a: SequentialModel, b: SequentialModel) -> bool:
    if a.n_layers != b.n_layers or a.input_dim != b.input_dim:
        return False
    for la, lb in zip(a.layers, b.layers):
        if la.activation != lb.activation or len(la.entries) != len(lb.entries):
            return False
        for ea, eb in zip(la.entries, lb.entries):
            if (ea.rows, ea.cols) != (eb.rows, eb.cols):
                return False
    return True


def layerwise_error(
    original: SequentialModel,
    compressed: SequentialModel,
    calib: "CalibrationSet",
    config: Mapping | None = None,
) -> LayerwiseErrorReport:
    """Relative Frobenius error of each layer's output over shared calibration inputs.

    Both models consume the same inputs at layer 0; the compressed model runs
    its own forward pass, so errors introduced early propagate downstream.
    A layer whose reference output has zero norm reports nan and the scan
    continues.
    """
    if not same_skeleton(original, compressed):
        raise DimensionError("models do not share an architecture skeleton")
    ref = forward(original, calib.samples)
    got = forward(compressed, calib.samples)
    per_layer = []
    for i, (y_ref, y_got) in enumerate(zip(ref, got), start=1):
        denom = float(np.linalg.norm(y_ref))
        if denom == 0.0:
            per_layer.append((i, math.nan))
        else:
            per_layer.append((i, float(np.linalg.norm(y_got - y_ref)) / denom))
    return LayerwiseErrorReport(
        per_layer=tuple(per_layer),
        final_error=per_layer[-1][1],
        config=dict(config) if config is not None else None,
    )
