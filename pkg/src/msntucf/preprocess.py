"""Value normalization: log transform plus min-max into the sigmoid's range.

The statistics are fitted on training entries only; test-time values outside
the fitted range are clamped at transform time, while metrics always compare
against raw targets.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .sparse import SparseTensor


@dataclass(frozen=True)
class NormalizationParams:
    log_applied: bool
    z_min: float
    z_max: float

    @property
    def degenerate(self) -> bool:
        return not self.z_max > self.z_min


def fit(train: SparseTensor) -> NormalizationParams:
    """Statistics of ln(1+v) over the training entries."""
    if len(train) == 0:
        raise ValidationError("cannot fit normalization on an empty training set")
    z = np.log1p(train.values)
    params = NormalizationParams(log_applied=True, z_min=float(z.min()), z_max=float(z.max()))
    if params.degenerate:
        warnings.warn(
            "normalization range is degenerate (all training values equal); "
            "transform will return 0.5",
            RuntimeWarning,
        )
    return params


def transform(v, params: NormalizationParams):
    """Map raw value(s) >= 0 into [0, 1], clamping out-of-range inputs."""
    arr = np.asarray(v, dtype=np.float64)
    if np.any(arr < 0):
        raise ValidationError("transform expects non-negative values")
    z = np.log1p(arr)
    if params.degenerate:
        out = np.full_like(z, 0.5)
    else:
        out = np.clip((z - params.z_min) / (params.z_max - params.z_min), 0.0, 1.0)
    return float(out) if np.isscalar(v) else out


def inverse_transform(u, params: NormalizationParams):
    """Undo transform; round-trips any value whose log lies in the fitted range."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValidationError("inverse_transform expects values in [0, 1]")
    out = np.expm1(arr * (params.z_max - params.z_min) + params.z_min)
    return float(out) if np.isscalar(u) else out
