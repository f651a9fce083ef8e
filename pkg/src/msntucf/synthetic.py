"""Ground-truth Tucker generators for desk-scale pipeline verification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .sparse import SparseTensor, TensorShape

VALUE_LO = 0.05
VALUE_HI = 0.95


@dataclass(frozen=True)
class GeneratorSpec:
    shape: TensorShape
    ranks: tuple[int, int, int]
    density: float
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if any(r < 1 for r in self.ranks):
            raise ConfigError(f"generator ranks must be >= 1, got {self.ranks}")
        if not 0.0 < self.density <= 1.0:
            raise ConfigError(f"density must be in (0, 1], got {self.density}")
        if self.noise < 0:
            raise ConfigError(f"noise level must be >= 0, got {self.noise}")


def dense_tucker(core: np.ndarray, A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Weighted sum of all rank-one outer products of the factor columns."""
    return np.einsum("pqr,ip,jq,kr->ijk", core, A, B, C)


def generate(spec: GeneratorSpec) -> SparseTensor:
    """Sample observed entries of a noiseless-or-noisy low-rank tensor.

    Values are mapped affinely into (0, 1) so the standard log/min-max
    preprocessing and the sigmoid output head both apply unchanged.
    """
    rng = np.random.default_rng(spec.seed)
    I, J, K = spec.shape.astuple()
    P, Q, R = spec.ranks
    core = rng.uniform(-1.0, 1.0, size=(P, Q, R))
    A = rng.uniform(-1.0, 1.0, size=(I, P))
    B = rng.uniform(-1.0, 1.0, size=(J, Q))
    C = rng.uniform(-1.0, 1.0, size=(K, R))
    dense = dense_tucker(core, A, B, C)
    lo, hi = dense.min(), dense.max()
    if hi > lo:
        dense = VALUE_LO + (dense - lo) * (VALUE_HI - VALUE_LO) / (hi - lo)
    else:
        dense = np.full_like(dense, 0.5 * (VALUE_LO + VALUE_HI))
    if spec.noise > 0:
        dense = np.clip(dense + rng.normal(0.0, spec.noise, size=dense.shape), 0.0, None)
    volume = spec.shape.volume
    n_obs = int(round(spec.density * volume))
    if n_obs == 0:
        raise ConfigError(f"density {spec.density} yields zero observed entries")
    cells = np.sort(rng.choice(volume, size=n_obs, replace=False))
    i = cells // (J * K)
    j = (cells // K) % J
    k = cells % K
    return SparseTensor(spec.shape, i, j, k, dense[i, j, k], validate=False)
