"""Sparse 3-mode tensors stored as observed-entry lists.

Observed entries of a (users, services, times) tensor are kept as parallel
numpy arrays (structure-of-arrays) so tens of millions of observations stay
cheap to hold and slice; `Entry` tuples are materialized on demand.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

RATIO_TOL = 1e-9


@dataclass(frozen=True)
class TensorShape:
    users: int
    services: int
    times: int

    def __post_init__(self):
        for name in ("users", "services", "times"):
            dim = getattr(self, name)
            if not isinstance(dim, int) or dim < 1:
                raise ValidationError(f"{name} must be a positive integer, got {dim!r}")

    @property
    def volume(self) -> int:
        return self.users * self.services * self.times

    def astuple(self) -> tuple[int, int, int]:
        return (self.users, self.services, self.times)


class Entry(NamedTuple):
    i: int
    j: int
    k: int
    value: float


class SparseTensor:
    """Immutable store of observed (i, j, k, value) entries.

    Values are raw dataset units (seconds, kbps, ...); indices are 0-based.
    Safe to share read-only across workers once constructed.
    """

    def __init__(self, shape: TensorShape, i, j, k, values, validate: bool = True):
        self.shape = shape
        self.i = np.ascontiguousarray(i, dtype=np.int32)
        self.j = np.ascontiguousarray(j, dtype=np.int32)
        self.k = np.ascontiguousarray(k, dtype=np.int32)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        n = len(self.values)
        if not (len(self.i) == len(self.j) == len(self.k) == n):
            raise ValidationError("index/value arrays must have equal length")
        if validate:
            self._validate()

    def _validate(self):
        I, J, K = self.shape.astuple()
        for name, idx, dim in (("user", self.i, I), ("service", self.j, J), ("time", self.k, K)):
            if len(idx) and (idx.min() < 0 or idx.max() >= dim):
                bad = int(np.flatnonzero((idx < 0) | (idx >= dim))[0])
                raise ValidationError(
                    f"{name} index {idx[bad]} of entry {bad} outside [0, {dim})"
                )
        if len(self.values):
            if not np.isfinite(self.values).all():
                raise ValidationError("entry values must be finite")
            if self.values.min() < 0:
                raise ValidationError("entry values must be >= 0")
        lin = self.linear_indices()
        if len(np.unique(lin)) != len(lin):
            uniq, counts = np.unique(lin, return_counts=True)
            dup = uniq[counts > 1][0]
            J, K = self.shape.services, self.shape.times
            trip = (int(dup // (J * K)), int((dup // K) % J), int(dup % K))
            raise ValidationError(f"duplicate entry at {trip}")

    def linear_indices(self) -> np.ndarray:
        J, K = self.shape.services, self.shape.times
        return self.i.astype(np.int64) * (J * K) + self.j.astype(np.int64) * K + self.k

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[Entry]:
        for n in range(len(self)):
            yield self.entry(n)

    def entry(self, n: int) -> Entry:
        return Entry(int(self.i[n]), int(self.j[n]), int(self.k[n]), float(self.values[n]))

    def density(self) -> float:
        return len(self) / self.shape.volume

    def subset(self, positions: np.ndarray) -> "SparseTensor":
        return SparseTensor(
            self.shape,
            self.i[positions],
            self.j[positions],
            self.k[positions],
            self.values[positions],
            validate=False,
        )


@dataclass(frozen=True)
class DataSplit:
    train: SparseTensor
    valid: SparseTensor
    test: SparseTensor
    seed: int
    ratios: tuple[float, float, float]


def load_wsdream(path, shape: TensorShape, index_base: int = 0) -> SparseTensor:
    """Read `user service time value` lines into a SparseTensor.

    Lines starting with `#` and blank lines are skipped.  Negative values are
    the missing-data sentinel and are dropped; zero is a legal observation.
    """
    if index_base not in (0, 1):
        raise ConfigError(f"index_base must be 0 or 1, got {index_base}")
    I, J, K = shape.astuple()
    ii, jj, kk = array("l"), array("l"), array("l")
    vv = array("d")
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ParseError(f"line {line_no}: expected 4 fields, got {len(fields)}")
            try:
                u = int(fields[0])
                s = int(fields[1])
                t = int(fields[2])
                v = float(fields[3])
            except ValueError:
                raise ParseError(f"line {line_no}: non-numeric field in {line!r}") from None
            if v < 0:  # missing-data sentinel
                continue
            if not math.isfinite(v):
                raise ValidationError(f"line {line_no}: non-finite value {fields[3]}")
            u -= index_base
            s -= index_base
            t -= index_base
            if not (0 <= u < I and 0 <= s < J and 0 <= t < K):
                raise ValidationError(
                    f"line {line_no}: index ({u},{s},{t}) outside shape {shape.astuple()}"
                )
            ii.append(u)
            jj.append(s)
            kk.append(t)
            vv.append(v)
    return SparseTensor(shape, ii, jj, kk, vv)


def save_entries(path, t: SparseTensor, index_base: int = 0) -> None:
    """Write a SparseTensor back to the loader's text format."""
    with open(path, "w", encoding="utf-8") as fh:
        for n in range(len(t)):
            fh.write(
                f"{t.i[n] + index_base} {t.j[n] + index_base} "
                f"{t.k[n] + index_base} {float(t.values[n])!r}\n"
            )


def _check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    r = tuple(float(x) for x in ratios)
    if len(r) != 3:
        raise ConfigError(f"expected 3 split ratios, got {len(r)}")
    if any(x < 0 for x in r):
        raise ConfigError(f"split ratios must be non-negative, got {r}")
    if abs(sum(r) - 1.0) > RATIO_TOL:
        raise ConfigError(f"split ratios must sum to 1 within {RATIO_TOL}, got sum {sum(r)!r}")
    return r


def partition_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Entry counts per split: train and valid get floors, test the remainder."""
    r = _check_ratios(ratios)
    n_train = math.floor(r[0] * n)
    n_valid = math.floor(r[1] * n)
    return n_train, n_valid, n - n_train - n_valid


def split(t: SparseTensor, ratios: Sequence[float], seed: int) -> DataSplit:
    """Partition entries by a counter-based pseudorandom permutation.

    Philox is used so the permutation depends only on the seed, not on any
    platform default generator state.
    """
    r = _check_ratios(ratios)
    if seed < 0:
        raise ConfigError(f"split seed must be non-negative, got {seed}")
    n = len(t)
    n_train, n_valid, _ = partition_sizes(n, r)
    perm = np.random.Generator(np.random.Philox(key=seed)).permutation(n)
    return DataSplit(
        train=t.subset(perm[:n_train]),
        valid=t.subset(perm[n_train:n_train + n_valid]),
        test=t.subset(perm[n_train + n_valid:]),
        seed=seed,
        ratios=r,
    )


def density(t: SparseTensor) -> float:
    return t.density()
