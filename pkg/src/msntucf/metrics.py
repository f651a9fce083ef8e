"""Original-scale error metrics: MAE, MRE, RMSE.

MRE divides by the ground truth; entries with truth below a tiny floor are
excluded from MRE only, and the exclusion count is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MRE_TRUTH_FLOOR = 1e-12


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    mre: float
    rmse: float
    n_entries: int
    n_mre_excluded: int

    def as_dict(self) -> dict:
        return {
            "mae": self.mae,
            "mre": self.mre,
            "rmse": self.rmse,
            "n_entries": self.n_entries,
            "n_mre_excluded": self.n_mre_excluded,
        }


def _pair_arrays(truths, preds):
    t = np.asarray(truths, dtype=np.float64)
    p = np.asarray(preds, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError(f"truth/prediction shape mismatch: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise ValueError("metrics need at least one (truth, prediction) pair")
    return t, p


def mae(truths, preds) -> float:
    t, p = _pair_arrays(truths, preds)
    return float(np.mean(np.abs(t - p)))


def mre(truths, preds) -> tuple[float, int]:
    """Mean of |truth - pred| / truth over pairs with truth above the floor."""
    t, p = _pair_arrays(truths, preds)
    keep = t > MRE_TRUTH_FLOOR
    excluded = int(t.size - keep.sum())
    if excluded == t.size:
        raise ValueError("MRE undefined: every pair has (near-)zero truth")
    return float(np.mean(np.abs(t[keep] - p[keep]) / t[keep])), excluded


def rmse(truths, preds) -> float:
    t, p = _pair_arrays(truths, preds)
    return float(np.sqrt(np.mean((t - p) ** 2)))


def report(truths, preds) -> MetricsReport:
    t, p = _pair_arrays(truths, preds)
    rel, excluded = mre(t, p)
    return MetricsReport(
        mae=mae(t, p),
        mre=rel,
        rmse=rmse(t, p),
        n_entries=int(t.size),
        n_mre_excluded=excluded,
    )
