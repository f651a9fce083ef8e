"""Finite-difference oracle used by the gradient tests.

Kept independent of the package's autodiff: it only pokes array elements and
re-runs a scalar-valued closure.
"""

import numpy as np

STEP = 1e-5


def numeric_grad(f, x, step=STEP):
    """Central-difference gradient of scalar f with respect to array x.

    x is perturbed in place element by element, so f must read x afresh on
    every call (closures over the same array do).
    """
    x = np.asarray(x)
    grad = np.zeros_like(x, dtype=np.float64)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for idx in range(flat_x.size):
        orig = flat_x[idx]
        flat_x[idx] = orig + step
        hi = f()
        flat_x[idx] = orig - step
        lo = f()
        flat_x[idx] = orig
        flat_g[idx] = (hi - lo) / (2.0 * step)
    return grad


def rel_error(analytic, numeric, floor=1e-12):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
