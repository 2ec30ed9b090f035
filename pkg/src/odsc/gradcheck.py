"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np


def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5,
                       indices=None) -> np.ndarray:
    """Central differences ``(f(x+h) - f(x-h)) / 2h``, one coordinate at a time.

    With ``indices`` (flat positions) only those coordinates are probed and a
    1-D array of their derivatives is returned.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else [int(i) for i in indices]
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        out[j] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape) if indices is None else out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).

    ``floor`` stops round-off in near-zero coordinates from dominating.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(fn: Callable[[np.ndarray], float], analytic: np.ndarray, point: np.ndarray,
               h: float = 1e-5, floor: float = 1e-6, indices=None) -> float:
    """Max relative error between ``analytic`` and the central-difference gradient of ``fn`` at ``point``.

    ``indices`` restricts the comparison to a subset of flat coordinates,
    which keeps checks on large tensors affordable.
    """
    numeric = numerical_gradient(fn, point, h, indices)
    if indices is not None:
        analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)[np.asarray(indices, dtype=np.int64)]
    return relative_error(analytic, numeric, floor)
