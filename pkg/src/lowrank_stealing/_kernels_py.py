"""Pure numpy versions of the hot kernels (fallback when the extension is absent)."""
from __future__ import annotations

import math

import numpy as np


def trunc_kl(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    return float(np.sum(u * np.log(np.maximum(u, w)) - u * np.log(np.maximum(v, w))))


def barrier_eval(alpha: np.ndarray, R: np.ndarray, floor: np.ndarray, logz: np.ndarray,
                 bound: float, t: float, derivs: bool = True):
    """Log-barrier objective for the floored KL projection.

    Returns ``(value, objective, grad, hess)``; ``value`` is ``inf`` (and the
    derivatives ``None``) outside the strict interior.
    """
    x = alpha @ R
    gap = x - floor
    lo = bound + alpha
    hi = bound - alpha
    if gap.min() <= 0.0 or lo.min() <= 0.0 or hi.min() <= 0.0:
        return math.inf, math.inf, None, None
    logx = np.log(x)
    obj = float(np.dot(x, logx - logz))
    value = t * obj - float(np.sum(np.log(gap)) + np.sum(np.log(lo)) + np.sum(np.log(hi)))
    if not derivs:
        return value, obj, None, None
    inv_gap = 1.0 / gap
    grad = R @ (t * (logx + 1.0 - logz) - inv_gap) + 1.0 / hi - 1.0 / lo
    d = t / x + inv_gap * inv_gap
    hess = (R * d) @ R.T + np.diag(1.0 / hi**2 + 1.0 / lo**2)
    return value, obj, grad, hess
