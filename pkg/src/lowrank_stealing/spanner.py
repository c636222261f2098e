"""Barycentric spanners: exact volume-doubling search, a robust SVD-thresholded
wrapper for nearly low-rank collections, and an LP-based verifier.

All functions take the collection as an ``(n, d)`` array whose rows are the
vectors ``v_1..v_n``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

log = logging.getLogger(__name__)

SWAP_THRESHOLD = 2.0 + 1e-9
_COND_WARN = 1e12


class RankDeficientError(ValueError):
    """The collection does not span its ambient space; use :func:`robust_spanner`."""


class SpannerIterationError(RuntimeError):
    pass


@dataclass
class SpannerResult:
    indices: list[int]
    C: float = 2.0
    residual_bound: float = 0.0
    sigma: np.ndarray | None = None
    rank_raw: int = 0
    rank_exceeded: bool = False
    log_volumes: list[float] = field(default_factory=list)
    swaps: int = 0

    def __len__(self) -> int:
        return len(self.indices)


def _as_rows(vectors) -> np.ndarray:
    V = np.asarray(vectors, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.ndim != 2:
        raise ValueError("expected an (n, d) array of vectors")
    return V


def _log_volume(B: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(B)
    return logdet if sign != 0 else -math.inf


def exact_spanner(vectors) -> SpannerResult:
    """(2, 0)-spanner of a collection spanning its ambient space ``R^d``.

    Greedily seeds a basis by largest residual norm outside the current span,
    then swaps in any vector needing a coefficient above 2; each swap at least
    doubles the spanned volume.
    """
    V = _as_rows(vectors)
    n, d = V.shape
    if n == 0:
        return SpannerResult(indices=[])
    M = V.T
    sigma = np.linalg.svd(M, compute_uv=False)
    if sigma.size < d or sigma[d - 1] <= 1e-13 * max(sigma[0], 1e-300):
        raise RankDeficientError(f"{d}-dim collection of {n} vectors is rank deficient")
    sig_min = sigma[d - 1]

    chosen: list[int] = []
    Q = np.zeros((d, 0))
    for _ in range(d):
        resid = M - Q @ (Q.T @ M)
        norms = np.linalg.norm(resid, axis=0)
        norms[chosen] = -1.0
        j = int(np.argmax(norms))
        # the best residual always clears sigma_d / sqrt(n)
        assert norms[j] >= sig_min / math.sqrt(n) * (1 - 1e-9)
        chosen.append(j)
        q = resid[:, j] / norms[j]
        Q = np.column_stack([Q, q])

    cap = int(64 * d * math.log2(sigma[0] / sig_min + 2)) + 1
    vols = [_log_volume(M[:, chosen])]
    swaps = 0
    while True:
        B = M[:, chosen]
        cond = np.linalg.cond(B)
        if cond > _COND_WARN:
            log.warning("spanner basis condition number %.3g", cond)
        coeffs = np.linalg.solve(B, M)
        j, i = np.unravel_index(int(np.argmax(np.abs(coeffs))), coeffs.shape)
        if abs(coeffs[j, i]) < SWAP_THRESHOLD:
            break
        if swaps >= cap:
            raise SpannerIterationError(f"no (2,0)-spanner after {swaps} swaps")
        chosen[j] = int(i)
        swaps += 1
        vols.append(_log_volume(M[:, chosen]))
    return SpannerResult(indices=chosen, C=2.0, residual_bound=0.0, sigma=sigma,
                         rank_raw=d, log_volumes=vols, swaps=swaps)


def robust_spanner(vectors, s: int, gamma: float, truncate: bool = False) -> SpannerResult:
    """Approximate (2, 3 gamma s sqrt(nd))-spanner of a nearly rank-``s`` collection.

    Keeps the left singular directions with singular value above
    ``gamma * sqrt(n)``, projects onto them and runs :func:`exact_spanner`
    there. Without ``truncate`` more than ``s`` directions are kept if the
    data demand it (``rank_exceeded`` is set); with ``truncate`` at most ``s``
    are kept and the residual bound is computed from the discarded spectrum.
    """
    V = _as_rows(vectors)
    n, d = V.shape
    bound = 3.0 * gamma * s * math.sqrt(n * d)
    if n == 0:
        return SpannerResult(indices=[], residual_bound=0.0, sigma=np.zeros(0))
    M = V.T
    U, sigma, _ = np.linalg.svd(M, full_matrices=False)
    t_raw = int(np.sum(sigma > gamma * math.sqrt(n)))
    if n <= s:
        # every vector is its own representative
        return SpannerResult(indices=list(range(n)), residual_bound=0.0, sigma=sigma,
                             rank_raw=t_raw)
    t = min(t_raw, d)
    exceeded = t_raw > s
    if exceeded:
        log.info("robust spanner: %d directions above threshold, bound s=%d", t_raw, s)
    if truncate:
        t = min(t, s)
    if t == 0:
        return SpannerResult(indices=[], residual_bound=bound, sigma=sigma,
                             rank_raw=t_raw, rank_exceeded=exceeded)
    Y = U[:, :t]
    inner = exact_spanner((Y.T @ M).T)
    if truncate and exceeded:
        tail = sigma[t] if t < sigma.size else 0.0
        bound = math.sqrt(d) * (2 * t + 1) * tail
    return SpannerResult(indices=inner.indices, C=2.0, residual_bound=bound, sigma=sigma,
                         rank_raw=t_raw, rank_exceeded=exceeded,
                         log_volumes=inner.log_volumes, swaps=inner.swaps)


@dataclass
class SpannerCheck:
    coefficients: np.ndarray
    residuals: np.ndarray
    passed: bool

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0


def l1_fit(target: np.ndarray, basis: np.ndarray, C: float) -> tuple[np.ndarray, float]:
    """Minimize ``||target - basis.T @ c||_1`` subject to ``|c_i| <= C``.

    ``basis`` is ``(t, d)``. Solved as a linear program with slack variables.
    """
    target = np.asarray(target, dtype=float)
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    t, d = basis.shape
    if t == 0 or C == 0:
        return np.zeros(t), float(np.abs(target).sum())
    Bt = sparse.csr_matrix(basis.T)
    eye = sparse.identity(d, format="csr")
    A_ub = sparse.vstack([sparse.hstack([-Bt, -eye]), sparse.hstack([Bt, -eye])], format="csr")
    b_ub = np.concatenate([-target, target])
    cost = np.concatenate([np.zeros(t), np.ones(d)])
    bounds = [(-C, C)] * t + [(0, None)] * d
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"L1 fit LP failed: {res.message}")
    c = res.x[:t]
    # report the residual of the returned coefficients, not the LP slack total
    return c, float(np.abs(target - basis.T @ c).sum())


def verify_spanner(vectors, indices, C: float, gamma: float) -> SpannerCheck:
    """Best bounded-coefficient L1 reconstruction of every vector from the spanner."""
    V = _as_rows(vectors)
    idx = list(indices)
    basis = V[idx]
    coeffs = np.zeros((V.shape[0], len(idx)))
    resid = np.zeros(V.shape[0])
    for j, v in enumerate(V):
        coeffs[j], resid[j] = l1_fit(v, basis, C)
    return SpannerCheck(coefficients=coeffs, residuals=resid,
                        passed=bool(np.all(resid <= gamma + 1e-8)))
