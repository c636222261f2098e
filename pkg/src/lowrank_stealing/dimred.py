"""Importance-sampled sketches of conditional distributions and truncated KL.

A family of distributions ``D_1..D_m`` over a huge domain is represented by
their densities on a pooled multiset of samples, reweighted by the pooled
mixture density. Bounded linear combinations of the sketches then preserve
L1 norms and truncated KL divergences of the corresponding combinations of
the distributions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .hmm import Tokens


@dataclass
class SketchBundle:
    """Output of :func:`build_vectors` for histories of a common length ``t``.

    ``U[i]`` is the sketch of history ``histories[i]``; ``X`` is the pooled
    multiset of futures (duplicates keep separate coordinates).
    """

    t: int
    histories: list[Tokens]
    X: list[Tokens]
    U: np.ndarray
    w: np.ndarray
    k: int
    index: dict[Tokens, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.index = {h: i for i, h in enumerate(self.histories)}

    def u(self, h: Sequence[int]) -> np.ndarray:
        return self.U[self.index[tuple(h)]]


def sketch_from_densities(V: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """``(U, w)`` from densities ``V[i, j] = D_i[X_j]`` on the pooled samples."""
    V = np.asarray(V, dtype=float)
    total = k * V.sum(axis=0)
    if total.size and total.min() < 1e-300:
        raise ValueError("pooled density vanishes on a sampled point; base is not positive")
    w = 1.0 / total
    return V * w, w


def build_vectors(oracle, t: int, histories: Sequence[Sequence[int]], k: int,
                  rng: np.random.Generator) -> SketchBundle:
    """Sketch ``Pr[. | h]`` for each history using ``k`` conditional samples apiece."""
    if k < 1:
        raise ValueError("k must be positive")
    hs = [tuple(h) for h in histories]
    for h in hs:
        if len(h) != t:
            raise ValueError(f"history {h} does not have length {t}")
    X: list[Tokens] = []
    for h in hs:
        # full-length histories have only the empty future
        X.extend(oracle.cond_samples(h, k, rng) if t < oracle.T else [()] * k)
    uniq: dict[Tokens, int] = {}
    cols = np.array([uniq.setdefault(f, len(uniq)) for f in X], dtype=np.intp)
    futures = list(uniq)
    Vu = np.array([[oracle.cond_pdf(h, f) for f in futures] for h in hs])
    U, w = sketch_from_densities(Vu[:, cols], k)
    return SketchBundle(t=t, histories=hs, X=X, U=U, w=w, k=k)


def sketch_distributions(D: np.ndarray, k: int, rng: np.random.Generator):
    """Sketch explicit distributions (rows of ``D``) over ``range(N)``.

    Returns ``(X, U, w)`` with ``X`` the pooled sample indices.
    """
    D = np.asarray(D, dtype=float)
    m, N = D.shape
    X = np.concatenate([rng.choice(N, size=k, p=D[i] / D[i].sum()) for i in range(m)])
    U, w = sketch_from_densities(D[:, X], k)
    return X, U, w


def sketch_distributions_merged(D: np.ndarray, k: int, rng: np.random.Generator):
    """Same law as :func:`sketch_distributions` with duplicate coordinates merged.

    A coordinate's column depends only on the sampled point, so the sketch is
    fully described by the distinct points, their columns and multiplicities.
    Returns ``(support, U, w, mult)``; memory is ``O(m N)`` however large ``k``.
    """
    D = np.asarray(D, dtype=float)
    m, N = D.shape
    counts = sum(rng.multinomial(k, D[i] / D[i].sum()) for i in range(m))
    support = np.flatnonzero(counts)
    U, w = sketch_from_densities(D[:, support], k)
    return support, U, w, counts[support].astype(float)


def trunc_kl_scalar(x: float, y: float, c: float) -> float:
    """``x log max(x, c) - x log max(y, c)``."""
    if c <= 0:
        raise ValueError("truncation level must be positive")
    return x * math.log(max(x, c)) - x * math.log(max(y, c))


def trunc_kl_vec(u, v, w) -> float:
    """Sum of :func:`trunc_kl_scalar` over coordinates with per-coordinate level ``w``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {v.shape}")
    w = np.asarray(w, dtype=float)
    if w.ndim and w.shape != u.shape:
        raise ValueError(f"dimension mismatch {w.shape} vs {u.shape}")
    if np.any(w <= 0):
        raise ValueError("truncation levels must be positive")
    return kernels.trunc_kl(u, v, np.broadcast_to(w, u.shape))


@dataclass
class CheckResult:
    passed: bool
    worst_gap: float
    trials: int


def _random_coeffs(m: int, r: float, max_nonzero: int, rng: np.random.Generator) -> np.ndarray:
    c = np.zeros(m)
    nnz = int(rng.integers(1, min(max_nonzero, m) + 1))
    support = rng.choice(m, size=nnz, replace=False)
    c[support] = rng.uniform(-r, r, size=nnz)
    return c


def check_representative(D: np.ndarray, U: np.ndarray, r: float, gamma: float, trials: int,
                         rng: np.random.Generator, coeffs: np.ndarray | None = None,
                         mult: np.ndarray | None = None) -> CheckResult:
    """Worst ``| ||c.D||_1 - ||c.U||_1 |`` over random ``c`` with ``|c_i| <= r``.

    ``D`` holds the exact distributions as rows; at most ``r`` coefficients
    are nonzero. Extra coefficient vectors can be passed in ``coeffs``.
    ``mult`` gives column multiplicities of a merged sketch.
    """
    D = np.asarray(D, dtype=float)
    U = np.asarray(U, dtype=float)
    mult = np.ones(U.shape[1]) if mult is None else np.asarray(mult, dtype=float)
    m = D.shape[0]
    nz = max(1, int(r))
    cs = [_random_coeffs(m, r, nz, rng) for _ in range(trials)]
    if coeffs is not None:
        cs.extend(np.atleast_2d(coeffs))
    C = np.array(cs)
    gaps = np.abs(np.abs(C @ D).sum(axis=1) - np.abs(C @ U) @ mult)
    worst = float(gaps.max()) if gaps.size else 0.0
    return CheckResult(passed=worst <= gamma, worst_gap=worst, trials=len(cs))


def _weighted_trunc_kl(u, v, w, mult) -> float:
    return float(np.sum(mult * u * (np.log(np.maximum(u, w)) - np.log(np.maximum(v, w)))))


def check_kl_preserving(D: np.ndarray, U: np.ndarray, w: np.ndarray, r: float, gamma: float,
                        tau: float, trials: int, rng: np.random.Generator,
                        mult: np.ndarray | None = None) -> CheckResult:
    """Worst gap between exact and sketched truncated KL of random combinations.

    Compares ``KL_{>=tau*}(c.D || c'.D)`` with ``KL_{>=tau* w}(c.U || c'.U)``
    for ``|c_i| <= r``, ``|c'_i| <= r / tau`` and ``tau* ~ U[tau, 1]``.
    """
    D = np.asarray(D, dtype=float)
    U = np.asarray(U, dtype=float)
    w = np.asarray(w, dtype=float)
    m = D.shape[0]
    nz = max(1, int(r))
    worst = 0.0
    for _ in range(trials):
        c = _random_coeffs(m, r, nz, rng)
        c2 = _random_coeffs(m, r / tau, nz, rng)
        ts = rng.uniform(tau, 1.0)
        exact = kernels.trunc_kl(c @ D, c2 @ D, np.full(D.shape[1], ts))
        if mult is None:
            sketch = kernels.trunc_kl(c @ U, c2 @ U, ts * w)
        else:
            sketch = _weighted_trunc_kl(c @ U, c2 @ U, ts * w, mult)
        worst = max(worst, abs(exact - sketch))
    return CheckResult(passed=worst <= gamma, worst_gap=worst, trials=trials)


def relative_discrepancy(D: np.ndarray, Dp: np.ndarray, k: int, rng: np.random.Generator) -> float:
    """Max over ``a in X_i`` and ``j`` of ``|D_j[a] - D'_j[a]| / D_i[a]``.

    ``X_i`` holds ``k`` draws from the perturbed distribution ``D'_i``.
    """
    D = np.asarray(D, dtype=float)
    Dp = np.asarray(Dp, dtype=float)
    m, N = D.shape
    diff = np.abs(D - Dp).max(axis=0)
    worst = 0.0
    for i in range(m):
        Xi = rng.choice(N, size=k, p=Dp[i] / Dp[i].sum())
        with np.errstate(divide="ignore"):
            ratio = diff[Xi] / D[i, Xi]
        worst = max(worst, float(ratio.max()))
    return worst


def perturbation_audit(hmm, oracle, histories: Sequence[Sequence[int]], k: int,
                       rng: np.random.Generator) -> float:
    """Relative pdf discrepancy between the exact model and the oracle surrogate.

    Futures are drawn from the surrogate's conditionals at each history and
    compared against the exact HMM conditionals.
    """
    from .evaluation import surrogate_future_dist

    D = np.array([hmm.conditional_future_dist(h) for h in histories])
    Dp = np.array([surrogate_future_dist(oracle, h) for h in histories])
    return relative_discrepancy(D, Dp, k, rng)
