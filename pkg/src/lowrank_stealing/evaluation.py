"""Exact and Monte-Carlo total-variation evaluation over ``O**T``."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .hmm import Tokens, all_strings

EXACT_GUARD = 10**7


class EnumerationTooLarge(ValueError):
    """``O**T`` exceeds the exact-enumeration guard; use empirical evaluation."""


def check_guard(O: int, T: int) -> None:
    if O**T > EXACT_GUARD:
        raise EnumerationTooLarge(
            f"O**T = {O}**{T} exceeds {EXACT_GUARD}; use empirical evaluation instead")


def surrogate_future_dist(tree, h: Sequence[int] = ()) -> np.ndarray:
    """``Pr[f | h]`` under a lazy pdf tree, over all futures in lexicographic order."""
    h = tuple(h)
    level: list[tuple[Tokens, float]] = [(h, 1.0)]
    for _ in range(tree.T - len(h)):
        nxt = []
        for x, p in level:
            w = tree.weights(x)
            nxt.extend((x + (o,), p * w[o]) for o in range(tree.O))
        level = nxt
    return np.array([p for _, p in level])


def _table(p, O: int, T: int) -> np.ndarray:
    if callable(p):
        return np.array([p(x) for x in all_strings(O, T)], dtype=float)
    arr = np.asarray(p, dtype=float).ravel()
    if arr.size != O**T:
        raise ValueError(f"expected {O**T} probabilities, got {arr.size}")
    return arr


def tv_exact(p, q, O: int, T: int) -> float:
    """Half the L1 distance between two distributions over ``O**T``.

    ``p`` and ``q`` are pdf callables on token tuples or lexicographic tables.
    """
    check_guard(O, T)
    return 0.5 * float(np.abs(_table(p, O, T) - _table(q, O, T)).sum())


@dataclass
class EmpiricalTV:
    estimate: float
    ci_low: float
    ci_high: float
    n: int
    noise_floor: float


def tv_empirical(sampler_fn: Callable[[np.random.Generator], Sequence[int]],
                 q_fn: Callable[[Tokens], float], n: int, rng: np.random.Generator,
                 n_boot: int = 200, level: float = 0.95) -> EmpiricalTV:
    """Plug-in TV between ``n`` samples and a reference pdf, with bootstrap CI.

    The plug-in estimate ``1 - sum_x min(p_hat(x), q(x))`` is biased upward
    for small ``n`` relative to the support size. ``noise_floor`` is the
    bootstrap mean of ``TV(p_hat*, p_hat)``, roughly the value the estimate
    takes when the two distributions coincide; the percentile interval is
    widened downward by twice that amount to cover the bias.
    """
    if n < 1000:
        raise ValueError("empirical TV needs at least 1000 samples")
    counts = Counter(tuple(sampler_fn(rng)) for _ in range(n))
    support = list(counts)
    c = np.array([counts[x] for x in support], dtype=float)
    p_hat = c / n
    q = np.array([q_fn(x) for x in support])
    est = 1.0 - float(np.minimum(p_hat, q).sum())
    boots = rng.multinomial(n, p_hat, size=n_boot) / n
    bt = 1.0 - np.minimum(boots, q[None, :]).sum(axis=1)
    noise = float(0.5 * np.abs(boots - p_hat[None, :]).sum(axis=1).mean())
    lo, hi = np.quantile(bt, [(1 - level) / 2, (1 + level) / 2])
    return EmpiricalTV(estimate=est, ci_low=max(0.0, float(lo) - 2 * noise),
                       ci_high=min(1.0, float(hi)), n=n, noise_floor=noise)
