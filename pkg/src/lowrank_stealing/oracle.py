"""Sample and exact-pdf access to a positive surrogate of a black-box distribution.

The surrogate is the distribution induced by a lazily built weighted prefix
tree: the first time a prefix is touched its next-character weights are
estimated from conditional queries to the base distribution, floored for
positivity, and frozen. Every later pdf or sample query reads the frozen
weights, so all answers are consistent with one fixed distribution.
"""
from __future__ import annotations

import json
import logging
import math
import threading
from fractions import Fraction
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .hmm import Tokens, ZeroProbabilityPrefix, as_tokens

log = logging.getLogger(__name__)

# edge weights are integers over this denominator, so every node's weights
# sum to exactly 1.0 in floating point
_GRID_BITS = 48
_GRID = 1 << _GRID_BITS

MODES = ("sampled", "exact-base")


class ConditionalQueryAccess(Protocol):
    """What the oracle needs from the distribution it wraps."""

    seq_len: int

    @property
    def alphabet_size(self) -> int: ...

    def conditional_samples(self, h: Sequence[int], n: int, rng: np.random.Generator) -> np.ndarray: ...

    def next_char_probs(self, h: Sequence[int]) -> np.ndarray: ...


def positivity_floor(eps: float, alphabet_size: int) -> float:
    return eps / (10 * alphabet_size) ** 2


def floor_and_normalize(p: np.ndarray, floor: float) -> np.ndarray:
    """Raise entries below ``floor`` to it and rescale the rest to total one.

    Rescaling can push further entries under the floor, so this repeats until
    stable. Requires ``len(p) * floor < 1``.
    """
    p = np.asarray(p, dtype=float).copy()
    n = p.size
    if n * floor >= 1.0:
        raise ValueError(f"floor {floor} too large for {n} outcomes")
    p = np.maximum(p, 0.0)
    if p.sum() <= 0:
        return np.full(n, 1.0 / n)
    clamped = np.zeros(n, dtype=bool)
    while True:
        free = ~clamped
        scale = (1.0 - floor * clamped.sum()) / p[free].sum()
        q = np.where(clamped, floor, p * scale)
        newly = free & (q < floor)
        if not newly.any():
            return q
        clamped |= newly


def quantize(p: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Round a distribution onto the dyadic grid, keeping entries >= floor.

    Entries are rounded up and the excess is taken from the largest one, so
    the result sums to exactly 1.0.
    """
    n = np.ceil(np.asarray(p, dtype=float) * _GRID).astype(np.int64)
    n = np.maximum(n, math.ceil(floor * _GRID))
    excess = int(n.sum()) - _GRID
    n[int(np.argmax(n))] -= excess
    return n.astype(float) / _GRID


class LazyPdfTree:
    """Consistent weighted prefix tree over ``O**T``.

    Parameters
    ----------
    base : ConditionalQueryAccess
        Black-box distribution answering conditional queries.
    eps : float
        Closeness parameter; next-character weights are floored at
        ``eps / (10 O)**2``.
    samples_per_node : int
        Conditional queries spent the first time a node is visited.
    seed : int
        Global seed; each node draws from a stream derived from
        ``(seed, prefix)`` so the tree does not depend on visit order.
    mode : {"sampled", "exact-base"}
        ``"exact-base"`` uses the base's exact next-character law instead of
        empirical frequencies (no query noise).
    """

    def __init__(
        self,
        base: ConditionalQueryAccess,
        eps: float = 0.01,
        samples_per_node: int = 20_000,
        seed: int = 0,
        mode: str = "sampled",
    ):
        if not 0 < eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if samples_per_node < 1:
            raise ValueError("samples_per_node must be positive")
        self.base = base
        self.eps = float(eps)
        self.samples_per_node = int(samples_per_node)
        self.seed = int(seed)
        self.mode = mode
        self.T = int(base.seq_len)
        self.O = int(base.alphabet_size)
        self.floor = positivity_floor(self.eps, self.O)
        self._weights: dict[Tokens, np.ndarray] = {}
        self._queries = 0
        self._lock = threading.Lock()

    # -- node visits ------------------------------------------------------

    def node_rng(self, h: Tokens) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(len(h), *h)))

    def estimate_next_char(self, h: Sequence[int], m: int, rng: np.random.Generator) -> np.ndarray:
        """Empirical next-character law from ``m`` conditional queries at ``h``, floored."""
        if m < 1:
            raise ValueError("need at least one conditional query")
        futures = self.base.conditional_samples(h, m, rng)
        self._queries += m
        counts = np.bincount(futures[:, 0], minlength=self.O).astype(float)
        return quantize(floor_and_normalize(counts / m, self.floor), self.floor)

    def weights(self, h: Sequence[int]) -> np.ndarray:
        """Frozen next-character weights at ``h``, visiting the node if needed."""
        h = tuple(h)
        w = self._weights.get(h)
        if w is not None:
            return w
        with self._lock:
            w = self._weights.get(h)
            if w is not None:
                return w
            if len(h) >= self.T:
                raise ValueError("leaves have no outgoing edges")
            try:
                if self.mode == "exact-base":
                    w = quantize(floor_and_normalize(self.base.next_char_probs(h), self.floor),
                                 self.floor)
                else:
                    w = self.estimate_next_char(h, self.samples_per_node, self.node_rng(h))
            except ZeroProbabilityPrefix:
                # the surrogate reaches prefixes the base never emits; any law
                # works there, so take the uniform one
                log.debug("prefix %s has base probability zero; using uniform weights", h)
                w = quantize(np.full(self.O, 1.0 / self.O), self.floor)
            w.setflags(write=False)
            self._weights[h] = w
            return w

    # -- queries ----------------------------------------------------------

    def _check(self, h: Sequence[int]) -> Tokens:
        h = as_tokens(h, self.O)
        if len(h) > self.T:
            raise ValueError(f"string of length {len(h)} exceeds T={self.T}")
        return h

    def pdf_query(self, h: Sequence[int]) -> float:
        """Probability under the surrogate that a string starts with ``h``."""
        h = self._check(h)
        p = 1.0
        for j, o in enumerate(h):
            p *= self.weights(h[:j])[o]
        return p

    def pdf_query_exact(self, h: Sequence[int]) -> Fraction:
        """Same as :meth:`pdf_query` in exact rational arithmetic."""
        h = self._check(h)
        p = Fraction(1)
        for j, o in enumerate(h):
            p *= Fraction(float(self.weights(h[:j])[o]))
        return p

    def cond_pdf(self, h: Sequence[int], f: Sequence[int]) -> float:
        """``Pr[f | h]`` as the product of edge weights from ``h`` to ``h + f``."""
        h = self._check(h)
        x = h + self._check(f)
        if len(x) > self.T:
            raise ValueError("history plus future longer than T")
        p = 1.0
        for j in range(len(h), len(x)):
            p *= self.weights(x[:j])[x[j]]
        return p

    def next_char(self, h: Sequence[int]) -> np.ndarray:
        return self.weights(self._check(h))

    def cond_sample(self, h: Sequence[int], rng: np.random.Generator) -> Tokens:
        """Walk down from ``h`` choosing children by their frozen weights."""
        h = self._check(h)
        if len(h) >= self.T:
            raise ValueError("cannot sample a future of a full-length string")
        x = list(h)
        while len(x) < self.T:
            w = self.weights(tuple(x))
            o = int(np.searchsorted(np.cumsum(w), rng.random(), side="right"))
            x.append(min(o, self.O - 1))
        return tuple(x[len(h):])

    def cond_samples(self, h: Sequence[int], n: int, rng: np.random.Generator) -> list[Tokens]:
        """``n`` independent futures of ``h``, as a multiset grouped by prefix.

        Splits the batch over children multinomially at each node, which
        yields the same multiset law as ``n`` separate walks.
        """
        h = self._check(h)
        if len(h) >= self.T:
            raise ValueError("cannot sample a future of a full-length string")
        out: list[Tokens] = []
        stack: list[tuple[Tokens, int]] = [(h, n)]
        while stack:
            x, cnt = stack.pop()
            if len(x) == self.T:
                out.extend([x[len(h):]] * cnt)
                continue
            counts = rng.multinomial(cnt, self.weights(x))
            for o in range(self.O - 1, -1, -1):
                if counts[o]:
                    stack.append((x + (o,), int(counts[o])))
        return out

    # -- bookkeeping ------------------------------------------------------

    def budget_report(self) -> dict:
        return {"conditional_queries": self._queries, "visited_nodes": len(self._weights)}

    @property
    def queries(self) -> int:
        return self._queries

    def visited(self) -> dict[Tokens, np.ndarray]:
        return dict(self._weights)

    def snapshot(self) -> list[tuple[list[int], list[float]]]:
        return [(list(h), w.tolist()) for h, w in sorted(self._weights.items())]

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.snapshot()))


def pdf_from_snapshot(snapshot: list[tuple[list[int], list[float]]], x: Sequence[int]) -> float:
    """Recompute a pdf answer from dumped edge weights alone."""
    table = {tuple(h): w for h, w in snapshot}
    p = 1.0
    for j, o in enumerate(x):
        p *= table[tuple(x[:j])][o]
    return p
