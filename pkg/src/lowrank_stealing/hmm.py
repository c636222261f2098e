"""Ground-truth hidden Markov model engine.

Exact sequence probabilities, exact conditional distributions over futures,
conditional sampling, and the history-by-future conditional matrices used to
certify that an HMM with ``S`` states generates a rank-``S`` distribution.

Conventions: tokens are integers ``0..O-1``; a token string is a tuple of
ints; ``trans[s_next, s]`` and ``emit[x, s]`` are column-stochastic.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Tokens = tuple[int, ...]

_STOCHASTIC_TOL = 1e-12


class InvalidModelError(ValueError):
    """Raised when HMM parameters violate the stochasticity invariants."""


class ZeroProbabilityPrefix(ValueError):
    """Raised when conditioning on a prefix of probability zero."""


def as_tokens(seq: Iterable[int], alphabet_size: int | None = None) -> Tokens:
    toks = tuple(int(x) for x in seq)
    if alphabet_size is not None:
        for x in toks:
            if not 0 <= x < alphabet_size:
                raise ValueError(f"token {x} outside alphabet [0, {alphabet_size})")
    return toks


def all_strings(alphabet_size: int, length: int) -> list[Tokens]:
    """Every string of the given length, in lexicographic order."""
    return list(itertools.product(range(alphabet_size), repeat=length))


def _check_stochastic(name: str, arr: np.ndarray, axis: int) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidModelError(f"{name} has non-finite entries")
    if np.any(arr < 0):
        raise InvalidModelError(f"{name} has negative entries")
    sums = arr.sum(axis=axis)
    if np.any(np.abs(sums - 1.0) > _STOCHASTIC_TOL):
        raise InvalidModelError(f"{name} does not sum to 1 (max dev {np.max(np.abs(sums - 1)):.3g})")


@dataclass(frozen=True)
class Hmm:
    """Hidden Markov model over ``O`` tokens emitting length-``T`` strings.

    Parameters
    ----------
    mu : (S,) array
        Initial state distribution.
    trans : (S, S) array
        ``trans[s_next, s]`` is the probability of moving from ``s`` to
        ``s_next``; columns sum to one.
    emit : (O, S) array
        ``emit[x, s]`` is the probability of emitting ``x`` in state ``s``.
    seq_len : int
        Length ``T`` of generated strings.
    """

    mu: np.ndarray
    trans: np.ndarray
    emit: np.ndarray
    seq_len: int

    def __post_init__(self) -> None:
        mu = np.array(self.mu, dtype=float)
        trans = np.array(self.trans, dtype=float)
        emit = np.array(self.emit, dtype=float)
        if mu.ndim != 1 or mu.size == 0:
            raise InvalidModelError("mu must be a non-empty vector")
        S = mu.size
        if trans.shape != (S, S):
            raise InvalidModelError(f"trans must be {S}x{S}, got {trans.shape}")
        if emit.ndim != 2 or emit.shape[1] != S or emit.shape[0] == 0:
            raise InvalidModelError(f"emit must be Ox{S}, got {emit.shape}")
        if int(self.seq_len) < 1:
            raise InvalidModelError("seq_len must be positive")
        _check_stochastic("mu", mu, axis=0)
        _check_stochastic("trans", trans, axis=0)
        _check_stochastic("emit", emit, axis=0)
        for arr in (mu, trans, emit):
            arr.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "trans", trans)
        object.__setattr__(self, "emit", emit)
        object.__setattr__(self, "seq_len", int(self.seq_len))

    @property
    def num_states(self) -> int:
        return self.mu.size

    @property
    def alphabet_size(self) -> int:
        return self.emit.shape[0]

    S = num_states
    O = alphabet_size

    @property
    def T(self) -> int:
        return self.seq_len

    # -- forward recursion -------------------------------------------------

    def _forward(self, h: Sequence[int]) -> np.ndarray:
        """Unnormalized state vector ``Pr[h, s_{t+1} = s]`` after reading ``h``."""
        a = self.mu
        for x in h:
            a = self.trans @ (self.emit[x] * a)
        return a

    def _check(self, h: Sequence[int], max_len: int) -> Tokens:
        toks = as_tokens(h, self.O)
        if len(toks) > max_len:
            raise ValueError(f"string of length {len(toks)} exceeds {max_len}")
        return toks

    def prefix_prob(self, h: Sequence[int]) -> float:
        """Probability that a generated string starts with ``h``."""
        h = self._check(h, self.T)
        return float(self._forward(h).sum())

    def sequence_prob(self, x: Sequence[int]) -> float:
        x = self._check(x, self.T)
        if len(x) != self.T:
            raise ValueError(f"expected a string of length {self.T}, got {len(x)}")
        return float(self._forward(x).sum())

    def belief(self, h: Sequence[int]) -> np.ndarray:
        """Posterior over the hidden state that will emit the next token."""
        a = self._forward(self._check(h, self.T))
        z = a.sum()
        if z <= 0.0:
            raise ZeroProbabilityPrefix(f"prefix {tuple(h)} has probability zero")
        return a / z

    def next_char_probs(self, h: Sequence[int]) -> np.ndarray:
        """Exact ``Pr[o | h]`` for every token ``o``."""
        if len(h) >= self.T:
            raise ValueError("no next character after a full-length string")
        return self.emit @ self.belief(h)

    # -- enumeration ------------------------------------------------------

    def _future_table(self, b: np.ndarray, length: int) -> np.ndarray:
        """``Pr[f | belief b]`` for all futures of ``length``, lexicographic."""
        A = b[None, :]
        for _ in range(length):
            # rows ordered (previous prefix, token) -> lexicographic
            A = (A[:, None, :] * self.emit[None, :, :]).reshape(-1, self.S) @ self.trans.T
        return A.sum(axis=1)

    def joint_table(self) -> np.ndarray:
        """Probabilities of all ``O**T`` strings in lexicographic order."""
        return self._future_table(self.mu, self.T)

    def conditional_future_dist(self, h: Sequence[int]) -> np.ndarray:
        """Vector of ``Pr[f | h]`` over all futures ``f``, lexicographic order."""
        h = self._check(h, self.T - 1)
        return self._future_table(self.belief(h), self.T - len(h))

    def ondim_matrix(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """History-by-future conditional matrix at split ``t``.

        Returns
        -------
        M : (O**t, O**(T-t)) array
            ``M[h, f] = Pr[f | h]``; rows of probability-zero histories are 0.
        null_rows : (O**t,) bool array
            True where ``Pr[h] = 0``.
        """
        if not 0 < t < self.T:
            raise ValueError(f"split t={t} must satisfy 0 < t < {self.T}")
        J = self.joint_table().reshape(self.O**t, self.O ** (self.T - t))
        mass = J.sum(axis=1)
        null_rows = mass <= 0.0
        M = np.zeros_like(J)
        M[~null_rows] = J[~null_rows] / mass[~null_rows, None]
        return M, null_rows

    # -- sampling ---------------------------------------------------------

    def conditional_samples(self, h: Sequence[int], n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` futures ``f ~ Pr[. | h]`` as an ``(n, T - len(h))`` int array."""
        h = self._check(h, self.T - 1)
        b = self.belief(h)
        L = self.T - len(h)
        emit_cdf = np.cumsum(self.emit, axis=0)
        trans_cdf = np.cumsum(self.trans, axis=0)
        states = _categorical(np.cumsum(b)[:, None], np.zeros(n, dtype=np.intp), rng)
        out = np.empty((n, L), dtype=np.int64)
        for j in range(L):
            out[:, j] = _categorical(emit_cdf, states, rng)
            if j + 1 < L:
                states = _categorical(trans_cdf, states, rng)
        return out

    def conditional_sample(self, h: Sequence[int], rng_seed: int | np.random.Generator) -> Tokens:
        rng = np.random.default_rng(rng_seed)
        return tuple(int(x) for x in self.conditional_samples(h, 1, rng)[0])

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "O": self.O,
            "T": self.T,
            "mu": self.mu.tolist(),
            "trans": self.trans.tolist(),
            "emit": self.emit.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hmm":
        try:
            hmm = cls(mu=d["mu"], trans=d["trans"], emit=d["emit"], seq_len=d["T"])
        except KeyError as exc:
            raise InvalidModelError(f"missing field {exc}") from None
        if (hmm.S, hmm.O) != (int(d["S"]), int(d["O"])):
            raise InvalidModelError("declared S/O disagree with array shapes")
        return hmm

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "Hmm":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _categorical(cdf: np.ndarray, cols: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample row indices from the cumulative columns ``cdf[:, cols]``."""
    u = rng.random(cols.size)
    idx = (u[:, None] >= cdf[:, cols].T).sum(axis=1)
    return np.minimum(idx, cdf.shape[0] - 1)


def random_hmm(num_states: int, alphabet_size: int, seq_len: int, seed: int) -> Hmm:
    """HMM with every distribution drawn from a flat Dirichlet, seeded."""
    rng = np.random.default_rng(seed)
    mu = rng.dirichlet(np.ones(num_states))
    trans = rng.dirichlet(np.ones(num_states), size=num_states).T
    emit = rng.dirichlet(np.ones(alphabet_size), size=num_states).T
    return Hmm(mu=mu, trans=trans, emit=emit, seq_len=seq_len)


def iid_hmm(probs: Sequence[float], seq_len: int) -> Hmm:
    """Single-state HMM emitting i.i.d. tokens with the given law."""
    p = np.asarray(probs, dtype=float)
    return Hmm(mu=[1.0], trans=[[1.0]], emit=p[:, None], seq_len=seq_len)
