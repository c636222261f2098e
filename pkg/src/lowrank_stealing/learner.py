"""Learning a succinct representation of a low-rank distribution.

For every prefix length ``t`` the learner keeps at most ``S`` spanning
histories ``H_t``, their next-character table, and importance-sampled
sketches of the conditionals of ``B_t = H_t + (H_{t-1} x alphabet)`` on a
shared multiset of futures ``X_t``. Transitions between consecutive spanning
sets stay implicit; the sampler recovers them by KL projection.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy import sparse

from .dimred import SketchBundle, build_vectors, check_representative
from .evaluation import surrogate_future_dist
from .hmm import Tokens
from .spanner import robust_spanner

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
SPANNER_THRESHOLD_FLOOR = 1e-12


@dataclass
class LearnParams:
    k: int = 512
    N: int = 64
    gamma: float = 0.05
    eta: float = 0.05
    seed: int = 0


@dataclass
class Level:
    """Everything learned about prefixes of length ``t``.

    ``P`` has one row per history in the previous level's ``H`` (empty at
    ``t = 0``); ``U`` has one row per history in ``B``.
    """

    t: int
    H: list[Tokens]
    P: np.ndarray
    B: list[Tokens]
    X: list[Tokens]
    U: np.ndarray
    w: np.ndarray
    index: dict[Tokens, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.index = {h: i for i, h in enumerate(self.B)}

    def u(self, h: Sequence[int]) -> np.ndarray:
        return self.U[self.index[tuple(h)]]

    def rows(self, hs: Sequence[Sequence[int]]) -> np.ndarray:
        return self.U[[self.index[tuple(h)] for h in hs]]


@dataclass
class StepInfo:
    """Diagnostics of one spanner-building step (not serialized)."""

    t: int
    candidates: list[Tokens]
    bundle: SketchBundle
    threshold: float
    spanner_rank_raw: int
    rank_exceeded: bool
    residual_bound: float
    sigma: np.ndarray


@dataclass
class LearnedRepresentation:
    S: int
    O: int
    T: int
    params: dict
    levels: list[Level]
    budget: dict = field(default_factory=dict)
    steps: list[StepInfo] = field(default_factory=list, repr=False)

    def validate(self, floor: float = 0.0) -> None:
        """Assert the structural invariants; raises ``AssertionError``."""
        assert len(self.levels) == self.T + 1
        assert self.levels[0].H == [()]
        for t, lv in enumerate(self.levels):
            assert lv.t == t
            assert 1 <= len(lv.H) <= self.S, f"|H_{t}| = {len(lv.H)} > S"
            assert all(len(h) == t for h in lv.H)
            if t == 0:
                continue
            prev = self.levels[t - 1].H
            assert lv.P.shape == (len(prev), self.O)
            assert np.all(np.abs(lv.P.sum(axis=1) - 1.0) <= 1e-12)
            assert np.all(lv.P >= floor)
            assert all(len(h) == t for h in lv.B)
            assert set(lv.H) <= set(lv.B)
            assert {h + (o,) for h in prev for o in range(self.O)} <= set(lv.B)
            assert lv.U.shape == (len(lv.B), len(lv.X)) and lv.w.shape == (len(lv.X),)
            assert np.all(lv.w > 0) and np.all(np.isfinite(lv.w))
            assert np.all(lv.U >= 0) and np.all(lv.U <= 1.0 + 1e-12)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        levels = []
        for lv in self.levels:
            levels.append({
                "H": [list(h) for h in lv.H],
                "P": lv.P.tolist(),
                "B": [list(h) for h in lv.B],
                "X": [list(f) for f in lv.X],
                "u": {history_key(h): lv.U[i].tolist() for i, h in enumerate(lv.B)},
                "w": lv.w.tolist(),
            })
        return {"version": FORMAT_VERSION, "S": self.S, "O": self.O, "T": self.T,
                "params": self.params, "budget": self.budget, "levels": levels}

    @classmethod
    def from_dict(cls, d: dict) -> "LearnedRepresentation":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported representation version {d.get('version')}")
        levels = []
        for t, ld in enumerate(d["levels"]):
            B = [tuple(h) for h in ld["B"]]
            X = [tuple(f) for f in ld["X"]]
            U = np.array([ld["u"][history_key(h)] for h in B], dtype=float).reshape(len(B), len(X))
            P = np.array(ld["P"], dtype=float).reshape(-1, d["O"]) if t else np.zeros((0, d["O"]))
            levels.append(Level(t=t, H=[tuple(h) for h in ld["H"]], P=P, B=B, X=X, U=U,
                                w=np.array(ld["w"], dtype=float)))
        return cls(S=d["S"], O=d["O"], T=d["T"], params=d.get("params", {}), levels=levels,
                   budget=d.get("budget", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "LearnedRepresentation":
        return cls.from_dict(json.loads(Path(path).read_text()))


def history_key(h: Sequence[int]) -> str:
    return "-".join(str(int(x)) for x in h)


def _dedupe(hs) -> list[Tokens]:
    return list(dict.fromkeys(tuple(h) for h in hs))


def next_char_table(oracle, histories: Sequence[Sequence[int]]) -> np.ndarray:
    """Rows ``Pr[o | h]`` under the surrogate, one per history."""
    hs = [tuple(h) for h in histories]
    if not hs:
        raise ValueError("need at least one history")
    if len({len(h) for h in hs}) != 1:
        raise ValueError("histories must share a length")
    return np.array([oracle.next_char(h) for h in hs])


def spanner_threshold(gamma: float, S: int, k: int) -> float:
    return max(gamma / (100.0 * S * k * k), SPANNER_THRESHOLD_FLOOR)


def build_spanner_step(oracle, t: int, H_t: Sequence[Sequence[int]], S: int, gamma: float,
                       N: int, k: int, rng: np.random.Generator) -> tuple[list[Tokens], StepInfo]:
    """Pick at most ``S`` length-``t+1`` histories spanning the extensions of ``H_t``
    and ``N`` fresh prefixes drawn from the surrogate."""
    A = [tuple(h) + (o,) for h in H_t for o in range(oracle.O)]
    draws = [f[: t + 1] for f in oracle.cond_samples((), N, rng)] if N else []
    cands = _dedupe(A + draws)
    bundle = build_vectors(oracle, t + 1, cands, k, rng)
    thr = spanner_threshold(gamma, S, k)
    res = robust_spanner(bundle.U, S, thr, truncate=True)
    if res.rank_exceeded:
        log.warning("level %d: %d sketch directions above threshold, keeping %d",
                    t + 1, res.rank_raw, S)
    chosen = [cands[i] for i in res.indices]
    info = StepInfo(t=t + 1, candidates=cands, bundle=bundle, threshold=thr,
                    spanner_rank_raw=res.rank_raw, rank_exceeded=res.rank_exceeded,
                    residual_bound=res.residual_bound, sigma=res.sigma)
    return chosen, info


def learn(oracle, S: int, params: LearnParams | None = None) -> LearnedRepresentation:
    """Build the full representation from sample and pdf access to the surrogate."""
    params = params or LearnParams()
    if S < 1:
        raise ValueError("S must be positive")
    rng = np.random.default_rng(params.seed)
    T, O = oracle.T, oracle.O
    levels = [Level(t=0, H=[()], P=np.zeros((0, O)), B=[], X=[], U=np.zeros((0, 0)),
                    w=np.zeros(0))]
    steps = []
    H = [()]
    for t in range(T):
        P = next_char_table(oracle, H)
        H_next, info = build_spanner_step(oracle, t, H, S, params.gamma, params.N, params.k, rng)
        if not H_next:
            raise AssertionError(f"empty spanner at level {t + 1}")
        assert len(H_next) <= S, f"|H_{t + 1}| = {len(H_next)} exceeds S = {S}"
        B = _dedupe(H_next + [h + (o,) for h in H for o in range(O)])
        bundle = build_vectors(oracle, t + 1, B, params.k, rng)
        levels.append(Level(t=t + 1, H=H_next, P=P, B=B, X=bundle.X, U=bundle.U, w=bundle.w))
        steps.append(info)
        H = H_next
    rep = LearnedRepresentation(S=S, O=O, T=T, params=asdict(params), levels=levels,
                                budget=oracle.budget_report(), steps=steps)
    return rep


# -- audit -------------------------------------------------------------------

def positive_representation(target: np.ndarray, basis: np.ndarray, x_cols: np.ndarray,
                            coef_bound: float, c_min: float):
    """LP: min ``||target - y.basis||_1`` s.t. ``|y| <= coef_bound`` and
    ``y.basis[:, x_cols] >= c_min``. Returns ``(y, residual)`` or ``None`` if infeasible."""
    m, N = basis.shape
    Bt = sparse.csr_matrix(basis.T)
    eye = sparse.identity(N, format="csr")
    rows = [sparse.hstack([-Bt, -eye]), sparse.hstack([Bt, -eye])]
    rhs = [-target, target]
    if len(x_cols):
        Bx = sparse.csr_matrix(basis[:, x_cols].T)
        rows.append(sparse.hstack([-Bx, sparse.csr_matrix((len(x_cols), N))]))
        rhs.append(np.full(len(x_cols), -c_min))
    res = linprog(np.concatenate([np.zeros(m), np.ones(N)]),
                  A_ub=sparse.vstack(rows, format="csr"), b_ub=np.concatenate(rhs),
                  bounds=[(-coef_bound, coef_bound)] * m + [(0, None)] * N, method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"representation LP failed: {res.message}")
    y = res.x[:m]
    return y, float(np.abs(target - y @ basis).sum())


@dataclass
class LevelAudit:
    t: int
    spanner_size: int
    size_ok: bool
    w_max: float
    w_ok: bool
    histories_checked: int
    failing_fraction: float
    representative_gap: float | None = None


def _future_index(futures: Sequence[Tokens], O: int) -> np.ndarray:
    idx = np.zeros(len(futures), dtype=np.intp)
    for j, f in enumerate(futures):
        v = 0
        for x in f:
            v = v * O + x
        idx[j] = v
    return idx


def audit_representation(rep: LearnedRepresentation, oracle, c: float, eta: float,
                         n_histories: int = 50, c_prime: float = 1e-9, seed: int = 0,
                         representative_r: float | None = None,
                         representative_trials: int = 200) -> list[LevelAudit]:
    """Check the learned representation against the surrogate's exact conditionals.

    Per level: spanner size, ``||w||_inf <= 1/sqrt(c)``, and the fraction of
    surrogate-sampled histories that are not positively representable by
    ``H_t`` on ``X_t`` (coefficients within ``2S``, L1 residual within
    ``2S eta``, reconstruction at least ``c_prime`` on sketch coordinates).
    With ``representative_r`` the worst L1-norm gap of the sketches over
    random ``r``-bounded combinations is reported as well.
    """
    rng = np.random.default_rng(seed)
    S = rep.S
    out = []
    for lv in rep.levels[1:]:
        t = lv.t
        basis = np.array([surrogate_future_dist(oracle, h) for h in lv.H])
        x_cols = np.unique(_future_index(lv.X, rep.O))
        hist = [f[:t] for f in oracle.cond_samples((), n_histories, rng)]
        fails = 0
        cache: dict[Tokens, bool] = {}
        for h in hist:
            if h not in cache:
                sol = positive_representation(surrogate_future_dist(oracle, h), basis, x_cols,
                                              2 * S, c_prime)
                cache[h] = sol is not None and sol[1] <= 2 * S * eta + 1e-9
            fails += not cache[h]
        gap = None
        if representative_r is not None:
            D = np.array([surrogate_future_dist(oracle, h) for h in lv.B])
            gap = check_representative(D, lv.U, representative_r, eta, representative_trials,
                                       rng).worst_gap
        w_max = float(lv.w.max())
        out.append(LevelAudit(t=t, spanner_size=len(lv.H), size_ok=len(lv.H) <= S, w_max=w_max,
                              w_ok=w_max <= 1.0 / math.sqrt(c), histories_checked=len(hist),
                              failing_fraction=fails / max(len(hist), 1),
                              representative_gap=gap))
    return out
