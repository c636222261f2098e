"""Sampling from a learned representation by per-step KL projection.

The sampler tracks coefficients ``alpha`` over the spanning histories of the
current prefix length. After drawing a character it forms the target sketch
``z`` of the extended prefix from the extensions of the old spanning set,
then re-expresses it over the next spanning set by minimizing a floored KL
divergence subject to bounded coefficients, positivity on every sketch
coordinate, and unit total mass.

The next-character law at every prefix is a deterministic function of that
prefix, so the sampled distribution has an exactly computable pdf
(:meth:`Sampler.pdf`).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from . import kernels
from .dimred import trunc_kl_vec
from .hmm import Tokens, all_strings
from .learner import LearnedRepresentation
from .oracle import quantize

log = logging.getLogger(__name__)


class InfeasibleProjection(RuntimeError):
    def __init__(self, family: str):
        super().__init__(f"projection infeasible: {family} constraints cannot be met")
        self.family = family


class ProjectionDidNotConverge(RuntimeError):
    pass


def round_dist(v, tau: float) -> np.ndarray:
    """Clamp entries below ``tau`` up to ``tau`` and normalize."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    m = np.maximum(np.asarray(v, dtype=float), tau)
    # dyadic grid keeps the sum exactly 1.0 in any summation order
    return quantize(m / m.sum(), tau / m.sum())


@dataclass
class ProjectionProblem:
    """``min KL_{>=floor}(alpha.R || z)`` over ``|alpha| <= bound``,
    ``alpha.R >= floor`` and ``sum(alpha.R) = 1``."""

    R: np.ndarray
    z: np.ndarray
    floor: np.ndarray
    bound: float

    def objective(self, alpha) -> float:
        return trunc_kl_vec(np.asarray(alpha) @ self.R, self.z, self.floor)

    def is_feasible(self, alpha, eq_tol: float = 1e-9) -> bool:
        alpha = np.asarray(alpha, dtype=float)
        x = alpha @ self.R
        return bool(np.all(np.abs(alpha) <= self.bound) and np.all(x >= self.floor)
                    and abs(x.sum() - 1.0) <= eq_tol)


@dataclass
class ProjectionResult:
    alpha: np.ndarray
    objective: float
    iterations: int
    slack: float


def phase_one(R: np.ndarray, floor: np.ndarray, bound: float, relax_box: bool = False,
              allow_negative: bool = False) -> tuple[np.ndarray, float]:
    """Point maximizing the positivity slack ``min_i (x_i - floor_i) / scale_i``.

    Slack is measured relative to ``floor / sum(floor)``. The box is shrunk by
    a relative ``1e-9`` so the point is strictly inside it.
    """
    m, n = R.shape
    scale = floor / floor.sum()
    a = R.sum(axis=1)
    A_ub = np.hstack([-R.T, scale[:, None]])
    b_ub = -floor
    inner = bound * (1 - 1e-9)
    box = (None, None) if relax_box else (-inner, inner)
    res = linprog(np.r_[np.zeros(m), -1.0], A_ub=A_ub, b_ub=b_ub,
                  A_eq=np.r_[a, 0.0][None, :], b_eq=[1.0],
                  bounds=[box] * m + [(None if allow_negative else 0.0, 1.0)], method="highs")
    if res.status == 2:
        return np.zeros(m), -math.inf
    if res.status != 0:
        raise RuntimeError(f"phase-one LP failed: {res.message}")
    return res.x[:m], float(res.x[m])


def kl_project(problem: ProjectionProblem, tol: float = 1e-8, max_iter: int = 10_000,
               mu: float = 20.0) -> ProjectionResult:
    """Solve the floored KL projection to objective accuracy ``tol``.

    A phase-one LP finds a strictly feasible start; a log-barrier Newton
    method on the affine slice ``sum(alpha.R) = 1`` then follows the central
    path until the barrier duality gap is below ``tol``. Every iterate is
    strictly feasible.
    """
    R = np.ascontiguousarray(problem.R, dtype=float)
    floor = np.asarray(problem.floor, dtype=float)
    z = np.asarray(problem.z, dtype=float)
    B = float(problem.bound)
    m, n = R.shape
    logz = np.log(np.maximum(z, floor))
    a = R.sum(axis=1)

    if m == 1:
        alpha = np.array([1.0 / a[0]])
        if abs(alpha[0]) > B:
            raise InfeasibleProjection("coefficient box")
        if np.any(alpha @ R < floor):
            raise InfeasibleProjection("positivity floor")
        return ProjectionResult(alpha=alpha, objective=problem.objective(alpha), iterations=0,
                                slack=float(np.min(alpha @ R - floor)))

    alpha, slack = phase_one(R, floor, B)
    if not slack > 0:
        _, relaxed = phase_one(R, floor, B, relax_box=True)
        raise InfeasibleProjection("coefficient box" if relaxed > 0 else "positivity floor")

    Nb = null_space(a[None, :])
    n_con = n + 2 * m
    t = 1.0
    iters = 0
    while True:
        while True:
            val, _, g, H = kernels.barrier_eval(alpha, R, floor, logz, B, t)
            gr = Nb.T @ g
            Hr = Nb.T @ H @ Nb
            step = -np.linalg.solve(Hr, gr)
            lam2 = float(-gr @ step)
            # the barrier value carries roundoff of order eps*|val|; a smaller
            # decrement cannot be resolved
            if 0.5 * lam2 <= max(1e-10, 1e-13 * abs(val)):
                break
            d = Nb @ step
            s = 1.0
            while s > 1e-16:
                nv = kernels.barrier_eval(alpha + s * d, R, floor, logz, B, t, False)[0]
                if nv <= val - 0.25 * s * lam2:
                    break
                s *= 0.5
            else:
                break  # no further progress representable at this t
            alpha = alpha + s * d
            if val - nv <= 1e-14 * max(1.0, abs(val)):
                break
            iters += 1
            if iters > max_iter:
                raise ProjectionDidNotConverge(
                    f"no convergence after {max_iter} Newton steps (t={t:.3g}, decrement={lam2:.3g})")
        if n_con / t < tol:
            break
        t *= mu
    x = alpha @ R
    return ProjectionResult(alpha=alpha, objective=problem.objective(alpha), iterations=iters,
                            slack=float(np.min(x - floor)))


@dataclass
class SamplerConfig:
    """Numerical constants of the sampler.

    The truncation base is ``c = max(eta**(10 O T S), c_floor)``; the
    projection floor at step ``t`` is ``max(c**(T-t), c_floor) * w`` and the
    next-character rounding level is ``2 c**0.1``.
    """

    eta: float = 0.05
    c_floor: float = 1e-30
    tol: float = 1e-8
    max_iter: int = 10_000
    fallback_steps: int = 3


@dataclass
class SamplerState:
    t: int
    prefix: Tokens
    alpha: np.ndarray


@dataclass
class StepRecord:
    t: int
    o: int
    p: list[float]
    objective: float
    iterations: int
    fallback: bool
    alpha: list[float]


class Sampler:
    """Sampling and exact pdf evaluation for a :class:`LearnedRepresentation`."""

    def __init__(self, rep: LearnedRepresentation, config: SamplerConfig | None = None):
        self.rep = rep
        self.config = config or SamplerConfig(eta=rep.params.get("eta", 0.05))
        cfg = self.config
        S, O, T = rep.S, rep.O, rep.T
        self.log_c = max(10 * O * T * S * math.log(cfg.eta), math.log(cfg.c_floor))
        self.c_eff = math.exp(self.log_c)
        self.round_tau = 2.0 * math.exp(0.1 * self.log_c)
        self.bound = 3.0 * S
        self._P, self._R, self._Tm, self._floor = [], [], [], []
        for t in range(T):
            nxt = rep.levels[t + 1]
            H_t = rep.levels[t].H
            self._P.append(nxt.P)
            self._R.append(np.ascontiguousarray(nxt.rows(nxt.H)))
            self._Tm.append([nxt.rows([h + (o,) for h in H_t]) for o in range(O)])
            fac = math.exp(max((T - t) * self.log_c, math.log(cfg.c_floor)))
            self._floor.append(fac * nxt.w)
        self._cache: dict[Tokens, tuple[np.ndarray, np.ndarray]] = {}
        self.fallbacks = 0
        self.projections = 0
        self.iterations = 0

    def initial_state(self) -> SamplerState:
        return SamplerState(t=0, prefix=(), alpha=np.array([1.0]))

    def next_char_probs(self, state: SamplerState) -> np.ndarray:
        if state.t >= self.rep.T:
            raise ValueError("string already complete")
        return round_dist(state.alpha @ self._P[state.t], self.round_tau)

    def problem(self, state: SamplerState, o: int, p: np.ndarray) -> ProjectionProblem:
        t = state.t
        nu = state.alpha * self._P[t][:, o] / p[o]
        z = nu @ self._Tm[t][o]
        return ProjectionProblem(R=self._R[t], z=z, floor=self._floor[t], bound=self.bound)

    def _project(self, prob: ProjectionProblem) -> tuple[ProjectionResult, bool]:
        cfg = self.config
        try:
            return kl_project(prob, cfg.tol, cfg.max_iter), False
        except InfeasibleProjection as exc:
            log.warning("%s; relaxing floor", exc)
        floor = prob.floor
        for _ in range(cfg.fallback_steps):
            floor = floor / 10.0
            relaxed = ProjectionProblem(R=prob.R, z=prob.z, floor=floor, bound=prob.bound)
            try:
                return kl_project(relaxed, cfg.tol, cfg.max_iter), True
            except InfeasibleProjection:
                continue
        alpha, slack = phase_one(prob.R, prob.floor, prob.bound, allow_negative=True)
        log.warning("projection relaxed to the least-violating point (slack %.3g)", slack)
        return ProjectionResult(alpha=alpha, objective=math.nan, iterations=0, slack=slack), True

    def advance(self, state: SamplerState, o: int, p: np.ndarray) -> tuple[SamplerState, StepRecord]:
        prob = self.problem(state, o, p)
        res, fell_back = self._project(prob)
        self.projections += 1
        self.iterations += res.iterations
        self.fallbacks += fell_back
        new = SamplerState(t=state.t + 1, prefix=state.prefix + (int(o),), alpha=res.alpha)
        rec = StepRecord(t=state.t, o=int(o), p=p.tolist(), objective=res.objective,
                         iterations=res.iterations, fallback=fell_back, alpha=res.alpha.tolist())
        return new, rec

    # -- prefix-memoized recursion shared by sampling and pdf --------------

    def _node(self, prefix: Tokens) -> tuple[np.ndarray, np.ndarray]:
        """``(alpha, p)`` at ``prefix``; ``p`` is empty for full-length prefixes."""
        hit = self._cache.get(prefix)
        if hit is not None:
            return hit
        if not prefix:
            state = self.initial_state()
        else:
            parent_alpha, parent_p = self._node(prefix[:-1])
            parent = SamplerState(t=len(prefix) - 1, prefix=prefix[:-1], alpha=parent_alpha)
            state, _ = self.advance(parent, prefix[-1], parent_p)
        p = self.next_char_probs(state) if state.t < self.rep.T else np.zeros(0)
        self._cache[prefix] = (state.alpha, p)
        return state.alpha, p

    def sample_string(self, seed, trace: list | None = None) -> Tokens:
        """Draw one string; identical ``seed`` gives an identical string."""
        rng = np.random.default_rng(seed)
        x: Tokens = ()
        for t in range(self.rep.T):
            alpha, p = self._node(x)
            o = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
            o = min(o, self.rep.O - 1)
            if trace is not None:
                nxt_alpha, _ = self._node(x + (o,))
                trace.append({"t": t, "o": o, "p": p.tolist(), "alpha": nxt_alpha.tolist()})
            x = x + (o,)
        return x

    def pdf(self, x: Sequence[int]) -> float:
        x = tuple(int(v) for v in x)
        if len(x) != self.rep.T:
            raise ValueError(f"expected a string of length {self.rep.T}")
        prob = 1.0
        for t in range(self.rep.T):
            _, p = self._node(x[:t])
            prob *= p[x[t]]
        return prob

    def table(self) -> np.ndarray:
        """Learned pdf of every string in lexicographic order."""
        return np.array([self.pdf(x) for x in all_strings(self.rep.O, self.rep.T)])

    def trace_string(self, x: Sequence[int]) -> list[StepRecord]:
        """Re-run the recursion along ``x`` and return full per-step records."""
        state = self.initial_state()
        recs = []
        for o in x:
            p = self.next_char_probs(state)
            state, rec = self.advance(state, int(o), p)
            recs.append(rec)
        return recs

    def stats(self) -> dict:
        return {"projections": self.projections, "newton_iterations": self.iterations,
                "fallbacks": self.fallbacks, "c_eff": self.c_eff, "round_tau": self.round_tau}


def next_char_probs(rep: LearnedRepresentation, state: SamplerState,
                    config: SamplerConfig | None = None) -> np.ndarray:
    return Sampler(rep, config).next_char_probs(state)


def sample_string(rep: LearnedRepresentation, seed, config: SamplerConfig | None = None) -> Tokens:
    return Sampler(rep, config).sample_string(seed)


def learned_pdf(rep: LearnedRepresentation, x: Sequence[int],
                config: SamplerConfig | None = None) -> float:
    return Sampler(rep, config).pdf(x)


def write_trace(records: list, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r if isinstance(r, dict) else r.__dict__) + "\n")
