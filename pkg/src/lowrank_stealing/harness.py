"""Experiment orchestration: HMM -> oracle -> learn -> audit -> evaluate -> report.

Every source of randomness is a named seed in :class:`ExperimentConfig`.
Seeds left as ``None`` are drawn from OS entropy once and written back into
the report, so every reported number can be re-derived.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .evaluation import EXACT_GUARD, surrogate_future_dist, tv_empirical, tv_exact
from .hmm import Hmm, random_hmm
from .learner import LearnedRepresentation, LearnParams, audit_representation, learn
from .oracle import MODES, LazyPdfTree
from .sampler import Sampler, SamplerConfig

log = logging.getLogger(__name__)

REPORT_VERSION = 1
SEED_FIELDS = ("hmm_seed", "oracle_seed", "learn_seed", "sample_seed")
# keys whose values depend on the wall clock; everything else is reproducible
TIMING_KEY = "timing"


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class PipelineError(RuntimeError):
    """A pipeline stage failed (CLI exit code 3)."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    """All knobs of one run.

    The HMM comes from ``hmm_path`` if given, else from the generator parameters
    ``(S, O, T, hmm_seed)``. ``S_bound`` is the rank bound handed to the
    learner and defaults to ``S``.
    """

    S: int = 2
    O: int = 2
    T: int = 5
    hmm_seed: int | None = 7
    hmm_path: str | None = None
    oracle_mode: str = "exact-base"
    eps: float = 0.01
    samples_per_node: int = 20_000
    oracle_seed: int | None = 0
    k: int = 512
    N: int = 64
    gamma: float = 0.05
    eta: float = 0.05
    S_bound: int | None = None
    learn_seed: int | None = 0
    c_floor: float = 1e-30
    tol: float = 1e-8
    sample_seed: int | None = 0
    eval_mode: str = "exact"
    n_samples: int = 5000
    audit: bool = True
    audit_histories: int = 50
    out_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        for name in ("S", "O", "T", "samples_per_node", "k", "N", "n_samples",
                     "audit_histories"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < (0 if name == "N" else 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.S_bound is not None and self.S_bound < 1:
            raise ConfigError("S_bound must be positive")
        for name in ("eps", "gamma", "eta"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v!r}")
        if not 0 < self.c_floor < 1:
            raise ConfigError("c_floor must lie in (0, 1)")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.oracle_mode not in MODES:
            raise ConfigError(f"oracle_mode must be one of {MODES}")
        if self.eval_mode not in ("exact", "empirical"):
            raise ConfigError("eval_mode must be 'exact' or 'empirical'")
        if self.eval_mode == "empirical" and self.n_samples < 1000:
            raise ConfigError("empirical evaluation needs n_samples >= 1000")
        for name in SEED_FIELDS:
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < 0):
                raise ConfigError(f"{name} must be a non-negative integer or null")

    def with_seeds(self) -> "ExperimentConfig":
        """Copy with every missing seed filled from fresh entropy."""
        ss = np.random.SeedSequence()
        fresh = iter(int(x) for x in ss.generate_state(len(SEED_FIELDS), dtype=np.uint32))
        return replace(self, **{n: (getattr(self, n) if getattr(self, n) is not None else next(fresh))
                                for n in SEED_FIELDS})


@dataclass
class RunReport:
    config: dict
    budget: dict = field(default_factory=dict)
    levels: list[dict] = field(default_factory=list)
    audit: list[dict] | None = None
    tv: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, **asdict(self)}

    def to_json(self, include_timing: bool = True) -> str:
        d = self.to_dict()
        if not include_timing:
            d.pop(TIMING_KEY)
        return json.dumps(d, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def load_hmm(cfg: ExperimentConfig) -> Hmm:
    if cfg.hmm_path:
        return Hmm.load(cfg.hmm_path)
    return random_hmm(cfg.S, cfg.O, cfg.T, cfg.hmm_seed)


def make_oracle(hmm: Hmm, cfg: ExperimentConfig) -> LazyPdfTree:
    return LazyPdfTree(hmm, eps=cfg.eps, samples_per_node=cfg.samples_per_node,
                       seed=cfg.oracle_seed, mode=cfg.oracle_mode)


def oracle_params(cfg: ExperimentConfig) -> dict:
    return {"mode": cfg.oracle_mode, "eps": cfg.eps, "samples_per_node": cfg.samples_per_node,
            "seed": cfg.oracle_seed}


def learn_params(cfg: ExperimentConfig) -> LearnParams:
    return LearnParams(k=cfg.k, N=cfg.N, gamma=cfg.gamma, eta=cfg.eta, seed=cfg.learn_seed)


def sampler_config(cfg: ExperimentConfig) -> SamplerConfig:
    return SamplerConfig(eta=cfg.eta, c_floor=cfg.c_floor, tol=cfg.tol)


def level_summary(rep: LearnedRepresentation) -> list[dict]:
    out = []
    for lv, st in zip(rep.levels[1:], rep.steps or [None] * rep.T):
        d = {"t": lv.t, "spanner_size": len(lv.H), "B_size": len(lv.B), "X_size": len(lv.X),
             "w_max": float(lv.w.max())}
        if st is not None:
            d.update(residual_bound=float(st.residual_bound), rank_raw=int(st.spanner_rank_raw),
                     rank_exceeded=bool(st.rank_exceeded), candidates=len(st.candidates))
        out.append(d)
    return out


def evaluate(smp: Sampler, hmm: Hmm, oracle: LazyPdfTree, cfg: ExperimentConfig) -> dict:
    """TV between the learned distribution and the true HMM (and the surrogate, if exact)."""
    O, T = hmm.O, hmm.T
    if cfg.eval_mode == "exact":
        learned = smp.table()
        truth = hmm.joint_table()
        surrogate = surrogate_future_dist(oracle, ())
        return {"method": "exact", "value": tv_exact(learned, truth, O, T),
                "vs_surrogate": tv_exact(learned, surrogate, O, T),
                "learned_mass": float(learned.sum())}
    rng = np.random.default_rng(cfg.sample_seed)
    seeds = iter(rng.integers(0, 2**63, size=cfg.n_samples))
    est = tv_empirical(lambda _: smp.sample_string(int(next(seeds))), hmm.sequence_prob,
                       cfg.n_samples, rng)
    return {"method": "empirical", "value": est.estimate, "ci": [est.ci_low, est.ci_high],
            "n": est.n, "noise_floor": est.noise_floor}


def run_pipeline(config: ExperimentConfig) -> RunReport:
    """Run every stage and write ``hmm.json``, ``rep.json``, ``report.json``.

    Raises :class:`ConfigError` for a bad config and :class:`PipelineError`
    (carrying the stage name) when a stage fails.
    """
    config.validate()
    cfg = config.with_seeds()
    timing: dict[str, float] = {}
    t_start = time.perf_counter()
    stage = "hmm"

    def mark(name: str, t0: float) -> float:
        now = time.perf_counter()
        timing[name] = now - t0
        return now

    try:
        t0 = time.perf_counter()
        hmm = load_hmm(cfg)
        if cfg.hmm_path:
            cfg = replace(cfg, S=hmm.S, O=hmm.O, T=hmm.T)
        if cfg.eval_mode == "exact" and hmm.O ** hmm.T > EXACT_GUARD:
            # fail before the expensive stages rather than after
            stage = "eval"
            raise ValueError(f"O**T = {hmm.O}**{hmm.T} exceeds the exact-enumeration guard "
                             f"{EXACT_GUARD}; set eval_mode to 'empirical'")
        t0 = mark("hmm", t0)

        stage = "learn"
        oracle = make_oracle(hmm, cfg)
        rep = learn(oracle, cfg.S_bound or cfg.S, learn_params(cfg))
        rep.params["oracle"] = oracle_params(cfg)
        t0 = mark("learn", t0)

        audit = None
        if cfg.audit:
            stage = "audit"
            smp_probe = Sampler(rep, sampler_config(cfg))
            if hmm.O ** hmm.T <= EXACT_GUARD:
                audit = [asdict(a) for a in audit_representation(
                    rep, oracle, smp_probe.c_eff, cfg.eta, n_histories=cfg.audit_histories,
                    seed=cfg.learn_seed)]
            else:
                log.warning("audit skipped: O**T above the enumeration guard")
            t0 = mark("audit", t0)

        stage = "eval"
        smp = Sampler(rep, sampler_config(cfg))
        tv = evaluate(smp, hmm, oracle, cfg)
        if not 0.0 <= tv["value"] <= 1.0 + 1e-12:
            raise ValueError(f"TV estimate {tv['value']} outside [0, 1]")
        t0 = mark("eval", t0)

        budget = dict(oracle.budget_report())
        report = RunReport(config=cfg.to_dict(), budget=budget, levels=level_summary(rep),
                           audit=audit, tv=tv, solver=smp.stats(), timing=timing)

        if cfg.out_dir:
            stage = "report"
            out = Path(cfg.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            hmm.save(out / "hmm.json")
            rep.save(out / "rep.json")
        timing["total"] = time.perf_counter() - t_start
        if cfg.out_dir:
            report.save(Path(cfg.out_dir) / "report.json")
        return report
    except (ConfigError, PipelineError):
        raise
    except Exception as exc:
        raise PipelineError(stage, f"{type(exc).__name__}: {exc}") from exc

