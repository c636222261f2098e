"""Command-line interface.

Verbs: ``gen-hmm``, ``learn``, ``sample``, ``eval``, ``audit``, ``run``.
Experiment flags override values from ``--config`` (a JSON object with
:class:`~lowrank_stealing.harness.ExperimentConfig` fields), which override
the defaults. Exit codes: 0 success, 2 config error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields, replace

from .harness import (ConfigError, ExperimentConfig, PipelineError, evaluate, learn_params,
                      make_oracle, oracle_params, run_pipeline, sampler_config)
from .hmm import Hmm, InvalidModelError, random_hmm
from .learner import LearnedRepresentation, audit_representation, learn
from .sampler import Sampler, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

_HELP = {
    "S": "number of hidden states (also the learner's rank bound unless --S-bound)",
    "O": "alphabet size",
    "T": "sequence length",
    "hmm_seed": "seed for the random HMM generator",
    "hmm_path": "load the HMM from this JSON file instead of generating one",
    "oracle_mode": "'exact-base' or 'sampled'",
    "eps": "oracle closeness parameter",
    "samples_per_node": "conditional queries per visited oracle node",
    "oracle_seed": "seed for the oracle's per-node streams",
    "k": "samples per history in each sketch",
    "N": "fresh prefixes drawn per spanner step",
    "gamma": "spanner accuracy",
    "eta": "target accuracy; sets the truncation base",
    "S_bound": "rank bound given to the learner",
    "learn_seed": "seed for the learner",
    "c_floor": "lower clamp on the truncation base",
    "tol": "projection objective tolerance",
    "sample_seed": "seed for sampling and empirical evaluation",
    "eval_mode": "'exact' or 'empirical'",
    "n_samples": "samples for empirical evaluation",
    "audit": "run the representation audit (true/false)",
    "audit_histories": "histories sampled per level in the audit",
    "out_dir": "directory for hmm.json, rep.json, report.json",
}


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _add_config_flags(p: argparse.ArgumentParser, names=None) -> None:
    types = {"int": int, "float": float, "str": str, "bool": _bool,
             "int | None": int, "str | None": str}
    for f in fields(ExperimentConfig):
        if names is not None and f.name not in names:
            continue
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, type=types[str(f.type)], default=argparse.SUPPRESS,
                       help=_HELP.get(f.name))


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig) if hasattr(args, f.name)}
    try:
        cfg = replace(cfg, **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def _load_hmm(path) -> Hmm:
    try:
        return Hmm.load(path)
    except (OSError, json.JSONDecodeError, InvalidModelError) as exc:
        raise ConfigError(f"cannot load HMM from {path}: {exc}") from None


def _load_rep(path) -> LearnedRepresentation:
    try:
        return LearnedRepresentation.load(path)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load representation from {path}: {exc}") from None


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- verbs -----------------------------------------------------------------------

def cmd_gen_hmm(args) -> None:
    cfg = resolve_config(args)
    hmm = random_hmm(cfg.S, cfg.O, cfg.T, cfg.hmm_seed)
    hmm.save(args.out)
    print(f"wrote {args.out} (S={hmm.S}, O={hmm.O}, T={hmm.T})")


def cmd_learn(args) -> None:
    cfg = resolve_config(args)
    hmm = _load_hmm(args.hmm) if args.hmm else random_hmm(cfg.S, cfg.O, cfg.T, cfg.hmm_seed)
    oracle = make_oracle(hmm, cfg)
    rep = learn(oracle, cfg.S_bound or hmm.S, learn_params(cfg))
    rep.params["oracle"] = oracle_params(cfg)
    rep.save(args.out)
    print(f"wrote {args.out}; spanner sizes {[len(lv.H) for lv in rep.levels]}; "
          f"budget {rep.budget}")


def cmd_sample(args) -> None:
    rep = _load_rep(args.rep)
    cfg = _oracle_cfg(args, rep)
    smp = Sampler(rep, sampler_config(cfg))
    records = []
    for i in range(args.n):
        x = smp.sample_string([cfg.sample_seed, i])
        print(" ".join(map(str, x)))
        if args.trace:
            for r in smp.trace_string(x):
                records.append({"sample": i, **asdict(r)})
    if args.trace:
        write_trace(records, args.trace)


def _oracle_cfg(args, rep: LearnedRepresentation) -> ExperimentConfig:
    """Config whose oracle fields and ``eta`` default to those recorded in the representation."""
    cfg = resolve_config(args)
    rec = dict(rep.params.get("oracle", {}), eta=rep.params.get("eta"))
    keep = {"mode": "oracle_mode", "eps": "eps", "samples_per_node": "samples_per_node",
            "seed": "oracle_seed", "eta": "eta"}
    return replace(cfg, **{v: rec[k] for k, v in keep.items()
                           if rec.get(k) is not None and not hasattr(args, v)})


def cmd_eval(args) -> None:
    rep = _load_rep(args.rep)
    hmm = _load_hmm(args.hmm)
    cfg = _oracle_cfg(args, rep)
    _emit(evaluate(Sampler(rep, sampler_config(cfg)), hmm, make_oracle(hmm, cfg), cfg))


def cmd_audit(args) -> None:
    rep = _load_rep(args.rep)
    hmm = _load_hmm(args.hmm)
    cfg = _oracle_cfg(args, rep)
    smp = Sampler(rep, sampler_config(cfg))
    res = audit_representation(rep, make_oracle(hmm, cfg), smp.c_eff, cfg.eta,
                               n_histories=cfg.audit_histories, seed=cfg.learn_seed)
    _emit([asdict(a) for a in res])


def cmd_run(args) -> None:
    report = run_pipeline(resolve_config(args))
    print(report.to_json())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowrank-stealing",
                                     description="Learn and sample a low-rank sequence model "
                                                 "from conditional queries.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(name, fn, help_, config_fields=None):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file; flags override it")
        _add_config_flags(p, config_fields)
        p.set_defaults(func=fn)
        return p

    gen = {"S", "O", "T", "hmm_seed"}
    oracle = {"oracle_mode", "eps", "samples_per_node", "oracle_seed"}
    learner = {"k", "N", "gamma", "eta", "S_bound", "learn_seed"}
    smp = {"c_floor", "tol", "sample_seed", "eta"}

    p = add("gen-hmm", cmd_gen_hmm, "write a random HMM to JSON", gen)
    p.add_argument("--out", required=True)

    p = add("learn", cmd_learn, "learn a representation", gen | oracle | learner)
    p.add_argument("--hmm", help="HMM JSON (otherwise generated from --S/--O/--T/--hmm-seed)")
    p.add_argument("--out", required=True)

    p = add("sample", cmd_sample, "draw strings from a representation", smp)
    p.add_argument("--rep", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--trace", help="write per-step JSON lines here")

    p = add("eval", cmd_eval, "TV between a representation and an HMM",
            smp | oracle | {"eval_mode", "n_samples"})
    p.add_argument("--rep", required=True)
    p.add_argument("--hmm", required=True)

    p = add("audit", cmd_audit, "audit a representation against the oracle",
            oracle | smp | {"audit_histories", "learn_seed"})
    p.add_argument("--rep", required=True)
    p.add_argument("--hmm", required=True)

    add("run", cmd_run, "full pipeline with a JSON report")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as exc:
        # single-stage verbs: the verb is the stage
        print(f"error: {PipelineError(args.verb, f'{type(exc).__name__}: {exc}')}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
