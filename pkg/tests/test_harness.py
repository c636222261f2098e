import json
from dataclasses import replace

import pytest

from lowrank_stealing.harness import (ConfigError, ExperimentConfig, PipelineError, RunReport,
                                      run_pipeline)


def no_timing(report: RunReport) -> dict:
    d = json.loads(report.to_json(include_timing=False))
    d["config"].pop("out_dir")
    return d


def test_reference_run(tmp_path):
    rep = run_pipeline(ExperimentConfig(out_dir=str(tmp_path)))
    assert rep.tv["method"] == "exact"
    assert rep.tv["value"] <= 0.15
    assert abs(rep.tv["learned_mass"] - 1) <= 1e-6
    assert rep.budget["conditional_queries"] == 0
    assert rep.solver["fallbacks"] == 0
    for name in ("hmm.json", "rep.json", "report.json"):
        assert (tmp_path / name).exists()
    d = json.loads((tmp_path / "report.json").read_text())
    assert d["version"] == 1 and {"hmm", "learn", "eval", "total"} <= set(d["timing"])
    assert len(d["levels"]) == 5 and all(lv["spanner_size"] <= 2 for lv in d["levels"])


def test_iid_run():
    rep = run_pipeline(ExperimentConfig(S=1, O=3, T=6, audit=False))
    assert rep.tv["value"] <= 0.05


def test_reproducible(tmp_path):
    cfg = ExperimentConfig(oracle_mode="sampled", samples_per_node=2000, T=4)
    a = run_pipeline(replace(cfg, out_dir=str(tmp_path / "a")))
    b = run_pipeline(replace(cfg, out_dir=str(tmp_path / "b")))
    assert no_timing(a) == no_timing(b)
    assert (tmp_path / "a" / "rep.json").read_bytes() == (tmp_path / "b" / "rep.json").read_bytes()


def test_missing_seeds_are_recorded():
    rep = run_pipeline(ExperimentConfig(T=3, hmm_seed=None, learn_seed=None, audit=False))
    assert isinstance(rep.config["hmm_seed"], int) and isinstance(rep.config["learn_seed"], int)


def test_empirical_mode():
    rep = run_pipeline(ExperimentConfig(T=4, eval_mode="empirical", n_samples=2000, audit=False))
    lo, hi = rep.tv["ci"]
    assert 0.0 <= lo <= hi <= 1.0 and rep.tv["n"] == 2000


def test_guard_fails_early():
    with pytest.raises(PipelineError) as info:
        run_pipeline(ExperimentConfig(O=2, T=30))
    assert info.value.stage == "eval"


@pytest.mark.parametrize("kw", [dict(S=0), dict(eps=1.5), dict(oracle_mode="x"),
                                dict(eval_mode="empirical", n_samples=10), dict(c_floor=0.0)])
def test_bad_config(kw):
    with pytest.raises(ConfigError):
        run_pipeline(ExperimentConfig(**kw))


def test_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"T": 3, "k": 64}))
    cfg = ExperimentConfig.from_file(p)
    assert cfg.T == 3 and cfg.k == 64 and cfg.S == 2
    p.write_text(json.dumps({"T": 3, "bogus": 1}))
    with pytest.raises(ConfigError, match="bogus"):
        ExperimentConfig.from_file(p)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "missing.json")
