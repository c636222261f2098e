import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lowrank_stealing.harness import ExperimentConfig, make_oracle  # noqa: E402
from lowrank_stealing.hmm import random_hmm  # noqa: E402
from lowrank_stealing.learner import LearnParams, learn  # noqa: E402
from lowrank_stealing.sampler import Sampler  # noqa: E402


@pytest.fixture(scope="session")
def ref_hmm():
    return random_hmm(2, 2, 5, 7)


@pytest.fixture(scope="session")
def ref_run(ref_hmm):
    """The reference learning run: exact-base oracle, default parameters."""
    cfg = ExperimentConfig()
    tree = make_oracle(ref_hmm, cfg)
    rep = learn(tree, 2, LearnParams(seed=cfg.learn_seed))
    return tree, rep


@pytest.fixture(scope="session")
def ref_sampler(ref_run):
    return Sampler(ref_run[1])
