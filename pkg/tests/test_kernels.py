import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lowrank_stealing import _kernels_py, kernels
from oracles import trunc_kl_reference

SRC = str(Path(__file__).resolve().parents[1] / "src")


def barrier_case(seed, m=3, n=200):
    rng = np.random.default_rng(seed)
    R = rng.dirichlet(np.ones(n), size=m)
    alpha = np.full(m, 1.0 / m) + 0.01 * rng.standard_normal(m)
    floor = np.full(n, 1e-5)
    logz = np.log(rng.dirichlet(np.ones(n)))
    return alpha, R, floor, logz


def test_trunc_kl_matches_loop():
    rng = np.random.default_rng(0)
    u, v, w = rng.uniform(0, 1, 50), rng.uniform(0, 1, 50), rng.uniform(1e-3, 0.2, 50)
    assert kernels.trunc_kl(u, v, w) == pytest.approx(trunc_kl_reference(u, v, w), abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_backends_agree(seed):
    args = barrier_case(seed)
    a = kernels.barrier_eval(*args, 6.0, 10.0)
    b = _kernels_py.barrier_eval(*args, 6.0, 10.0)
    assert a[0] == pytest.approx(b[0], rel=1e-12) and a[1] == pytest.approx(b[1], rel=1e-12)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(a[3], b[3], rtol=1e-10, atol=1e-10)


def test_outside_interior_is_infinite():
    alpha, R, floor, logz = barrier_case(0)
    for impl in (kernels, _kernels_py):
        val, obj, g, H = impl.barrier_eval(-alpha, R, floor, logz, 6.0, 1.0)
        assert val == np.inf and g is None and H is None


def test_gradient_matches_finite_difference():
    alpha, R, floor, logz = barrier_case(1)
    _, _, g, _ = kernels.barrier_eval(alpha, R, floor, logz, 6.0, 3.0)
    h = 1e-6
    for i in range(len(alpha)):
        e = np.zeros_like(alpha)
        e[i] = h
        up = kernels.barrier_eval(alpha + e, R, floor, logz, 6.0, 3.0, derivs=False)[0]
        dn = kernels.barrier_eval(alpha - e, R, floor, logz, 6.0, 3.0, derivs=False)[0]
        assert g[i] == pytest.approx((up - dn) / (2 * h), rel=1e-5)


def test_pure_env_forces_numpy_backend():
    env = dict(os.environ, PYTHONPATH=SRC, LOWRANK_STEALING_PURE="1")
    out = subprocess.run([sys.executable, "-c",
                          "from lowrank_stealing import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
