import os
import subprocess
import sys

import numpy as np
import pytest

from riftlab import _pycore, kernels
from riftlab.mdp import random_mdp, random_policy
from riftlab.rng import generator

_core = pytest.importorskip("riftlab._core")


def inputs(seed, S=12, A=3, H=25, E=300, dense=False):
    rng = generator(seed)
    mdp = random_mdp(rng, S, A, 0.9)
    T = mdp.transition
    if not dense:
        T = np.where(T > 0.15, T, 0.0)
        T[..., 0] += 1.0 - T.sum(axis=2)
    pi = random_policy(rng, S, A)
    term = (rng.random(S) < 0.2).astype(np.uint8)
    return dict(T=T, r=mdp.reward, pi=pi, term=term, init=mdp.initial, H=H, E=E, rng=rng)


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("dense", [False, True])
def test_soft_bellman_agrees(dense):
    x = inputs(0, dense=dense)
    off = 0.3 * np.log(x["pi"])
    q0 = np.zeros_like(x["r"])
    a = _pycore.soft_bellman(x["T"], x["r"], off, 0.9, 0.3, q0, 1e-11, 100000)
    b = _core.soft_bellman(x["T"], x["r"], off, 0.9, 0.3, q0, 1e-11, 100000)
    assert np.allclose(a[0], b[0], atol=1e-9)
    assert a[2] <= 1e-11 and b[2] <= 1e-11


def test_rollout_batch_identical():
    x = inputs(1)
    S, A = x["r"].shape
    R = np.ascontiguousarray(np.broadcast_to(x["r"][:, :, None], (S, A, S)))
    phi = x["rng"].uniform(0, 0.2, size=(S, A))
    u = x["rng"].random((x["E"], 1 + 3 * x["H"]))
    args = (np.cumsum(x["pi"], 1), np.cumsum(x["T"], 2), R, phi, x["term"], np.cumsum(x["init"]), u)
    a = _pycore.rollout_batch(*args)
    b = _core.rollout_batch(*args)
    for ya, yb in zip(a, b):
        ya, yb = np.asarray(ya), np.asarray(yb)
        if ya.dtype.kind in "iu":
            assert np.array_equal(ya, yb)
        else:
            assert np.allclose(ya, yb, atol=1e-12)


def test_mc_occupancy_agrees():
    x = inputs(2)
    u = x["rng"].random((x["E"], 1 + 2 * x["H"]))
    args = (np.cumsum(x["pi"], 1), np.cumsum(x["T"], 2), np.cumsum(x["init"]), 0.9, u)
    a = _pycore.mc_occupancy(*args)
    b = _core.mc_occupancy(*args)
    for ya, yb in zip(np.atleast_1d(a) if not isinstance(a, tuple) else a,
                      np.atleast_1d(b) if not isinstance(b, tuple) else b):
        assert np.allclose(ya, yb, atol=1e-12)


def test_pure_python_fallback_selected_by_env():
    env = dict(os.environ, RIFTLAB_PURE_PYTHON="1")
    code = ("from riftlab import kernels, soft_value_iteration; from riftlab.mdp import random_mdp;"
            "from riftlab.rng import generator; print(kernels.BACKEND);"
            "print(soft_value_iteration(random_mdp(generator(0), 3, 2, 0.9), 1.0).q.sum())")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, total = out.stdout.split()
    assert backend == "python"
    from riftlab import soft_value_iteration
    assert float(total) == pytest.approx(soft_value_iteration(random_mdp(generator(0), 3, 2, 0.9), 1.0).q.sum(), abs=1e-8)
