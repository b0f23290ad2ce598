import os
import subprocess
import sys

import numpy as np
import pytest

from entrodyn import _pykernels, kernels
from entrodyn.dynamics import DynamicsSpec
from entrodyn.entropy import EntropyKernel
from entrodyn.games import random_game

compiled_only = pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="compiled backend not built")


def _arrays(spec):
    return spec._arrays


def test_python_backend_always_available():
    assert "python" in kernels.available_backends()
    assert kernels.get_backend("python") is _pykernels
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_environment_forces_fallback():
    code = "from entrodyn import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, ENTRODYN_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@compiled_only
@pytest.mark.parametrize("code,q", [(0, 1.0), (1, 1.0), (2, 0.5)])
def test_rk4_score_backends_agree(code, q):
    g = random_game([3, 2], np.random.default_rng(5))
    h = EntropyKernel(["gibbs", "log", "tsallis"][code], q)
    u2, shape, off, temps, rates = _arrays(DynamicsSpec(g, h, 0.3, rates=(1.0, 2.0)))
    z0 = np.array([0.4, -1.0, 0.7])
    res = [
        kernels.get_backend(name).rk4_score(u2, shape, off, code, q, temps, rates, z0, 0.01, 500, -1.0, 700.0, 7)
        for name in ("cython", "python")
    ]
    np.testing.assert_allclose(res[0][0], res[1][0], rtol=0, atol=1e-12)
    np.testing.assert_array_equal(res[0][1], res[1][1])
    assert res[0][2] == res[1][2]


@compiled_only
@pytest.mark.parametrize("code,q", [(0, 1.0), (1, 1.0), (2, 0.5)])
def test_choice_kernel_backends_agree(code, q):
    rng = np.random.default_rng(code)
    a, b = np.empty(4), np.empty(4)
    for _ in range(100):
        y = rng.normal(scale=5, size=4)
        kernels.get_backend("cython").choice_kernel(code, q, y, a)
        kernels.get_backend("python").choice_kernel(code, q, y, b)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)
