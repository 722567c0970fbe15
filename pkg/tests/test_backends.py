"""Backend agreement: the numba loop kernels must reproduce the default
numpy im2col kernels on identical inputs (forward and both gradients)."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cassr import backend

numba = pytest.importorskip("numba")

_PROBE = r"""
import json, sys
import numpy as np
from cassr import backend
assert backend.ACTIVE == "numba", backend.ACTIVE
rng = np.random.default_rng(0)
out = {}
for stride, pad in ((1, 1), (2, 0)):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 2 if stride == 2 else 3,
                             2 if stride == 2 else 3))
    y, ctx = backend.conv2d_forward(x, w, stride, pad)
    dy = rng.standard_normal(y.shape)
    dx, dw = backend.conv2d_backward(dy, x, w, ctx, stride, pad)
    out[f"{stride}{pad}"] = [y.tolist(), dx.tolist(), dw.tolist()]
print(json.dumps(out))
"""


def test_numba_matches_numpy_kernels():
    env = dict(os.environ, CASSR_BACKEND="numba")
    proc = subprocess.run([sys.executable, "-c", _PROBE], env=env,
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    got = json.loads(proc.stdout)

    assert backend.ACTIVE == "numpy"  # default in the test process
    rng = np.random.default_rng(0)
    for stride, pad in ((1, 1), (2, 0)):
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 2 if stride == 2 else 3,
                                 2 if stride == 2 else 3))
        y, ctx = backend.conv2d_forward(x, w, stride, pad)
        dy = rng.standard_normal(y.shape)
        dx, dw = backend.conv2d_backward(dy, x, w, ctx, stride, pad)
        ny, ndx, ndw = (np.array(v) for v in got[f"{stride}{pad}"])
        np.testing.assert_allclose(y, ny, atol=1e-10)
        np.testing.assert_allclose(dx, ndx, atol=1e-10)
        np.testing.assert_allclose(dw, ndw, atol=1e-10)


def test_invalid_backend_rejected():
    proc = subprocess.run(
        [sys.executable, "-c", "import cassr.backend"],
        env=dict(os.environ, CASSR_BACKEND="gpu"),
        capture_output=True, text=True, timeout=60)
    assert proc.returncode != 0
    assert "CASSR_BACKEND" in proc.stderr
