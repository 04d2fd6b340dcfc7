"""numba and numpy kernel flavours must agree; the env flag must force numpy."""
import os
import subprocess
import sys

import numpy as np
import pytest

from dpsvoc import kernels

needs_numba = pytest.mark.skipif("numba" not in kernels.available_backends(), reason="numba missing")


def _cases():
    rng = np.random.default_rng(7)
    sig = rng.standard_normal(3000)
    starts = np.arange(0, 2000, 80)
    return {
        "conv1d_forward": (rng.standard_normal((3, 40)), rng.standard_normal((4, 3, 3)), 3, 34),
        "conv1d_backward": (rng.standard_normal((3, 40)), rng.standard_normal((4, 3, 3)),
                            rng.standard_normal((4, 34)), 3),
        "conv_transpose1d_forward": (rng.standard_normal((3, 9)), rng.standard_normal((3, 2, 10)), 5),
        "conv_transpose1d_backward": (rng.standard_normal((3, 9)), rng.standard_normal((3, 2, 10)),
                                      rng.standard_normal((2, 50)), 5),
        "freqt": (rng.standard_normal((6, 40)), 24, 0.42),
        "nccf": (sig, starts, 400, 39, 268),
        "shift_xcorr": (rng.standard_normal((len(starts), 400)), sig, starts, 200),
    }


@needs_numba
@pytest.mark.parametrize("name", list(_cases()))
def test_numba_matches_numpy(name):
    args = _cases()[name]
    a = kernels.impl(name, "numpy")(*args)
    b = kernels.impl(name, "numba")(*args)
    for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-10)


def test_conv_forward_matches_direct_sum():
    rng = np.random.default_rng(3)
    xp, w = rng.standard_normal((2, 20)), rng.standard_normal((3, 2, 3))
    out = kernels.conv1d_forward(xp, w, 2, 16)
    ref = np.zeros((3, 16))
    for o in range(3):
        for t in range(16):
            ref[o, t] = sum(w[o, i, k] * xp[i, t + 2 * k] for i in range(2) for k in range(3))
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_freqt_alpha_zero_truncates():
    c = np.arange(1.0, 31.0)[None, :]
    np.testing.assert_allclose(kernels.freqt(c, 24, 0.0), c[:, :25], atol=1e-12)


@needs_numba
def test_backend_switching():
    with kernels.use_backend("numpy"):
        assert kernels.get_backend() == "numpy"
    with kernels.use_backend("numba"):
        assert kernels.get_backend() == "numba"
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")


def test_env_flag_forces_numpy():
    env = dict(os.environ, DPSVOC_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from dpsvoc import kernels; print(kernels.get_backend())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
