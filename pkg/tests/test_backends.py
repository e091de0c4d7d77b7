"""The numba and numpy implementations of every hot kernel agree bit for bit."""

import numpy as np
import pytest

from bevocc import _accel, kernels
from bevocc.tensor import init_conv2d, init_conv3d, conv2d, conv3d

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba unavailable or disabled")


def both(fn, *args):
    with _accel.use_backend("numba"):
        a = fn(*args)
    with _accel.use_backend("numpy"):
        b = fn(*args)
    return a, b


def test_gather_tile():
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((3, 4, 9, 10)).astype(np.float32)

    def run(kernel, stride, od, oh0, oh1, wo):
        col = np.full((3 * int(np.prod(kernel)), (oh1 - oh0) * wo), np.nan, np.float32)
        kernels.gather_tile(xp, kernel, stride, od, oh0, oh1, wo, col)
        return col

    for args in [((1, 3, 3), (1, 1, 1), 2, 0, 7, 8), ((3, 3, 3), (2, 2, 2), 0, 1, 4, 4), ((1, 1, 1), (1, 2, 2), 3, 2, 5, 5)]:
        a, b = both(run, *args)
        assert not np.isnan(a).any()
        assert a.tobytes() == b.tobytes()


def test_scatter_add():
    rng = np.random.default_rng(1)
    feat = rng.standard_normal((4, 500)).astype(np.float32)
    idx = rng.integers(-1, 30, 500)

    def run():
        out = np.zeros((4, 30), np.float32)
        kernels.scatter_add(feat, idx, out)
        return out

    a, b = both(run)
    assert a.tobytes() == b.tobytes()


def test_bilinear_sample():
    rng = np.random.default_rng(2)
    src = rng.standard_normal((3, 7, 9)).astype(np.float32)
    sx = rng.uniform(-2, 10, (7, 9))
    sy = rng.uniform(-2, 8, (7, 9))
    a, b = both(kernels.bilinear_sample, src, sx, sy)
    assert a.tobytes() == b.tobytes()


def test_upsample_last():
    x = np.random.default_rng(3).standard_normal((11, 7)).astype(np.float32)
    a, b = both(kernels.upsample2x_last, x)
    assert a.tobytes() == b.tobytes()


def test_dda_visible():
    rng = np.random.default_rng(4)
    occ = rng.random((6, 7, 8)) < 0.15
    targets = np.argwhere(occ)[:, ::-1]
    cam = np.array([-1.3, 3.7, 2.2])
    a, b = both(kernels.dda_visible, occ, np.zeros(3), np.full(3, 0.5), cam, targets)
    assert np.array_equal(a, b)


def test_full_convs_identical():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 4, 10, 12)).astype(np.float32)
    a, b = both(conv2d, x, init_conv2d("b", 4, 5, stride=2))
    assert a.tobytes() == b.tobytes()
    v = rng.standard_normal((1, 2, 4, 6, 6)).astype(np.float32)
    a, b = both(conv3d, v, init_conv3d("b3", 2, 3))
    assert a.tobytes() == b.tobytes()


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")


def test_env_flag_selects_numpy():
    import subprocess
    import sys

    code = "from bevocc import _accel; print(_accel.get_backend(), _accel.HAVE_NUMBA)"
    env = dict(__import__("os").environ, BEVOCC_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out.split() == ["numpy", "False"]
