"""The compiled and NumPy kernels must agree."""
import numpy as np
import pytest

from eptv import _kernels_py

compiled = pytest.importorskip("eptv._kernels")


@pytest.fixture
def grid():
    r = np.random.default_rng(7)
    z = np.concatenate([np.linspace(-45, 45, 301), r.normal(0, 5, 300)])
    c = np.exp(r.uniform(np.log(1e-6), np.log(1e6), z.size))
    return z * np.sqrt(c), c


@pytest.mark.parametrize("name,args", [
    ("l1tv_moments", (0.0,)), ("l1tv_moments", (0.032,)), ("l1tv_moments", (7.5,)),
    ("mog2_moments", (0.8, 3400.0, 11.0)), ("mog2_moments", (0.01, 1e4, 1e-8)),
    ("bg_moments", (0.85, 2800.0)), ("bg_moments", (1e-9, 1.0)),
])
def test_backends_agree(grid, name, args):
    m, c = grid
    a = getattr(compiled, name)(m, c, *args)
    b = getattr(_kernels_py, name)(m, c, *args)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-300)


def test_half_normal_switch_is_continuous():
    a = np.array([4.0 - 1e-12, 4.0])
    mean, var = _kernels_py.half_normal_moments(a)
    assert abs(mean[0] - mean[1]) < 1e-11 and abs(var[0] - var[1]) < 1e-11


def test_folded_mean():
    assert _kernels_py.folded_mean(0.0, 1.0) == pytest.approx(np.sqrt(2 / np.pi), rel=1e-15)
    np.testing.assert_allclose(_kernels_py.folded_mean(np.array([-3.0, 2.0]), np.zeros(2)), [3.0, 2.0])
