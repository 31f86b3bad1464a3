import os
import subprocess
import sys

import numpy as np
import pytest

from cvit import kernels
from cvit.kernels import numpy_kernels

numba_kernels = kernels.numba_kernels
needs_numba = pytest.mark.skipif(numba_kernels is None, reason="numba not importable")


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(1, 1, 3, 3), (2, 3, 6, 4), (3, 5, 8, 8)])
class TestBackendsAgree:
    @needs_numba
    def test_im2col(self, rng, dtype, shape):
        x = rng.normal(size=shape).astype(dtype)
        np.testing.assert_array_equal(numba_kernels.im2col3x3(x), numpy_kernels.im2col3x3(x))

    @needs_numba
    def test_col2im(self, rng, dtype, shape):
        n, c, h, w = shape
        cols = rng.normal(size=(n, h, w, c * 9)).astype(dtype)
        np.testing.assert_allclose(numba_kernels.col2im3x3(cols, c, h, w),
                                   numpy_kernels.col2im3x3(cols, c, h, w), rtol=1e-6, atol=1e-6)

    @needs_numba
    def test_maxpool(self, rng, dtype, shape):
        n, c, h, w = shape
        x = rng.normal(size=(n, c, 2 * h, 2 * w)).astype(dtype)
        x[..., 0, 0] = x[..., 0, 1]  # a tie in every first window
        o1, i1 = numba_kernels.maxpool2x2_forward(x)
        o2, i2 = numpy_kernels.maxpool2x2_forward(x)
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_array_equal(i1, i2)
        g = rng.normal(size=o1.shape).astype(dtype)
        np.testing.assert_array_equal(numba_kernels.maxpool2x2_backward(g, i1),
                                      numpy_kernels.maxpool2x2_backward(g, i2))


def test_col2im_is_adjoint_of_im2col(rng):
    x = rng.normal(size=(2, 3, 5, 4))
    cols = rng.normal(size=(2, 5, 4, 27))
    lhs = np.sum(numpy_kernels.im2col3x3(x) * cols)
    rhs = np.sum(x * numpy_kernels.col2im3x3(cols, 3, 5, 4))
    assert abs(lhs - rhs) < 1e-10


def test_env_flag_selects_numpy():
    env = dict(os.environ, CVIT_KERNELS="numpy")
    out = subprocess.run([sys.executable, "-c", "from cvit import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_env_flag_rejects_unknown():
    env = dict(os.environ, CVIT_KERNELS="cuda")
    out = subprocess.run([sys.executable, "-c", "import cvit.kernels"], env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "CVIT_KERNELS" in out.stderr
