"""Hot loops behind the convolution and pooling ops.

Two interchangeable backends exist: ``numba`` (JIT-compiled loops) and
``numpy`` (vectorised array code). ``CVIT_KERNELS=numpy`` forces the pure
numpy path; otherwise numba is used when it imports.
"""

import logging
import os

from . import _numpy as numpy_kernels

logger = logging.getLogger(__name__)

_requested = os.environ.get("CVIT_KERNELS", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"CVIT_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

numba_kernels = None
if _requested == "numba":
    # the bundled TBB is too old for numba and only produces a warning
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    try:
        from . import _numba as numba_kernels
    except ImportError:  # pragma: no cover - numba is optional
        logger.warning("numba unavailable, falling back to numpy kernels")

_active = numba_kernels if numba_kernels is not None else numpy_kernels
BACKEND = "numba" if _active is numba_kernels else "numpy"


def im2col3x3(x):
    return _active.im2col3x3(x)


def col2im3x3(cols, c, h, w):
    return _active.col2im3x3(cols, c, h, w)


def maxpool2x2_forward(x):
    return _active.maxpool2x2_forward(x)


def maxpool2x2_backward(grad, idx):
    return _active.maxpool2x2_backward(grad, idx)
