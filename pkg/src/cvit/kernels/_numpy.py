"""Reference kernels written with numpy array primitives only."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3x3(x):
    """(N, C, H, W) -> (N, H, W, C*9) patches of a zero-padded 3x3 window."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, h, w, c * 9)


def col2im3x3(cols, c, h, w):
    """Adjoint of :func:`im2col3x3`: scatter-add patches back to (N, C, H, W)."""
    n = cols.shape[0]
    cols = cols.reshape(n, h, w, c, 3, 3)
    out = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for ky in range(3):
        for kx in range(3):
            out[:, :, ky:ky + h, kx:kx + w] += cols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    return out[:, :, 1:-1, 1:-1].copy()


def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximum, i.e. row-major tie-breaking
    idx = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(grad, idx):
    n, c, ho, wo = grad.shape
    onehot = idx[..., None] == np.arange(4, dtype=np.int8)
    win = np.where(onehot, grad[..., None], 0).astype(grad.dtype)
    win = win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(win).reshape(n, c, ho * 2, wo * 2)
