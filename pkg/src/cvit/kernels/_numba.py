"""JIT-compiled kernels; each function mirrors one in ``_numpy``."""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def im2col3x3(x):
    n, c, h, w = x.shape
    out = np.zeros((n, h, w, c * 9), dtype=x.dtype)
    for b in prange(n):
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    base = ch * 9
                    for ky in range(3):
                        yy = i + ky - 1
                        if yy < 0 or yy >= h:
                            continue
                        for kx in range(3):
                            xx = j + kx - 1
                            if xx < 0 or xx >= w:
                                continue
                            out[b, i, j, base + ky * 3 + kx] = x[b, ch, yy, xx]
    return out


@njit(cache=True, parallel=True)
def col2im3x3(cols, c, h, w):
    n = cols.shape[0]
    cols = cols.reshape(n, h, w, c * 9)
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    # parallel over batch only: every b owns a disjoint output slab
    for b in prange(n):
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    base = ch * 9
                    for ky in range(3):
                        yy = i + ky - 1
                        if yy < 0 or yy >= h:
                            continue
                        for kx in range(3):
                            xx = j + kx - 1
                            if xx < 0 or xx >= w:
                                continue
                            out[b, ch, yy, xx] += cols[b, i, j, base + ky * 3 + kx]
    return out


@njit(cache=True, parallel=True)
def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    idx = np.empty((n, c, ho, wo), dtype=np.int8)
    for b in prange(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = x[b, ch, 2 * i, 2 * j]
                    k = 0
                    for d in range(1, 4):
                        v = x[b, ch, 2 * i + d // 2, 2 * j + d % 2]
                        if v > best:
                            best = v
                            k = d
                    out[b, ch, i, j] = best
                    idx[b, ch, i, j] = k
    return out, idx


@njit(cache=True, parallel=True)
def maxpool2x2_backward(grad, idx):
    n, c, ho, wo = grad.shape
    out = np.zeros((n, c, ho * 2, wo * 2), dtype=grad.dtype)
    for b in prange(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    k = idx[b, ch, i, j]
                    out[b, ch, 2 * i + k // 2, 2 * j + k % 2] = grad[b, ch, i, j]
    return out
