"""Neural-network primitives with hand-written backward passes."""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import ConfigurationError, ContractError, DegenerateVarianceError, DimensionError
from .tensor import Tensor, add, concat, matmul, mul, record, reshape, transpose

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LN_EPS = 1e-6

_probe = threading.local()


@contextmanager
def kink_signature():
    """Collect the ReLU masks and max-pool argmaxes of every op run inside.

    Two evaluations with equal signatures sit on the same smooth piece of
    the network; gradient checks use this to avoid straddling a kink.
    """
    prev = getattr(_probe, "sig", None)
    sig: list = []
    _probe.sig = sig
    try:
        yield sig
    finally:
        _probe.sig = prev


def _note(arr) -> None:
    sig = getattr(_probe, "sig", None)
    if sig is not None:
        sig.append(arr)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        if (self.kernel, self.stride, self.padding) != (3, 1, 1):
            raise ConfigurationError("only 3x3 kernels with stride 1 and padding 1 are supported")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, spec: Optional[ConvSpec] = None) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1: (N,C,H,W) -> (N,O,H,W)."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o = w.shape[0]
    if w.shape[1:] != (c, 3, 3):
        raise DimensionError(f"conv2d weight {w.shape} does not fit input with {c} channels")
    if spec is not None and (spec.in_channels, spec.out_channels) != (c, o):
        raise DimensionError(f"conv2d spec {spec} disagrees with weight {w.shape}")
    if b is not None and b.shape != (o,):
        raise DimensionError(f"conv2d bias {b.shape} should be ({o},)")

    cols = kernels.im2col3x3(np.ascontiguousarray(x.data))  # N,H,W,C*9
    wmat = w.data.reshape(o, c * 9)
    out = cols.reshape(-1, c * 9) @ wmat.T
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(n, h, wd, o).transpose(0, 3, 1, 2))

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gw = (g2.T @ cols.reshape(-1, c * 9)).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.ascontiguousarray((g2 @ wmat).reshape(n, h, wd, c * 9))
            gx = kernels.col2im3x3(gcols, c, h, wd)
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return record("conv2d", inputs, out, bw)


def maxpool2d(x: Tensor) -> Tensor:
    """Disjoint 2x2 max pooling, stride 2; ties go to the first row-major max."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects (N,C,H,W), got {x.shape}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"maxpool2d needs even spatial extents, got {x.shape[2:]}")
    out, idx = kernels.maxpool2x2_forward(np.ascontiguousarray(x.data))
    _note(idx)
    return record("maxpool2d", (x,), out,
                  lambda g: (kernels.maxpool2x2_backward(np.ascontiguousarray(g), idx),))


class BatchNormState:
    """Running mean/variance for one batchnorm layer, updated in place."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = BN_MOMENTUM):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: Optional[BatchNormState] = None,
                training: bool = True, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalisation over (N, H, W) followed by an affine map.

    In training mode batch statistics are used and ``state`` (if given) is
    blended towards them; in eval mode ``state`` supplies the statistics.
    """
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm2d affine params must be ({c},)")
    shape = (1, c, 1, 1)
    if training:
        count = n * h * w
        if count < 2:
            raise DegenerateVarianceError("batchnorm2d in training mode needs more than one value per channel")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if state is not None:
            m = state.momentum
            state.running_mean *= 1 - m
            state.running_mean += m * mu
            state.running_var *= 1 - m
            state.running_var += m * var * (count / (count - 1))
    else:
        if state is None:
            raise ConfigurationError("batchnorm2d in eval mode needs running statistics")
        mu, var = state.running_mean, state.running_var
    rstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(shape).astype(x.dtype)) * rstd.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def bw(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data.reshape(shape)
        if training:
            m1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = rstd.reshape(shape) * (dxhat - m1 - xhat * m2)
        else:
            gx = dxhat * rstd.reshape(shape)
        return gx, gg, gb

    return record("batchnorm2d", (x, gamma, beta), out, bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # subgradient 0 at 0
    _note(mask)
    return record("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * xd * xd) / math.sqrt(2.0 * math.pi)
    out = (xd * cdf).astype(x.dtype)
    return record("gelu", (x,), out, lambda g: ((g * (cdf + xd * pdf)).astype(x.dtype),))


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if d < 2:
        raise DimensionError("layernorm needs at least two features")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layernorm affine params must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * rstd
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layernorm", (x, gamma, beta), out, bw)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row max."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return record("softmax", (x,), y, lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: x (..., K) with w (K, M) and b (M,)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {w.shape}")
    k, m = w.shape
    if b is not None and b.shape != (m,):
        raise DimensionError(f"linear bias {b.shape} should be ({m},)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, k)
    out = x2 @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        g2 = g.reshape(-1, m)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    inputs = (x, w, b) if b is not None else (x, w)
    return record("linear", inputs, out.reshape(lead + (m,)), bw)


def multi_head_self_attention(x: Tensor, params: dict, heads: int = 8, return_weights: bool = False):
    """Scaled dot-product self-attention over (N, S, D) with ``heads`` heads.

    ``params`` holds ``wq, bq, wk, bk, wv, bv, wo, bo``; each projection is a
    (D, D) matrix whose column blocks of width D/heads belong to one head.
    """
    n, s, d = x.shape
    if d % heads:
        raise ConfigurationError(f"embedding width {d} is not divisible by {heads} heads")
    dh = d // heads

    def split(t):
        return transpose(reshape(t, (n, s, heads, dh)), (0, 2, 1, 3))  # N,h,S,dh

    q = split(linear(x, params["wq"], params["bq"]))
    k = split(linear(x, params["wk"], params["bk"]))
    v = split(linear(x, params["wv"], params["bv"]))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = softmax(scores)
    ctx = matmul(weights, v)
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (n, s, d))
    out = linear(merged, params["wo"], params["bo"])
    return (out, weights) if return_weights else out


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return record("log_softmax", (x,), out, lambda g: (g - sm * g.sum(axis=-1, keepdims=True),))


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean log loss of the fake-class probability softmax(logits)[:, 1].

    With two logits this is binary cross-entropy evaluated through a
    log-sum-exp, finite for any logit magnitude.
    """
    labels = np.asarray(labels).astype(np.intp).reshape(-1)
    if labels.size == 0:
        raise ContractError("bce_with_logits on an empty batch")
    if logits.ndim != 2 or logits.shape[1] != 2 or logits.shape[0] != labels.size:
        raise DimensionError(f"bce_with_logits expects (N,2) logits for {labels.size} labels, got {logits.shape}")
    picked = log_softmax(logits)[np.arange(labels.size), labels]
    return mul(picked.sum(), -1.0 / labels.size)


__all__ = [
    "kink_signature", "ConvSpec", "BatchNormState", "conv2d", "maxpool2d", "batchnorm2d", "relu", "gelu",
    "layernorm", "softmax", "log_softmax", "linear", "multi_head_self_attention",
    "bce_with_logits", "add", "concat",
]
