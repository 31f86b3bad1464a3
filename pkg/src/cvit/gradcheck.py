"""Central finite-difference gradient checking.

The check is only meaningful on a smooth piece of the function. When the
interval [x - h, x + h] crosses a ReLU or max-pool switch (detected through
:func:`cvit.nn.kink_signature`), the coordinate is moved by a random offset
that grows geometrically per retry, and both gradients are recomputed there.
"""

from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .nn import kink_signature
from .tensor import Tape, Tensor, backward


def _same(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def _eval(f, avoid_kinks):
    if not avoid_kinks:
        return float(f().data), None
    with kink_signature() as sig:
        value = float(f().data)
    return value, sig


def numerical_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5,
                   coords: Optional[Sequence[int]] = None) -> np.ndarray:
    """Plain central differences of scalar ``f()`` at the current point.

    ``x.data`` is perturbed in place and restored. Only flat indices in
    ``coords`` are visited when given; others stay NaN.
    """
    flat = x.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    for i in (range(flat.size) if coords is None else coords):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def _analytic(f, tensors):
    with Tape() as tape:
        loss = f()
    return backward(tape, loss, wrt=tensors)


def _check_tensor(f, x: Tensor, grads: Dict[int, np.ndarray], coords, h, avoid_kinks, rng,
                  max_moves: int = 10) -> float:
    flat = x.data.reshape(-1)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        analytic = grads[x.id].reshape(-1)[i]
        for attempt in range(max_moves + 1):
            base = flat[i]
            _, sig0 = _eval(f, avoid_kinks)
            flat[i] = base + h
            fp, sigp = _eval(f, avoid_kinks)
            flat[i] = base - h
            fm, sigm = _eval(f, avoid_kinks)
            flat[i] = base
            if not avoid_kinks or (_same(sig0, sigp) and _same(sig0, sigm)):
                break
            if attempt == max_moves:
                raise RuntimeError(f"could not find a kink-free point for coordinate {i}")
            scale = 1e-4 * 3.0 ** attempt * max(1.0, abs(orig))
            flat[i] = orig + rng.uniform(-1.0, 1.0) * scale
            analytic = _analytic(f, [x])[x.id].reshape(-1)[i]
        flat[i] = orig
        numeric = (fp - fm) / (2 * h)
        worst = max(worst, abs(analytic - numeric) / max(1.0, abs(analytic)))
    return float(worst)


def finite_diff_check(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5,
                      coords: Optional[Sequence[int]] = None, avoid_kinks: bool = True, rng=None) -> float:
    """max |analytic - numeric| / max(1, |analytic|) over the checked coordinates of ``x``."""
    rng = np.random.default_rng(0) if rng is None else rng
    grads = _analytic(f, [x])
    coords = range(x.size) if coords is None else coords
    return _check_tensor(f, x, grads, coords, h, avoid_kinks, rng)


def check_many(f: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
               max_coords: Optional[int] = None, rng=None, avoid_kinks: bool = True) -> dict:
    """:func:`finite_diff_check` for each tensor; returns ``{name or index: error}``.

    With ``max_coords`` a random subset of that many coordinates per tensor is
    checked, which keeps large models tractable.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grads = _analytic(f, list(tensors))
    report = {}
    for k, t in enumerate(tensors):
        if max_coords is not None and t.size > max_coords:
            coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        else:
            coords = range(t.size)
        report[t.name if t.name is not None else k] = _check_tensor(f, t, grads, coords, h, avoid_kinks, rng)
    return report
