"""Benchmark the conv/pool kernels: numba backend vs the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Both backends are imported directly, so ``CVIT_KERNELS`` does not matter
here. The first call of each numba kernel (compilation) is excluded.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cvit.kernels import numba_kernels, numpy_kernels

SHAPES = [(32, 8, 32, 32), (32, 64, 28, 28), (8, 256, 14, 14)]


def timeit(fn, repeat: int) -> float:
    fn()  # warmup / compile
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def cases(shape, rng):
    n, c, h, w = shape
    x = rng.normal(size=shape).astype(np.float32)
    cols = rng.normal(size=(n, c * 9, h * w)).astype(np.float32)
    grad = rng.normal(size=(n, c, h // 2, w // 2)).astype(np.float32)
    yield "im2col", lambda k: k.im2col3x3(x)
    yield "col2im", lambda k: k.col2im3x3(cols, c, h, w)
    yield "maxpool fwd", lambda k: k.maxpool2x2_forward(x)
    _, idx = numpy_kernels.maxpool2x2_forward(x)
    yield "maxpool bwd", lambda k: k.maxpool2x2_backward(grad, idx)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if numba_kernels is None:
        print("numba is not installed; only the numpy backend can run")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12} {'shape':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for shape in SHAPES:
        for name, call in cases(shape, rng):
            t_np = timeit(lambda: call(numpy_kernels), args.repeat)
            if numba_kernels is None:
                print(f"{name:<12} {str(shape):<18} {t_np * 1e3:>10.3f} {'-':>10} {'-':>8}")
                continue
            t_nb = timeit(lambda: call(numba_kernels), args.repeat)
            print(f"{name:<12} {str(shape):<18} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
