#!/usr/bin/env python3
"""Benchmark the compiled convolution kernels against the numpy fallback.

Usage: python3 bench/bench_kernels.py [--repeats N]

Shapes mirror the training workload: transform-net layers at scale 1/4
(32x32 images, batch 16) plus one full-scale layer for reference.
"""

import argparse
import time

import numpy as np

from diat.kernels import numpy_backend

try:
    from diat.kernels import conv_ext
except ImportError:
    conv_ext = None

CASES = [
    # (label, N, Ci, H, Co, k, pad, stride)
    ("transform conv1  (s=1/4)", 16, 3, 32, 8, 9, 4, 1),
    ("transform conv2  (s=1/4)", 16, 8, 32, 16, 3, 1, 2),
    ("residual conv    (s=1/4)", 16, 32, 8, 32, 3, 1, 1),
    ("discriminator c1 (s=1/4)", 16, 3, 32, 8, 8, 3, 2),
    ("transform conv1  (s=1)", 4, 3, 128, 32, 9, 4, 1),
]


def _bench(fn, repeats):
    fn()  # warm up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    backends = [("numpy", numpy_backend)]
    if conv_ext is not None:
        backends.append(("cython", conv_ext))
    else:
        print("compiled extension not available; benchmarking numpy only")

    rng = np.random.default_rng(0)
    header = f"{'case':28s} {'op':12s}" + "".join(f"{n:>12s}" for n, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)

    for label, n, ci, h, co, k, pad, stride in CASES:
        x = rng.standard_normal((n, ci, h, h)).astype(np.float32)
        w = rng.standard_normal((co, ci, k, k)).astype(np.float32)
        b = rng.standard_normal(co).astype(np.float32)
        ho = (h + 2 * pad - k) // stride + 1
        gy = rng.standard_normal((n, co, ho, ho)).astype(np.float32)

        ops = {
            "forward": lambda be: be.conv2d_forward(x, w, b, pad, stride),
            "input_grad": lambda be: be.conv2d_input_grad(gy, w, pad, stride, h, h),
            "weight_grad": lambda be: be.conv2d_weight_grad(x, gy, k, k, pad, stride),
        }
        for op_name, op in ops.items():
            row = f"{label:28s} {op_name:12s}"
            secs = []
            for _, be in backends:
                t = _bench(lambda be=be: op(be), args.repeats)
                secs.append(t)
                row += f"{t * 1e3:10.2f}ms"
            if len(secs) == 2:
                row += f"{secs[0] / secs[1]:9.2f}x"
            print(row)


if __name__ == "__main__":
    main()
