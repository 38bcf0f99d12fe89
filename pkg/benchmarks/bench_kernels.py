"""Compare the numba and numpy kernel backends on realistic workloads.

Run as: python benchmarks/bench_kernels.py [--repeats 5]

Covers the three hot paths: full training step gradients (seq_grads),
forward-only likelihood scoring (seq_nll), and the decode cell used inside
beam search (cell_batch).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from qac.kernels import load_backend


def make_case(rng, B, T, e, h, r, V, dtype=np.float32):
    eh, g3 = e + h, 3 * h
    return dict(
        tokens=rng.integers(0, V, (B, T)).astype(np.int32),
        lengths=rng.integers(T // 2, T + 1, B).astype(np.int64),
        E=rng.normal(0, 0.2, (V, e)).astype(dtype),
        W=rng.normal(0, 0.2, (eh, g3)).astype(dtype),
        L=rng.normal(0, 0.2, (B, eh, r)).astype(dtype),
        R=rng.normal(0, 0.2, (B, r, g3)).astype(dtype),
        bias=rng.normal(0, 0.2, (B, g3)).astype(dtype),
        ln_gain=np.ones((3, h), dtype=dtype),
        ln_bias=np.zeros((3, h), dtype=dtype),
        P=rng.normal(0, 0.2, (h, V)).astype(dtype),
        p_bias=np.zeros(V, dtype=dtype),
        eps=1e-5,
    )


def timeit(fn, repeats):
    fn()  # warm up (jit compile)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = {name: load_backend(name) for name in ("numpy", "numba")}
    rng = np.random.default_rng(0)

    cases = [
        ("train batch (B=16, T=12, h=64, r=4)", make_case(rng, 16, 12, 12, 64, 4, 32)),
        ("train batch (B=64, T=42, h=300, r=40)", make_case(rng, 64, 42, 24, 300, 40, 79)),
    ]
    print(f"{'case':46s} {'kernel':10s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for label, case in cases:
        a = [case[k] for k in ("tokens", "lengths", "E", "W", "L", "R", "bias",
                               "ln_gain", "ln_bias", "P", "p_bias", "eps")]
        for kernel in ("seq_grads", "seq_nll"):
            t = {name: timeit(lambda be=be: getattr(be, kernel)(*a), args.repeats)
                 for name, be in backends.items()}
            print(f"{label:46s} {kernel:10s} {t['numpy']*1e3:9.2f}ms {t['numba']*1e3:9.2f}ms "
                  f"{t['numpy']/t['numba']:7.2f}x")

    for B, e, h, V in [(100, 24, 300, 79)]:
        eh = e + h
        xh = rng.normal(0, 0.3, (B, eh)).astype(np.float32)
        W_eff = rng.normal(0, 0.2, (eh, 3 * h)).astype(np.float32)
        b_eff = np.zeros(3 * h, dtype=np.float32)
        ln_gain = np.ones((3, h), dtype=np.float32)
        ln_bias = np.zeros((3, h), dtype=np.float32)
        c_prev = np.zeros((B, h), dtype=np.float32)
        label = f"decode cell (beam={B}, h={h})"
        t = {name: timeit(lambda be=be: be.cell_batch(xh, W_eff, b_eff, ln_gain, ln_bias,
                                                      c_prev, 1e-5), args.repeats * 10)
             for name, be in backends.items()}
        print(f"{label:46s} {'cell_batch':10s} {t['numpy']*1e3:9.2f}ms {t['numba']*1e3:9.2f}ms "
              f"{t['numpy']/t['numba']:7.2f}x")


if __name__ == "__main__":
    main()
