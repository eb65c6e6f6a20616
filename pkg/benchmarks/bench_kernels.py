"""Time the compiled loop kernels against their numpy counterparts.

Usage: python benchmarks/bench_kernels.py [--repeat N]

With ``STIFFKIT_DISABLE_NUMBA=1`` the loop kernels run as plain Python, so
only run that way with small sizes.
"""

import argparse
import time

import numpy as np

from stiffkit import kernels
from stiffkit._accel import backend_name
from stiffkit.ode import _decay_jit


def _best(fn, repeat):
    fn()  # warm-up (includes compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    n_in, per = 500, 8
    vals = rng.lognormal(size=n_in * per)
    offsets = np.arange(0, n_in * per + 1, per, dtype=np.int64)
    # one stage mean per input, repeated for each of its values
    mus = np.repeat(vals.reshape(n_in, per).mean(axis=1), per)
    m = (np.arange(64) + 0.5) * (10 / 64)
    x, y = rng.standard_normal(2000), rng.standard_normal(2000)
    a = rng.standard_normal((40, 40))
    a = a + a.T
    u0 = np.array([1.0])
    return {
        "delta_counts 500x8, 64x64 grid": (
            lambda: kernels._delta_counts_loop(vals, mus, offsets, m, m),
            lambda: kernels._delta_counts_numpy(vals, mus, offsets, m, m),
        ),
        "kendall_counts n=2000": (
            lambda: kernels._kendall_counts_loop(x, y),
            lambda: kernels._kendall_counts_numpy(x, y),
        ),
        "jacobi 40x40": (
            lambda: kernels._jacobi_loop(a, 1e-12, 100),
            lambda: kernels._jacobi_numpy(a, 1e-12, 100),
        ),
        "euler 1e5 steps": (
            lambda: kernels._euler_final_loop(_decay_jit, u0, 0.0, 1e-5, 100_000, 1e3),
            lambda: kernels._euler_final_python(lambda u, t: -u, u0, 0.0, 1e-5, 100_000, 1e3),
        ),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"loop backend: {backend_name()}")
    print(f"{'kernel':34s} {'loop [ms]':>10s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, (loop, vec) in cases(rng).items():
        t_loop, t_vec = _best(loop, args.repeat), _best(vec, args.repeat)
        print(f"{name:34s} {1e3 * t_loop:10.3f} {1e3 * t_vec:11.3f} {t_vec / t_loop:8.1f}x")


if __name__ == "__main__":
    main()
