#!/usr/bin/env python3
"""Timing comparison of the numba and numpy loss+gradient kernels.

The per-iteration kernel is the hot loop of every benchmark run: one
evaluation per optimization step, 150 steps per episode, hundreds of
episodes per table. Run:

    python benchmarks/bench_kernels.py

Set OSFSL_NO_NUMBA=1 to confirm the fallback wiring (this script always
times both implementations directly, regardless of the selected backend).
"""

import time

import numpy as np

from osfsl import kernels
from osfsl.data import SyntheticSpec, synth_gaussian_features
from osfsl.episodes import preset_spec, sample_episode
from osfsl.losses import LossWeights
from osfsl.optim import OptimConfig, transduce


def time_fn(fn, args, repeats=500, warmup=5):
    for _ in range(warmup):
        fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def kernel_args(n_s, n_q, n, d, seed=0):
    rng = np.random.default_rng(seed)
    us = rng.normal(size=(n_s, d))
    us /= np.linalg.norm(us, axis=1, keepdims=True)
    uq = rng.normal(size=(n_q, d))
    uq /= np.linalg.norm(uq, axis=1, keepdims=True)
    ys = rng.integers(0, n, size=n_s).astype(np.int64)
    c = rng.normal(size=(n, d))
    return us, ys, uq, c, np.full(n, 10.0), np.zeros(n)


def main():
    try:
        from numba import njit
    except ImportError:
        print("numba not installed; only the numpy path is available")
        return

    ostim_nb = njit(cache=True)(kernels._ostim_loops)
    eol_nb = njit(cache=True)(kernels._eol_loops)

    shapes = [
        ("5-way 5-shot |Q|=150 D=16", (25, 150, 5, 16)),
        ("5-way 5-shot |Q|=150 D=64", (25, 150, 5, 64)),
        ("2-way 1-shot |Q|=12  D=16", (2, 12, 2, 16)),
    ]
    print(f"{'shape':28s} {'kernel':6s} {'numba us':>9s} {'numpy us':>9s} {'speedup':>8s}")
    for label, (n_s, n_q, n, d) in shapes:
        base = kernel_args(n_s, n_q, n, d)
        for name, nb_fn, np_fn, extra in (
            ("ostim", ostim_nb, kernels.ostim_loss_grad_numpy, (1.0, 1.0, 1.0)),
            ("eol", eol_nb, kernels.eol_loss_grad_numpy, (1.0, 1.0, 1.0, 0.5, 1.0)),
        ):
            t_nb = time_fn(nb_fn, base + extra)
            t_np = time_fn(np_fn, base + extra)
            print(f"{label:28s} {name:6s} {t_nb*1e6:9.1f} {t_np*1e6:9.1f} "
                  f"{t_np/t_nb:7.1f}x")

    # whole-episode view through the public path (active backend)
    pool = synth_gaussian_features(SyntheticSpec(20, 60, 16, 2.5, 1.0, seed=1))
    episode = sample_episode(pool, preset_spec("balanced", seed=5))
    w = LossWeights(b=0.5)
    cfg = OptimConfig()
    t = time_fn(lambda: transduce(episode.inputs, w, cfg), (), repeats=20, warmup=2)
    print(f"\nfull transduce (150 iterations, backend={kernels.active_backend()}): "
          f"{t*1e3:.1f} ms/episode")


if __name__ == "__main__":
    main()
