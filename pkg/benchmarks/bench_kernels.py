"""Timing comparison between the compiled and numpy kernel backends.

Runs every kernel on shapes typical of a training step (batch 512,
embedding 32, pooled frame dim 64, 150 train movies) and prints per-call
time for both backends plus the speedup. The compiled backend is optional;
without it the script reports numpy alone.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--batch N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from marquee.kernels import _np

try:
    from marquee.kernels import _cy
except ImportError:
    _cy = None


def bench(fn, args, repeat: int) -> float:
    """Best-of-5 mean seconds per call over `repeat` calls."""
    best = float("inf")
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / repeat)
    return best


def make_cases(batch: int, rng: np.random.Generator):
    emb = 32
    frame_dim = 64
    n_movies = 150
    hidden = 256

    x = rng.normal(size=(batch, frame_dim))
    w = rng.normal(size=(frame_dim, hidden))
    b = rng.normal(size=hidden)
    z = rng.normal(size=(batch, hidden))
    dz = rng.normal(size=(batch, hidden))

    # history pooling: ~20 prior movies per pair
    seg_len = rng.integers(0, 40, size=batch)
    offsets = np.zeros(batch + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(seg_len)
    idx = rng.integers(0, n_movies, size=int(offsets[-1]))
    v = rng.normal(size=(n_movies, emb))
    dm = rng.normal(size=(batch, emb))

    u1 = rng.normal(size=(batch, emb))
    u2 = rng.normal(size=(batch, emb))

    param = rng.normal(size=(frame_dim, hidden))
    grad = rng.normal(size=(frame_dim, hidden))
    m = np.zeros_like(param)
    vv = np.zeros_like(param)

    return [
        ("affine_forward", "affine_forward", (x, w, b)),
        ("affine_backward", "affine_backward", (x, w, dz)),
        ("act_forward relu", "act_forward", (z, _np.ACT_RELU)),
        ("act_backward relu", "act_backward", (z, dz, _np.ACT_RELU)),
        ("act_forward tanh", "act_forward", (z, _np.ACT_TANH)),
        ("segment_mean", "segment_mean", (v, idx, offsets)),
        ("segment_mean_backward", "segment_mean_backward", (dm, idx, offsets, n_movies)),
        ("squared_distances", "squared_distances", (u1, u2)),
        ("sgd_update", "sgd_update", (param.copy(), grad, 1e-3)),
        ("adam_update", "adam_update", (param.copy(), grad, m, vv, 1, 1e-3, 0.9, 0.999, 1e-8)),
    ]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200, help="calls per measurement")
    ap.add_argument("--batch", type=int, default=512, help="rows per batch")
    args = ap.parse_args()

    rng = np.random.default_rng(7)
    cases = make_cases(args.batch, rng)

    if _cy is None:
        print("compiled backend not built; timing numpy only")
        print(f"{'kernel':<24} {'numpy':>10}")
        for label, name, fn_args in cases:
            t = bench(getattr(_np, name), fn_args, args.repeat)
            print(f"{label:<24} {t * 1e6:>8.1f}us")
        return 0

    print(f"batch={args.batch}, repeat={args.repeat}")
    print(f"{'kernel':<24} {'numpy':>10} {'cython':>10} {'speedup':>9}")
    for label, name, fn_args in cases:
        t_np = bench(getattr(_np, name), fn_args, args.repeat)
        t_cy = bench(getattr(_cy, name), fn_args, args.repeat)
        print(
            f"{label:<24} {t_np * 1e6:>8.1f}us {t_cy * 1e6:>8.1f}us {t_np / t_cy:>8.2f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
