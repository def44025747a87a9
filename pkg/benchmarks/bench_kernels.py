#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs every hot kernel at a representative problem size under both backends
and prints a table with the speedup. First numba call per kernel triggers
(or loads the cache of) JIT compilation; a warmup call keeps that out of
the timings.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from cfcam import backend


def _time(fn, args, repeat):
    fn(*args)  # warmup / JIT
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases():
    rng = np.random.default_rng(0)
    kernel = np.exp(-np.arange(-15, 16) ** 2 / 50.0)
    kernel /= kernel.sum()
    seqs = np.ascontiguousarray(rng.normal(size=(512, 3136)))
    channels = np.ascontiguousarray(rng.normal(size=(512, 49)))
    pts = rng.normal(size=(512, 2))
    dist = np.sqrt(((pts[:, None] - pts[None, :]) ** 2).sum(-1))
    plane = np.ascontiguousarray(rng.normal(size=(56, 56)))
    x = rng.normal(size=(1, 16, 56, 56)).astype(np.float32)
    w = rng.normal(size=(32, 16, 3, 3)).astype(np.float32)
    b = np.zeros(32, np.float32)
    return [
        ("gaussian_filter_axis0 (512x3136, r=15)",
         backend.gaussian_filter_axis0, (seqs, kernel)),
        ("pairwise_euclidean (512 ch x 49 px)",
         backend.pairwise_euclidean, (channels,)),
        ("dbscan_labels (n=512)",
         backend.dbscan_labels, (dist, float(np.median(dist)), 6)),
        ("bilinear_resize (56 -> 224)",
         backend.bilinear_resize, (plane, 224, 224)),
    ]


def _direct_cases():
    """Conv/MaxPool: compiled direct loops vs the im2col/BLAS path.

    Production routes both backends through the BLAS path because of this
    very comparison; the table shows why.
    """
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 16, 56, 56)).astype(np.float32)
    w = rng.normal(size=(32, 16, 3, 3)).astype(np.float32)
    b = np.zeros(32, np.float32)
    from cfcam import _kernels_numpy
    try:
        from cfcam import _kernels_numba
    except ImportError:
        return []
    return [
        ("conv2d loops-vs-BLAS (16->32 ch, 56x56)",
         (_kernels_numba.conv2d_direct, _kernels_numpy.conv2d),
         (x, w, b, 1, 1, 1, 1, 1, 1)),
        ("maxpool2d loops-vs-BLAS (2x2/2, 56x56)",
         (_kernels_numba.maxpool2d_direct, _kernels_numpy.maxpool2d),
         (x, 2, 2, 2, 2, 0, 0, 0, 0)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    have_numba = backend.use_backend("numba") == "numba"
    if not have_numba:
        print("numba unavailable; timing the numpy fallback only")

    rows = []
    for label, fn, fargs in _cases():
        entry = {"label": label}
        if have_numba:
            backend.use_backend("numba")
            entry["numba"] = _time(fn, fargs, args.repeat)
        backend.use_backend("numpy")
        entry["numpy"] = _time(fn, fargs, args.repeat)
        rows.append(entry)
    backend.use_backend("numba")
    for label, (numba_fn, numpy_fn), fargs in _direct_cases():
        rows.append({"label": label,
                     "numba": _time(numba_fn, fargs, args.repeat),
                     "numpy": _time(numpy_fn, fargs, args.repeat)})

    width = max(len(r["label"]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for r in rows:
        np_ms = r["numpy"] * 1e3
        if "numba" in r:
            nb_ms = r["numba"] * 1e3
            print(f"{r['label']:<{width}}  {np_ms:>8.2f}ms  {nb_ms:>8.2f}ms"
                  f"  {np_ms / nb_ms:>7.1f}x")
        else:
            print(f"{r['label']:<{width}}  {np_ms:>8.2f}ms  {'-':>10}  {'-':>8}")


if __name__ == "__main__":
    main()
