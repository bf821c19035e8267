"""Compare the compiled and numpy convolution backends on images and volumes.

Usage: python benchmarks/bench_backends.py [--repeat N] [--threads N]
Reports the best wall time per backend and checks that outputs agree bit for bit.
"""
import argparse
import time

import numpy as np

from rfcascade import CovMat2, SpatialParams, STParams, engine

CASES = [
    ("image 256^2, sigma 3", (256, 256), SpatialParams(9.0, CovMat2.identity()), "spatial"),
    ("image 256^2, anisotropic", (256, 256), SpatialParams(4.0, CovMat2(4.0, 1.5, 1.5)), "spatial"),
    ("volume 64^3, st", (64, 64, 64), STParams(4.0, CovMat2(1.0, 0.3, 0.8), 4.0, (0.2, -0.1)), "st"),
    ("volume 64^3, timecausal", (64, 64, 64), STParams(4.0, CovMat2.identity(), 4.0, (0.1, 0.0), 2.0),
     "timecausal"),
]


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    backends = sorted(engine._BACKENDS)
    rng = np.random.default_rng(0)
    print(f"{'case':28s} {'taps':>7s} " + " ".join(f"{b:>10s}" for b in backends) + "  speedup  identical")
    for name, shape, p, fam in CASES:
        f = rng.standard_normal(shape)
        k = engine.sample(p, fam, 1.0)
        times, outs = [], []
        for b in backends:
            engine.use_backend(b)
            t, out = best_time(lambda: engine.convolve(f, k, threads=args.threads), args.repeat)
            times.append(t)
            outs.append(out)
        same = all(np.array_equal(outs[0], o) for o in outs[1:])
        speed = times[backends.index("numpy")] / min(times) if len(times) > 1 else 1.0
        print(f"{name:28s} {k.nnz:7d} " + " ".join(f"{t:9.3f}s" for t in times)
              + f"  {speed:6.1f}x  {same}")


if __name__ == "__main__":
    main()
