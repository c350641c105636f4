"""Time the compiled and numpy forms of every kernel on German-sized and larger inputs.

    python benchmarks/bench_kernels.py [--sizes 700 22000] [--repeat 5]
"""

import argparse
import logging
import timeit

import numpy as np

from faircredit import _kernels as k

log = logging.getLogger("bench")


def _inputs(n, d, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (rng.random(n) < 0.7).astype(float)
    w = np.ones(n)
    prot = (rng.random(n) < 0.15).astype(float)
    p = rng.random(n)
    return X, y, w, prot, p


def cases(n, d):
    X, y, w, prot, p = _inputs(n, d)
    theta0 = np.zeros(d + 1)
    step = 1.0 / (0.25 * np.linalg.norm(np.hstack([X, np.ones((n, 1))]), 2) ** 2 / n + 1e-3)
    gd = (X, y, w, 1e-3, step, 500, 1e-12, theta0)
    ts, ms = np.linspace(0.3, 0.7, 10), np.linspace(0.01, 0.25, 10)
    return {
        "logistic_gd": (k._logistic_gd_jit, k._logistic_gd_numpy, gd),
        "group_confusion": (k._group_confusion_jit, k._group_confusion_numpy, (y, p, prot, w)),
        "roc_scan": (k._roc_scan_jit, k._roc_scan_numpy, (p, y, prot, ts, ms)),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[700, 22000])
    parser.add_argument("--features", type=int, default=59)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if not k.HAVE_NUMBA:
        log.error("numba is not installed; nothing to compare")
        return 1
    print(f"{'kernel':<16}{'n':>7}{'numba ms':>11}{'numpy ms':>11}{'speedup':>9}")
    for n in args.sizes:
        for name, (jit, ref, a) in cases(n, args.features).items():
            jit(*a)  # compile outside the timing
            t_jit = min(timeit.repeat(lambda: jit(*a), number=1, repeat=args.repeat))
            t_np = min(timeit.repeat(lambda: ref(*a), number=1, repeat=args.repeat))
            print(f"{name:<16}{n:>7}{1e3 * t_jit:>11.2f}{1e3 * t_np:>11.2f}{t_np / t_jit:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
