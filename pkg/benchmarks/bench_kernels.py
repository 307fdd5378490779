"""Compare the compiled and pure-Python time-stepping kernels.

    python benchmarks/bench_kernels.py [--N 256] [--steps 2000] [--repeat 3]

Prints wall time per backend for the nonlinear march (Bazykin reaction) and
the linear variation march, plus the largest difference between backends.
"""
import argparse
import math
import time

import numpy as np

from lvinv import kernels
from lvinv.spectral import Grid1D
from lvinv.taylor_model import preset


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=256)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    grid = Grid1D(math.pi, args.N)
    x = grid.nodes
    model = preset("bazykin")
    f = 0.5 + 0.3 * np.exp(-((x - 1.0) / 0.4) ** 2)
    g = 0.3 + 0.1 * (1.0 + np.cos(x))
    dt = 1.0 / args.steps
    jac = np.array([[1.0, -0.5], [0.0, -0.5]])
    src = np.zeros((args.steps + 1, args.N + 1))
    src[:] = np.cos(x)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the pure-Python backend only")
    results = {}
    print(f"N = {args.N}, steps = {args.steps}, best of {args.repeat}")
    print(f"{'backend':<8} {'scheme':<22} {'nonlinear [s]':>14} {'linear [s]':>11}")
    for name, mod in backends.items():
        for scheme, sid in kernels.SCHEMES.items():
            tn, nl = _best(lambda: mod.march_nonlinear(f, g, model.F.as_array(), model.G.as_array(),
                                                       *model.diffusion, grid.dx, dt, args.steps, sid, False),
                           args.repeat)
            tl, li = _best(lambda: mod.march_linear(f, g, jac, src, src, *model.diffusion, grid.dx, dt,
                                                    args.steps, sid), args.repeat)
            results[name, scheme] = (nl, li)
            print(f"{name:<8} {scheme:<22} {tn:>14.4f} {tl:>11.4f}")
    if "cython" in backends:
        for scheme in kernels.SCHEMES:
            a, b = results["python", scheme], results["cython", scheme]
            diff = max(np.max(np.abs(a[0][0] - b[0][0])), np.max(np.abs(a[0][1] - b[0][1])),
                       np.max(np.abs(a[1][0] - b[1][0])), np.max(np.abs(a[1][1] - b[1][1])))
            print(f"max backend difference ({scheme}): {diff:.2e}")


if __name__ == "__main__":
    main()
