"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each kernel runs on identical inputs through both implementations; the
table reports the best wall time of ``--repeat`` runs after one warm-up
call (which also pays numba's compile cost) and the largest absolute
difference between the two outputs (sorted spectra for the Jacobi kernels,
whose sweep orders differ).
"""
from __future__ import annotations

import argparse
import math
import time

import numpy as np

from vpcca import _accel
from vpcca._kernels import IMPLEMENTATIONS


def spd(n, rng):
    a = rng.standard_normal((n, n))
    return a @ a.T / n + np.eye(n)


def cases(quick: bool):
    rng = np.random.default_rng(0)
    n_eig = 60 if quick else 200
    m, n = (120, 40) if quick else (600, 150)
    pts = 5000 if quick else 50000
    imgs = 200 if quick else 2000
    a = spd(n_eig, rng)
    g = rng.standard_normal((n, m))
    x = rng.standard_normal((pts, 10))
    centers = rng.standard_normal((10, 10))
    images = rng.random((imgs, 28, 28))
    angles = rng.uniform(-math.pi / 4, math.pi / 4, imgs)
    return {
        "jacobi_eig": (f"{n_eig}x{n_eig}", lambda: (a.copy(), np.eye(n_eig), 1e-14 * np.linalg.norm(a), 60),
                       lambda args: np.sort(np.diag(args[0]))),
        "jacobi_svd": (f"{m}x{n}", lambda: (g.copy(), np.eye(n), 1e-15, 60, 0.0),
                       lambda args: np.sort(np.linalg.norm(args[0], axis=1))),
        "assign": (f"{pts}x10,k=10", lambda: (x, centers), None),
        "rotate": (f"{imgs}x28x28", lambda: (images, angles), None),
    }


def run(fn, make, pick, repeat):
    best, out = math.inf, None
    for i in range(repeat + 1):
        args = make()
        t0 = time.perf_counter()
        res = fn(*args)
        dt = time.perf_counter() - t0
        if i:  # first call is warm-up
            best = min(best, dt)
        out = pick(args) if pick else res
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--quick", action="store_true", help="small inputs")
    args = parser.parse_args()
    print(f"numba active: {_accel.USE_NUMBA}")
    print(f"{'kernel':<12}{'size':>18}{'numba s':>12}{'numpy s':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, (size, make, pick) in cases(args.quick).items():
        jit, ref = IMPLEMENTATIONS[name]
        tj, oj = run(jit, make, pick, args.repeat)
        tn, on = run(ref, make, pick, args.repeat)
        if isinstance(oj, tuple):
            diff = max(float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float)))) for a, b in zip(oj, on))
        else:
            diff = float(np.max(np.abs(np.asarray(oj, float) - np.asarray(on, float))))
        print(f"{name:<12}{size:>18}{tj:>12.4f}{tn:>12.4f}{tn / tj:>10.2f}{diff:>14.3g}")


if __name__ == "__main__":
    main()
