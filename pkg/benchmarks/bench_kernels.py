"""Compare the compiled time-march kernel with the scipy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Times one forward march with drift and one full Picard solve per grid size
and checks that both backends agree to round-off.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from mfg_inverse import _kernels_py
from mfg_inverse.grid import make_grid
from mfg_inverse.parabolic import SolverOptions, operator_bands

try:
    from mfg_inverse import _kernels
except ImportError:  # pragma: no cover
    _kernels = None

GRIDS = [(101, 200), (201, 400), (401, 800)]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def march_case(n_x, n_t):
    grid = make_grid(n_x, n_t, 1.0, 1.0)
    rng = np.random.default_rng(0)
    drift = rng.standard_normal(grid.shape)
    lo, di, up = operator_bands(drift, grid, SolverOptions())
    init = 1.0 + np.cos(np.pi * grid.x)
    src = np.zeros(grid.shape)
    return lambda m: m.theta_march(init, lo, di, up, src, grid.dt, 0.5, False)


SOLVE_SNIPPET = """
import time, numpy as np
from mfg_inverse.grid import make_grid, SpatialField
from mfg_inverse.costs import KineticHamiltonian, LocalAnalyticCost
from mfg_inverse.mfg import MfgModel, solve_mfg
from mfg_inverse.kernels import BACKEND
g = make_grid({n_x}, {n_t}, 1.0, 1.0)
model = MfgModel(KineticHamiltonian(SpatialField.constant(g, 1.0)),
                 LocalAnalyticCost([SpatialField.from_function(g, lambda x: np.cos(2*np.pi*x))]))
p = model.problem(SpatialField.from_function(g, lambda x: 0.1*(1+np.cos(2*np.pi*x))),
                  SpatialField.constant(g, 0.0))
best = 1e9
for _ in range({repeat}):
    t0 = time.perf_counter(); sol = solve_mfg(p); best = min(best, time.perf_counter() - t0)
print(BACKEND, best, sol.iterations)
"""


def solve_time(n_x, n_t, repeat, pure):
    env = dict(os.environ, MFG_INVERSE_PURE_PYTHON="1" if pure else "0")
    code = SOLVE_SNIPPET.format(n_x=n_x, n_t=n_t, repeat=repeat)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True).stdout.split()
    return out[0], float(out[1]), int(out[2])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
        return 1
    print(f"{'grid':>10} {'march cy [ms]':>14} {'march py [ms]':>14} {'speedup':>8} "
          f"{'max diff':>10} {'solve cy [s]':>13} {'solve py [s]':>13}")
    for n_x, n_t in GRIDS:
        case = march_case(n_x, n_t)
        t_cy, y_cy = best_of(lambda: case(_kernels), args.repeat)
        t_py, y_py = best_of(lambda: case(_kernels_py), args.repeat)
        diff = float(np.abs(y_cy - y_py).max())
        _, s_cy, _ = solve_time(n_x, n_t, args.repeat, pure=False)
        _, s_py, _ = solve_time(n_x, n_t, args.repeat, pure=True)
        print(f"{n_x:>4}x{n_t:<5} {1e3 * t_cy:14.2f} {1e3 * t_py:14.2f} {t_py / t_cy:8.1f} "
              f"{diff:10.1e} {s_cy:13.3f} {s_py:13.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
