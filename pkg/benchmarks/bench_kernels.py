"""Throughput comparison of the compiled and pure-numpy step backends.

Run:  python benchmarks/bench_kernels.py [--paths 500] [--radius 64]
"""

import argparse
import time

import numpy as np

from lwsr import kernels
from lwsr._kernels_py import EulerStepPy
from lwsr.lattice import num_sites
from lwsr.model import SystemParams
from lwsr.noise import DeltaSequence, DiffusionFamily


def build_case(radius, n_modes, n_paths, kind, cutoff, seed=0):
    n = num_sites(radius)
    rng = np.random.default_rng(seed)
    params = SystemParams(
        alpha=1.0, beta=2.0, lam=0.1, eps=0.14,
        f=0.1 * (rng.standard_normal(n) + 1j * rng.standard_normal(n)),
        g=0.1 * rng.standard_normal(n),
        b=0.1 * (rng.standard_normal((n_modes, n)) + 1j * rng.standard_normal((n_modes, n))),
        gamma=0.1 * rng.standard_normal((n_modes, n)),
    )
    family = DiffusionFamily(kind=kind, delta=DeltaSequence.from_profile(n_modes, radius, 0.5))
    u = np.ascontiguousarray(0.1 * (rng.standard_normal((n_paths, n))
                                    + 1j * rng.standard_normal((n_paths, n))))
    v = np.ascontiguousarray(0.1 * rng.standard_normal((n_paths, n)))
    dw = 0.03 * rng.standard_normal((n_paths, n_modes))
    return params, family, u, v, dw, cutoff


def time_kernel(kern, u, v, dw, repeats):
    out_u, out_v = np.empty_like(u), np.empty_like(v)
    kern.step_block(u, v, dw, out_u, out_v)  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        kern.step_block(u, v, dw, out_u, out_v)
    return (time.perf_counter() - t0) / repeats


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=500)
    ap.add_argument("--radius", type=int, default=64)
    ap.add_argument("--modes", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()

    print(f"block: {args.paths} paths x {num_sites(args.radius)} sites x {args.modes} modes")
    header = f"{'case':<34}{'python':>12}{'compiled':>12}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for kind in ("linear_saturating", "sine_bounded", "zero"):
        for cutoff in (None, 1.0):
            params, family, u, v, dw, cut = build_case(
                args.radius, args.modes, args.paths, kind, cutoff
            )
            py = EulerStepPy(params, family, 1e-3, "zero", cut)
            t_py = time_kernel(py, u, v, dw, args.repeats)
            label = f"{kind}" + (" + cutoff" if cutoff else "")
            if kernels.HAVE_COMPILED:
                cy = kernels.EulerStepCy(params, family, 1e-3, "zero", cut)
                t_cy = time_kernel(cy, u, v, dw, args.repeats)
                sites = args.paths * num_sites(args.radius)
                print(f"{label:<34}{t_py * 1e3:>10.3f}ms{t_cy * 1e3:>10.3f}ms"
                      f"{t_py / t_cy:>8.2f}x   ({t_cy / sites * 1e9:.1f} ns/site)")
            else:
                print(f"{label:<34}{t_py * 1e3:>10.3f}ms{'n/a':>12}{'':>9}")


if __name__ == "__main__":
    main()
