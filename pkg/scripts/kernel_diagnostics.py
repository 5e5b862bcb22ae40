#!/usr/bin/env python3
"""Diagnostics for the Volterra kernel and the fBm samplers.

Checks the kernel-squared integral against the covariance on a lattice,
compares the two samplers' empirical laws, and reports the Hoelder
seminorm behaviour of samples under grid refinement.

Usage: python scripts/kernel_diagnostics.py [--hurst 0.7]
"""

import argparse

import numpy as np

from slowfast_ldp.fbm import (
    FbmSpec,
    RngStream,
    fbm_covariance,
    sample_fbm,
    volterra_covariance_quadrature,
)
from slowfast_ldp.fraccalc import holder_seminorm
from slowfast_ldp.grid import Grid


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--hurst", type=float, default=0.7)
    ap.add_argument("--n", type=int, default=1024)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    H = args.hurst

    print(f"kernel identity at n={args.n}, H={H}:")
    lattice = [0.25, 0.5, 0.75, 1.0]
    worst = 0.0
    for s in lattice:
        for t in lattice:
            if s > t:
                continue
            q = volterra_covariance_quadrature(s, t, H, args.n)
            err = abs(q - fbm_covariance(s, t, H))
            worst = max(worst, err)
            print(f"  (s={s:.2f}, t={t:.2f}): int K K = {q:.6f}  cov = "
                  f"{fbm_covariance(s, t, H):.6f}  err = {err:.2e}")
    print(f"  max error {worst:.2e}")

    print("\nsampler law comparison (2000 paths, terminal variance, target T^2H = 1):")
    grid = Grid(1.0, 256)
    for method in ("cholesky", "volterra"):
        spec = FbmSpec(H, 1, grid, method)
        term = np.array(
            [sample_fbm(spec, RngStream(args.seed, k)).values[-1, 0] for k in range(2000)]
        )
        print(f"  {method:>9}: var = {term.var():.4f} (stderr ~ {np.sqrt(2/2000):.3f})")

    print("\nHoelder seminorm medians under refinement (24 samples each):")
    for n in (128, 512, 2048):
        g = Grid(1.0, n)
        spec = FbmSpec(H, 1, g)
        lo = np.median(
            [holder_seminorm(sample_fbm(spec, RngStream(7, k)), H - 0.05) for k in range(24)]
        )
        hi = np.median(
            [holder_seminorm(sample_fbm(spec, RngStream(7, k)), H + 0.05) for k in range(24)]
        )
        print(f"  n={n:>5}: alpha=H-0.05 -> {lo:.3f}   alpha=H+0.05 -> {hi:.3f}")


if __name__ == "__main__":
    main()
