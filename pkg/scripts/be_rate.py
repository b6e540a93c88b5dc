"""Berry-Esseen experiment for the least-squares and moment estimators.

Repeating the run at several grid steps separates the Kolmogorov rate from
the O(delta) bias of the Euler-type fOU scheme; the last column of the
scheme table is the exact stationary second moment of the discrete
recursion over the continuous one.

    python3 scripts/be_rate.py --h 0.3 --deltas 0.0625 0.015625 --n-reps 20000
"""

import argparse
import math
import os
import time

import numpy as np

from fbmlab import estim
from fbmlab.specfun import ModelParams, fgn_autocov, gamma_fn


def scheme_variance_ratio(h, theta, delta, lags=200000):
    """Stationary E X^2 of X_{k+1} = e^{-theta delta} X_k + dB_k over sigma^2 H Gamma(2H) theta^{-2H}."""
    a = math.exp(-theta * delta)
    k = np.arange(1, lags)
    gam = fgn_autocov(k, h) * delta ** (2 * h)
    # sum_{j,l} a^{j+l} gamma(j-l) = (gamma0 + 2 sum_k a^k gamma(k)) / (1 - a^2)
    disc = (delta ** (2 * h) + 2.0 * np.sum(a**k * gam)) / (1 - a * a)
    return disc / (h * gamma_fn(2 * h) * theta ** (-2 * h))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h", type=float, default=0.3)
    ap.add_argument("--t", type=float, nargs="+", default=[25.0, 50.0, 100.0, 200.0])
    ap.add_argument("--deltas", type=float, nargs="+", default=[1 / 16])
    ap.add_argument("--n-reps", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    for d in args.deltas:
        print(f"delta = {d}: scheme stationary moment ratio {scheme_variance_ratio(args.h, 1.0, d):.4f}")
    for d in args.deltas:
        t0 = time.perf_counter()
        s = estim.be_experiment(ModelParams(1.0, 1.0, args.h, args.t[0]), args.t, args.n_reps, d, args.seed, args.threads)
        print(f"\nH = {args.h}, delta = {d}, {args.n_reps} reps, {time.perf_counter() - t0:.0f} s")
        print(f"{'T':>7} {'dK lse':>8} {'dK mm':>8} {'var lse':>8} {'var mm':>8} {'mean lse':>9}")
        for i, T in enumerate(s.t_grid):
            print(
                f"{T:7.1f} {s.dk_lse[i]:8.4f} {s.dk_mm[i]:8.4f} {s.var_norm_lse[i]:8.4f} "
                f"{s.var_norm_mm[i]:8.4f} {s.mean_norm_lse[i]:9.4f}"
            )
        print(f"beta lse {s.beta_lse:.3f} +- {s.beta_lse_se:.3f}, beta mm {s.beta_mm:.3f} +- {s.beta_mm_se:.3f}")


if __name__ == "__main__":
    main()
