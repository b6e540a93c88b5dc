"""Boundedness of the cross inner product <f_T, h_T> over T.

    python3 scripts/cross_term.py --h 0.3
"""

import argparse
import time

import numpy as np

from fbmlab import asymlab as A


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h", type=float, default=0.3)
    ap.add_argument("--t", type=float, nargs="+", default=[10.0, 25.0, 50.0, 100.0, 200.0, 400.0])
    ap.add_argument("--order", choices=["st", "ts"], default="st")
    args = ap.parse_args()
    vals = []
    for T in args.t:
        t0 = time.perf_counter()
        v = A.cross_ip_ft_ht(A.FtKernelParams(T, 1.0, args.h), order=args.order)
        vals.append(v)
        print(f"T = {T:7.1f}  <f_T, h_T> = {v:.10f}  ({time.perf_counter() - t0:.1f} s)", flush=True)
    x, y = np.array(args.t), np.array(vals)
    slope, icpt = np.polyfit(x, y, 1)
    r = y - (slope * x + icpt)
    se = np.sqrt(r @ r / (len(x) - 2) / np.sum((x - x.mean()) ** 2))
    print(f"trend slope {slope:.3e} +- {se:.3e}")


if __name__ == "__main__":
    main()
