"""Fitted versus closed-form slopes of the appendix integrals.

    python3 scripts/appendix_table.py --h 0.3 0.4
"""

import argparse

from fbmlab import asymlab as A


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h", type=float, nargs="+", default=[0.3, 0.4])
    ap.add_argument("--t", type=float, nargs="+", default=[50.0, 100.0, 200.0, 400.0])
    ap.add_argument("--with-diagonal", action="store_true", help="include the diagonal term D")
    args = ap.parse_args()
    ids = [i for i in A.AppendixIntegralId if args.with_diagonal or i is not A.AppendixIntegralId.D]
    for h in args.h:
        print(f"H = {h}")
        print(f"{'id':>8} {'fitted':>14} {'closed':>14} {'rel err':>10}")
        for ident in ids:
            fit = A.fit_asymptote([(T, A.eval_appendix_integral(ident, T, h)) for T in args.t])
            closed = A.closed_form_slope(ident, h)
            print(f"{ident.value:>8} {fit.slope:14.8f} {closed:14.8f} {abs(fit.slope - closed) / abs(closed):10.2e}")
        print()


if __name__ == "__main__":
    main()
