"""Spectral gap of the continuous kernel against its bounds over a grid of shifts.

    python3 scripts/ntk_gap.py --n 8 --d 4 --samples 1000000
"""

import argparse

from hsrtrain.data import gen_separated
from hsrtrain.ntk import check_spectral_gap, h_continuous_mc, kernel_concentration
from hsrtrain.numerics import Rng


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--b", type=float, nargs="+", default=[0.0, 0.5, 1.0, 2.0])
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--concentration", action="store_true", help="also sweep width at the first b")
    args = p.parse_args()

    ds = gen_separated(Rng(args.seed, 2), args.n, args.d, args.delta)
    print(f"n={ds.n} d={ds.d} delta={ds.delta:.4f}")
    print(f"{'b':>6}{'lower':>12}{'lambda':>12}{'3se':>12}{'upper':>10}  ok")
    for j, b in enumerate(args.b):
        rep = h_continuous_mc(Rng(args.seed, 10 + j), ds, b, args.samples)
        chk = check_spectral_gap(rep, ds.delta, ds.n, b)
        print(f"{b:>6.2f}{chk.lower_bound:>12.3e}{chk.lambda_min:>12.5f}{3 * chk.lambda_se:>12.2e}{chk.upper_bound:>10.4f}  {chk.ok and chk.reliable}")
    if args.concentration:
        rows, ref = kernel_concentration(Rng(args.seed, 0), ds, args.b[0], [64, 256, 1024, 4096], 20, ref_samples=args.samples)
        for r in rows:
            print(f"m={r.m:>5} median ||H_m - H|| = {r.median_distance:.4f}  frac lambda >= 0.75 lambda_hat: {r.frac_above:.2f}")


if __name__ == "__main__":
    main()
