"""Per-iteration inner-product cost against width for each training mode.

    python3 scripts/bench_cost.py --m-grid 1024 4096 16384 65536 --iters 10
"""

import argparse

from hsrtrain.cli import bench
from hsrtrain.data import gen_separated
from hsrtrain.numerics import Rng


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--m-grid", type=int, nargs="+", default=[1024, 4096, 16384, 65536])
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    ds = gen_separated(Rng(args.seed, 2), args.n, args.d, 0.5)
    print(f"{'mode':<24}{'m':>8}{'ops/iter':>14}{'ops/(nm)':>10}{'ms/iter':>10}")
    for label, modes, maint in [
        ("dense", ["dense"], "requery"),
        ("weight-index", ["weight-index"], "requery"),
        ("data-index", ["data-index"], "requery"),
        ("data-index/certified", ["data-index"], "certified"),
    ]:
        rows, exps = bench(ds, args.m_grid, modes, args.iters, args.seed, maintenance=maint)
        for r in rows:
            print(f"{label:<24}{r['m']:>8}{r['ops_per_iter']:>14.0f}{r['ratio']:>10.3f}{r['ms_per_iter']:>10.1f}")
        print(f"{label:<24}{'exponent':>8}{exps[modes[0]]:>14.3f}")


if __name__ == "__main__":
    main()
