"""Train one network and print the error decay against the predicted rate.

    python3 scripts/convergence.py --m 4096 --T 2000 --mode data-index
"""

import argparse
import json
import math

from hsrtrain.data import gen_separated
from hsrtrain.numerics import Rng
from hsrtrain.trainer import TrainConfig, convergence_fit, train


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--m", type=int, default=4096)
    p.add_argument("--T", type=int, default=2000)
    p.add_argument("--mode", default="dense")
    p.add_argument("--maintenance", default="requery")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--every", type=int, default=100, help="print every k-th iteration")
    args = p.parse_args()

    ds = gen_separated(Rng(args.seed, 2), args.n, args.d, args.delta)
    cfg = TrainConfig(mode=args.mode, m=args.m, T=args.T, eta=args.eta, seed=args.seed, maintenance=args.maintenance)
    _, tr = train(cfg, ds)
    e0 = tr.records[0].err2
    for r in tr.records[:: args.every]:
        print(json.dumps({"t": r.t, "ratio": r.err2 / e0, "kmax": r.kmax, "ops": r.ops_total, "disp": r.displacement}))
    rho, r2 = convergence_fit(tr)
    summary = {
        "delta": ds.delta,
        "b": tr.b,
        "eta": tr.eta,
        "lambda_hat": tr.lambda_hat,
        "rho": rho,
        "r2": r2,
        "predicted_rate": 1 - tr.eta * tr.lambda_hat / 2,
        "final_ratio": tr.records[-1].err2 / e0,
        "max_displacement_over_D": max(r.displacement for r in tr.records) / tr.displacement_bound(),
    }
    if tr.eta and tr.lambda_hat:
        # iterations the predicted rate needs for a 1e-3 reduction
        summary["iters_for_1e-3_at_predicted_rate"] = math.log(1e-3) / math.log(1 - tr.eta * tr.lambda_hat / 2)
    print(json.dumps(summary))


if __name__ == "__main__":
    main()
