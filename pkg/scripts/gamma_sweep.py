"""Communication weight study: train and roll out the pendulum once per gamma.

    python3 scripts/gamma_sweep.py --gammas 0 0.01 0.02 0.03 --seed 0
"""

import argparse
import logging

from gpstc.config import validate
from gpstc.experiments import sweep_gamma


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.0, 0.01, 0.02, 0.03])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/gamma")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = validate({"preset": "pendulum-paper", "seed": args.seed})
    for r in sweep_gamma(cfg, args.gammas, out=args.out):
        print(f"gamma={r['gamma']:g}: mean m {r['mean_m']:.3f}, final |x| {r['final_norm']:.3g}, "
              f"cost {r['cumulative_cost']:.3g}, comms {r['comm_count']}")


if __name__ == "__main__":
    main()
