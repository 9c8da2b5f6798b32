"""Roll a trained pendulum controller out from random initial states around x_init.

    python3 scripts/robustness.py --policy runs/pendulum/M10_seed0/policy.json --n 20 --radius 0.3
"""

import argparse

import numpy as np

from gpstc.config import validate
from gpstc.experiments import run_rollouts
from gpstc.vi import load_policy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--policy", required=True)
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--radius", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--horizon", type=int, default=100)
    ap.add_argument("--out", default="runs/robustness")
    args = ap.parse_args()
    pair = load_policy(args.policy)
    cfg = validate({"preset": "pendulum-paper", "seed": args.seed, "M": pair.M})
    _, summaries = run_rollouts(cfg, pair, args.horizon, n_random=args.n, radius=args.radius, out=args.out)
    tails = np.array([s.tail_inf_norm for s in summaries])
    comms = np.array([s.comm_count for s in summaries])
    print(f"{len(summaries)} rollouts: tail |x|inf median {np.median(tails):.3f}, max {tails.max():.3f}; "
          f"communications median {np.median(comms):.0f}")


if __name__ == "__main__":
    main()
