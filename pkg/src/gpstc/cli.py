"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 IO failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .errors import NumericalError, ValidationError
from .experiments import run_rollouts, run_training, sweep_gamma
from .vi import load_policy

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("gpstc")


class LoadError(Exception):
    pass


def _parse_set(items):
    raw = {}
    for item in items or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, val = (s.strip() for s in item.split("=", 1))
        raw.update(config_mod.parse_text(f"{key} = {val}", "--set"))
    return raw


def load_config(args):
    raw = {}
    if args.config is not None:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise LoadError(f"{args.config}: cannot read config ({exc.strerror or exc})") from exc
        raw = config_mod.parse_text(text, str(args.config))
    elif args.preset is None:
        raise ValidationError("either --config or --preset is required")
    if args.preset is not None:
        raw["preset"] = args.preset
    raw.update(_parse_set(getattr(args, "set", None)))
    for key in ("seed", "out", "horizon"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    return config_mod.validate(raw)


def _read_policy(path):
    try:
        return load_policy(path)
    except OSError as exc:
        raise LoadError(f"{path}: cannot read policy ({exc.strerror or exc})") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise LoadError(f"{path}: not a valid policy file ({exc})") from exc


def cmd_train(args):
    cfg = load_config(args)
    out = Path(cfg.out)
    result = run_training(cfg, out)
    last = result.traces[-1].comm_count if result.traces else None
    print(f"trained {len(result.traces)} episodes; artifacts in {out}")
    if last is not None:
        print(f"last episode communications: {last}")
    return EXIT_OK


def cmd_simulate(args):
    cfg = load_config(args)
    pair = _read_policy(args.policy)
    horizon = cfg.horizon
    _, summaries = run_rollouts(
        cfg, pair, horizon, n_random=args.n_random, radius=args.radius, out=cfg.out
    )
    for i, s in enumerate(summaries):
        tag = "x_init" if i == 0 else f"random {i}"
        print(
            f"{tag}: communications {s.comm_count}, mean m {s.mean_m:.3f}, "
            f"final |x| {s.final_norm:.4g}, cumulative cost {s.cumulative_cost:.4g}"
        )
    return EXIT_OK


def cmd_sweep_gamma(args):
    cfg = load_config(args)
    try:
        gammas = json.loads(f"[{args.gammas}]") if args.gammas.strip() else []
    except json.JSONDecodeError as exc:
        raise ValidationError(f"--gammas: not a comma-separated list of numbers ({exc})") from exc
    rows = sweep_gamma(cfg, gammas, out=cfg.out)
    print("gamma,mean_m,final_norm,cumulative_cost,comm_count")
    for r in rows:
        print(f"{r['gamma']:g},{r['mean_m']:.4f},{r['final_norm']:.4g},{r['cumulative_cost']:.4g},{r['comm_count']}")
    return EXIT_OK


def cmd_validate(args):
    cfg = load_config(args)
    sys.stdout.write(cfg.to_text())
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="gpstc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config file (key = value lines)")
        sp.add_argument("--preset", choices=sorted(config_mod.PRESETS))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    sp = sub.add_parser("train", help="run the learning loop and save its artifacts")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("simulate", help="roll out a saved controller")
    common(sp)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--n-random", type=int, default=0, help="extra random initial states")
    sp.add_argument("--radius", type=float, help="half-width of the random initial-state box")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep-gamma", help="train and evaluate once per gamma")
    common(sp)
    sp.add_argument("--gammas", required=True, help="comma-separated, e.g. 0,0.01,0.03")
    sp.add_argument("--horizon", type=int)
    sp.set_defaults(func=cmd_sweep_gamma)

    sp = sub.add_parser("validate-config", help="check a config and print its resolved form")
    common(sp)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print("invalid configuration:", file=sys.stderr)
        for prob in exc.problems:
            print(f"  {prob}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LoadError as exc:
        print(f"load failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io failure: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
