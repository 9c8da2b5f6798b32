"""Run-level plumbing shared by the CLI and the scripts: training runs,
controller rollouts, gamma sweeps and the files they leave on disk."""

import csv
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ValidationError
from .stc import simulate, train
from .vi import save_policy

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("gamma", "mean_m", "final_norm", "cumulative_cost", "comm_count")


@dataclass
class RolloutSummary:
    comm_count: int
    mean_m: float
    final_norm: float
    cumulative_cost: float
    tail_inf_norm: float

    @classmethod
    def of(cls, trace, tail_from=0.8):
        k0 = int(np.floor(tail_from * len(trace)))
        return cls(
            trace.comm_count,
            trace.mean_m,
            float(np.linalg.norm(trace.states[-1])),
            trace.cumulative_cost,
            float(np.abs(trace.states[k0:]).max()),
        )

    def as_dict(self):
        return dict(self.__dict__)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)


def run_training(cfg, out=None):
    """Train with ``cfg``; when ``out`` is given write traces, policy, dataset and manifest there."""
    plant = cfg.make_plant()
    result = train(plant, cfg)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for i, tr in enumerate(result.traces, 1):
            tr.to_csv(out / f"episode_{i:02d}.csv")
        save_policy(result.pair, out / "policy.json")
        result.dataset.to_csv(out / "dataset.csv")
        _write_json(out / "manifest.json", manifest(cfg, result))
    return result


def manifest(cfg, result):
    hyper = None
    if result.hyper is not None:
        hyper = [
            {
                "signal_amplitude": h.signal_amplitude,
                "lengthscales": h.lengthscales.tolist(),
                "noise_variance": h.noise_variance,
            }
            for h in result.hyper
        ]
    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "episodes": [
            {
                "episode": i + 1,
                "steps": len(tr),
                "comm_count": tr.comm_count,
                "vi_sweeps": h.sup_changes,
            }
            for i, (tr, h) in enumerate(zip(result.traces, result.vi_history))
        ],
        "dataset_size": len(result.dataset),
        "hyperparameters": hyper,
    }


def initial_states(cfg, n_random, radius, seed):
    """``x_init`` followed by ``n_random`` states drawn uniformly in an inf-norm ball around it."""
    x0 = np.asarray(cfg.x_init, dtype=float)
    rng = np.random.default_rng(seed)
    extra = x0 + rng.uniform(-radius, radius, size=(n_random, x0.size))
    return np.vstack([x0[None], extra])


def check_policy(pair, cfg):
    plant = cfg.make_plant()
    problems = []
    if pair.n_x != plant.state_dim:
        problems.append(f"policy: state dimension {pair.n_x}, plant expects {plant.state_dim}")
    if pair.n_u != plant.input_dim:
        problems.append(f"policy: input dimension {pair.n_u}, plant expects {plant.input_dim}")
    if pair.M != cfg.M:
        problems.append(f"policy: M={pair.M}, config has M={cfg.M}")
    if problems:
        raise ValidationError(problems)


def run_rollouts(cfg, pair, horizon, n_random=0, radius=None, out=None):
    """Greedy rollouts from x_init (and optional random neighbours); returns traces and summaries."""
    check_policy(pair, cfg)
    plant = cfg.make_plant()
    cost = cfg.make_cost()
    radius = cfg.init_radius if radius is None else radius
    starts = initial_states(cfg, n_random, radius, cfg.seed)
    traces, summaries = [], []
    for x0 in starts:
        tr = simulate(plant, pair, x0, horizon, cost)
        traces.append(tr)
        summaries.append(RolloutSummary.of(tr))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for i, tr in enumerate(traces):
            tr.to_csv(out / ("rollout.csv" if i == 0 else f"rollout_{i:03d}.csv"))
        _write_json(
            out / "summary.json",
            {"starts": starts.tolist(), "summaries": [s.as_dict() for s in summaries]},
        )
    return traces, summaries


def sweep_gamma(cfg, gammas, horizon=None, out=None):
    """Train and roll out once per gamma with the shared seed; returns the table rows."""
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ValidationError("gamma list is empty")
    if any(g < 0 for g in gammas):
        raise ValidationError("gamma values must be nonnegative")
    horizon = cfg.horizon if horizon is None else horizon
    rows = []
    for g in gammas:
        run_cfg = cfg.replace(gamma=g)
        sub = None if out is None else Path(out) / f"gamma_{g:g}"
        result = run_training(run_cfg, sub)
        (trace,), (s,) = run_rollouts(run_cfg, result.pair, horizon, out=sub)
        rows.append(
            {
                "gamma": g,
                "mean_m": s.mean_m,
                "final_norm": s.final_norm,
                "cumulative_cost": s.cumulative_cost,
                "comm_count": s.comm_count,
            }
        )
        log.info("gamma=%g: mean m %.3f, final |x| %.3g", g, s.mean_m, s.final_norm)
    if out is not None:
        write_sweep_table(rows, Path(out) / "sweep.csv")
    return rows


def write_sweep_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] if k == "comm_count" else repr(float(r[k])) for k in SWEEP_COLUMNS})


def read_sweep_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {k: int(r[k]) if k == "comm_count" else float(r[k]) for k in SWEEP_COLUMNS} for r in rows
    ]


__all__ = [
    "RolloutSummary",
    "run_training",
    "run_rollouts",
    "sweep_gamma",
    "write_sweep_table",
    "read_sweep_table",
]
