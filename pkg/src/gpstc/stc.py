"""Self-triggered controller runtime and the episodic learning loop.

At each communication instant the controller receives the state, picks an
input and an inter-communication time ``m``, and the plant holds that input
for ``m`` steps. During learning the decision is replaced, with probability
``eps``, by a random input held for a single step; every single-step round
yields a training transition for the GP.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .costs import stage_cost_batch
from .errors import GpstcError, NumericalError
from .vi import PolicyPair, comm_decision, control_decision, value_iteration

log = logging.getLogger(__name__)


@dataclass
class EpisodeTrace:
    """One closed-loop run, sampled at every plant step.

    ``states`` has one more row than ``inputs``: the final state reached.
    ``m[k]`` is the chosen inter-communication time at instants with
    ``comm[k]`` set and 0 elsewhere. ``stage`` holds the stage cost of every
    recorded state.
    """

    states: np.ndarray
    inputs: np.ndarray
    comm: np.ndarray
    m: np.ndarray
    stage: np.ndarray
    gamma: float = 0.0
    M: int = 1
    final_comm: bool = True

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def comm_count(self):
        return int(self.comm.sum())

    @property
    def comm_steps(self):
        return np.flatnonzero(self.comm)

    @property
    def mean_m(self):
        ms = self.m[self.comm]
        return float(ms.mean()) if ms.size else float("nan")

    @property
    def cumulative_cost(self):
        """Costs summed only over communication instants after the first.

        The instant at k=0 is excluded; the final state counts when it is a
        communication instant (no m is chosen there, so no communication term).
        """
        idx = self.comm_steps
        idx = idx[idx > 0]
        total = float(np.sum(self.stage[idx] + self.gamma * (self.M - self.m[idx])))
        if self.final_comm and len(self) > 0:
            total += float(self.stage[-1])
        return total

    def header(self):
        n_x, n_u = self.states.shape[1], self.inputs.shape[1]
        return (
            ["k"]
            + [f"x{i + 1}" for i in range(n_x)]
            + [f"u{i + 1}" for i in range(n_u)]
            + ["comm", "m", "stage_cost"]
        )

    def to_csv(self, path):
        """One row per plant step; the final row carries the last state with blank input."""
        n_u = self.inputs.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for k in range(len(self) + 1):
                last = k == len(self)
                u = [""] * n_u if last else [repr(float(v)) for v in self.inputs[k]]
                comm = int(self.final_comm) if last else int(self.comm[k])
                m = "" if last or not self.comm[k] else str(int(self.m[k]))
                row = [str(k), *(repr(float(v)) for v in self.states[k]), *u, str(comm), m]
                w.writerow(row + [repr(float(self.stage[k]))])

    @classmethod
    def from_csv(cls, path, gamma=0.0, M=1):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head = rows[0]
        n_x = sum(1 for h in head if h.startswith("x"))
        n_u = sum(1 for h in head if h.startswith("u"))
        body = rows[1:]
        states = np.array([[float(v) for v in r[1 : 1 + n_x]] for r in body]).reshape(-1, n_x)
        inputs = np.array(
            [[float(v) for v in r[1 + n_x : 1 + n_x + n_u]] for r in body[:-1]]
        ).reshape(-1, n_u)
        comm = np.array([r[1 + n_x + n_u] == "1" for r in body[:-1]], dtype=bool)
        m = np.array([int(r[2 + n_x + n_u]) if r[2 + n_x + n_u] else 0 for r in body[:-1]], dtype=int)
        stage = np.array([float(r[3 + n_x + n_u]) for r in body])
        final_comm = body[-1][1 + n_x + n_u] == "1"
        return cls(states, inputs, comm, m, stage, gamma, M, final_comm)


def act(pair, x):
    """Control input and inter-communication time for state ``x``."""
    return control_decision(pair, x), comm_decision(pair, x)


def _rollout(plant, pair, x_init, cost, rng, eps=0.0, n_rounds=None, horizon=None):
    """Shared loop for learning episodes (``n_rounds``) and evaluation (``horizon``)."""
    x = np.asarray(x_init, dtype=float).copy()
    states, inputs, comm, ms = [x], [], [], []
    samples = ([], [], [])
    rounds = 0
    final_comm = True
    try:
        while True:
            if n_rounds is not None and rounds >= n_rounds:
                break
            if horizon is not None and len(inputs) >= horizon:
                break
            r = rng.uniform(0.0, 1.0)
            if r < eps:
                m = 1
                u = rng.uniform(plant.input_low, plant.input_high)
            else:
                u, m = act(pair, x)
            u = np.clip(np.atleast_1d(u), plant.input_low, plant.input_high)
            steps = m if horizon is None else min(m, horizon - len(inputs))
            for s in range(steps):
                x_next = plant(x, u)
                if not np.all(np.isfinite(x_next)):
                    raise NumericalError(f"plant produced non-finite state from x={x}, u={u}")
                inputs.append(u.copy())
                comm.append(s == 0)
                ms.append(m if s == 0 else 0)
                if m == 1:
                    samples[0].append(x.copy())
                    samples[1].append(u.copy())
                    samples[2].append(x_next.copy())
                x = x_next
                states.append(x)
            final_comm = steps == m
            rounds += 1
    except GpstcError:
        raise
    except Exception as exc:
        raise NumericalError(f"plant step failed after {len(inputs)} steps: {exc}") from exc
    states = np.array(states)
    n_u = plant.input_dim
    trace = EpisodeTrace(
        states,
        np.array(inputs, dtype=float).reshape(-1, n_u),
        np.array(comm, dtype=bool),
        np.array(ms, dtype=int),
        stage_cost_batch(states, cost),
        cost.gamma,
        cost.M,
        final_comm,
    )
    n_x = plant.state_dim
    new = (
        np.array(samples[0]).reshape(-1, n_x),
        np.array(samples[1]).reshape(-1, n_u),
        np.array(samples[2]).reshape(-1, n_x),
    )
    return trace, new


@dataclass
class LearnerState:
    dataset: gp.Dataset
    pair: PolicyPair
    rng_seed: int
    model: gp.MultiGpModel = None
    episode_count: int = 0
    hyper: list = None

    def rng(self):
        return np.random.default_rng([self.rng_seed, self.episode_count])


def run_episode(plant, learner, eps, n_max, x_init, cost):
    """One exploration/exploitation episode of ``n_max`` decision rounds.

    Returns the trace and the new single-step transitions (x, u, x_next).
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    return _rollout(plant, learner.pair, x_init, cost, learner.rng(), eps=eps, n_rounds=n_max)


def simulate(plant, pair, x_init, horizon, cost):
    """Greedy rollout of a trained controller for ``horizon`` plant steps."""
    trace, _ = _rollout(
        plant, pair, x_init, cost, np.random.default_rng(0), eps=0.0, horizon=int(horizon)
    )
    return trace


def epsilon_at(cfg, episode):
    """Constant eps, or a linear decay to ``eps_final`` over the run when set."""
    if cfg.eps_final is None or cfg.n_epi <= 1:
        return cfg.eps
    frac = episode / (cfg.n_epi - 1)
    return cfg.eps + frac * (cfg.eps_final - cfg.eps)


@dataclass
class TrainResult:
    pair: PolicyPair
    traces: list
    model: gp.MultiGpModel
    dataset: gp.Dataset
    vi_history: list = field(default_factory=list)
    hyper: list = None


class TrainingError(NumericalError):
    def __init__(self, episode, phase, cause):
        self.episode, self.phase = episode, phase
        super().__init__(f"episode {episode}, {phase} phase: {cause}")


def initial_learner(plant, exp):
    grid = exp.make_grid()
    pair = PolicyPair.initial(
        grid.states, exp.M, plant.input_low, plant.input_high, exp.rbf_width
    )
    return LearnerState(gp.Dataset.empty(plant.state_dim, plant.input_dim), pair, exp.seed)


def train(plant, exp, callback=None):
    """Alternate exploration episodes with GP refits and value iteration.

    ``exp`` is an ExperimentConfig. ``callback(episode, trace, learner, history)``
    is invoked after each learning phase when given.
    """
    learner = initial_learner(plant, exp)
    grid = exp.make_grid()
    cost = exp.make_cost()
    traces, histories = [], []
    for ep in range(exp.n_epi):
        eps = epsilon_at(exp, ep)
        try:
            trace, (xs, us, ys) = run_episode(plant, learner, eps, exp.n_max, exp.x_init, cost)
        except GpstcError as exc:
            raise TrainingError(ep + 1, "exploration", exc) from exc
        traces.append(trace)
        learner.dataset = learner.dataset.extend(xs, us, ys, cap=exp.gp_cap)
        try:
            init = learner.hyper if learner.hyper is not None else exp.make_hyper(plant)
            learner.model = gp.fit(
                learner.dataset,
                init,
                optimize=exp.gp_optimize,
                optimize_noise=exp.gp_optimize_noise,
                restarts=exp.gp_restarts,
                maxiter=exp.gp_maxiter,
                seed=exp.seed + ep,
            )
            learner.hyper = [m.hyper for m in learner.model.models]
        except GpstcError as exc:
            raise TrainingError(ep + 1, "gp", exc) from exc
        try:
            learner.pair, hist = value_iteration(
                learner.model,
                grid,
                cost,
                exp.vi_n_ite,
                learner.pair,
                discount=exp.vi_discount,
                ridge=exp.vi_ridge,
                tol=exp.vi_tol,
                tie_tol=exp.vi_tie_tol,
            )
        except GpstcError as exc:
            raise TrainingError(ep + 1, "value-iteration", exc) from exc
        histories.append(hist)
        learner.episode_count += 1
        log.info(
            "episode %d: N=%d comm=%d steps=%d sweeps=%d last change=%.2e",
            ep + 1,
            len(learner.dataset),
            trace.comm_count,
            len(trace),
            len(hist.sup_changes),
            hist.sup_changes[-1] if hist.sup_changes else float("nan"),
        )
        if callback is not None:
            callback(ep + 1, trace, learner, hist)
    return TrainResult(learner.pair, traces, learner.model, learner.dataset, histories, learner.hyper)
