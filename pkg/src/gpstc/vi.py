"""Approximate value iteration for joint control/communication policies.

Backups are evaluated on a finite grid of representative states and inputs;
the optimal cost, the control policy and the (continuous) communication
policy are each represented by a Gaussian RBF network centred on the state
grid. Within one call of :func:`value_iteration` the model is fixed, so the
propagated beliefs and their feature expectations are computed once and each
sweep reduces to matrix-vector products.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .costs import expected_rbf_batch, expected_stage_cost, expected_stage_cost_batch
from .errors import IllConditionedError, NumericalError, ValidationError
from .propagate import propagate_batch, propagate_m_steps

log = logging.getLogger(__name__)

POLICY_FORMAT = "gpstc-policy"
POLICY_VERSION = 1

DEFAULT_DISCOUNT = 0.98
# ridge used when refitting the approximators during value iteration; near
# interpolation (1e-8) gives weights of 1e5 and more on the pendulum grid
VI_RIDGE = 1e-2
# backups within this of the minimum count as ties (resolved toward larger m)
VI_TIE_TOL = 5e-4
RIDGE_START = 1e-8
MAX_RIDGE = 1e-4
DEFAULT_TOL = 1e-4


def box_grid(low, high, spacing):
    """Regular grid over a box, one row per point; always contains the origin when it lies in the box."""
    low = np.atleast_1d(np.asarray(low, dtype=float))
    high = np.atleast_1d(np.asarray(high, dtype=float))
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), low.shape)
    if np.any(spacing <= 0):
        raise ValueError("grid spacing must be positive")
    axes = []
    for lo, hi, s in zip(low, high, spacing):
        # anchor at 0 so the origin is a grid point
        k_lo = int(np.ceil(lo / s - 1e-9))
        k_hi = int(np.floor(hi / s + 1e-9))
        axes.append(np.round(np.arange(k_lo, k_hi + 1) * s, 12))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


@dataclass(frozen=True)
class RepresentativeGrid:
    states: np.ndarray
    inputs: np.ndarray
    M: int

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.asarray(self.inputs, dtype=float)
        inputs = inputs.reshape(len(inputs), -1)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        if states.shape[0] < 1 or inputs.shape[0] < 1:
            raise ValueError("grid needs at least one state and one input")
        if not np.any(np.all(np.abs(states) < 1e-12, axis=1)):
            raise ValueError("state grid must contain the origin")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("M must be a positive integer")


@dataclass(frozen=True)
class RbfApproximator:
    centers: np.ndarray
    weights: np.ndarray
    width: float

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != c.shape[0]:
            raise ValueError(f"{w.size} weights for {c.shape[0]} centers")
        if not self.width > 0:
            raise ValueError("RBF width must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "width", float(self.width))

    @classmethod
    def zeros(cls, centers, width):
        centers = np.atleast_2d(centers)
        return cls(centers, np.zeros(centers.shape[0]), width)

    def features(self, xs):
        xs = np.atleast_2d(xs)
        d2 = ((xs[:, None, :] - self.centers[None]) ** 2).sum(-1)
        return np.exp(-0.5 * d2 / self.width**2)

    def __call__(self, xs):
        return self.features(xs) @ self.weights


def rbf_eval(approx, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != approx.centers.shape[1]:
        raise ValueError(f"state has dimension {x.size}, centers have {approx.centers.shape[1]}")
    return float(approx(x[None])[0])


@dataclass(frozen=True)
class PolicyPair:
    j_star: RbfApproximator
    pi_inp: tuple
    pi_com_raw: RbfApproximator
    M: int
    input_low: np.ndarray
    input_high: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi_inp", tuple(self.pi_inp))
        object.__setattr__(self, "input_low", np.atleast_1d(np.asarray(self.input_low, float)))
        object.__setattr__(self, "input_high", np.atleast_1d(np.asarray(self.input_high, float)))
        c = self.j_star.centers
        for a in (*self.pi_inp, self.pi_com_raw):
            if a.centers.shape != c.shape or not np.array_equal(a.centers, c):
                raise ValueError("all approximators must share identical centers")
        if len(self.pi_inp) != self.input_low.size:
            raise ValueError("one control approximator per input dimension is required")

    @property
    def centers(self):
        return self.j_star.centers

    @property
    def n_x(self):
        return self.centers.shape[1]

    @property
    def n_u(self):
        return len(self.pi_inp)

    @classmethod
    def initial(cls, centers, M, input_low, input_high, width):
        """Zero weights everywhere: zero input and a communication every step."""
        z = RbfApproximator.zeros(centers, width)
        n_u = np.atleast_1d(input_low).size
        return cls(z, (z,) * n_u, z, int(M), input_low, input_high)


def round_comm(raw, M):
    """Nearest positive integer (halves round up), clamped into 1..M."""
    return np.clip(np.floor(np.asarray(raw, dtype=float) + 0.5), 1, M).astype(int)


def comm_decision(pair, x):
    return int(round_comm(rbf_eval(pair.pi_com_raw, x), pair.M))


def control_decision(pair, x):
    raw = np.array([rbf_eval(a, x) for a in pair.pi_inp])
    return np.clip(raw, pair.input_low, pair.input_high)


def bellman_backup(x, u, m, model, pair, cfg, discount=DEFAULT_DISCOUNT):
    """Expected cost of holding ``u`` for ``m`` steps from ``x`` and continuing with ``pair``."""
    if int(m) != m or not 1 <= m <= cfg.M:
        raise ValueError(f"m={m} outside 1..{cfg.M}")
    belief = propagate_m_steps(model, x, u, int(m))[-1]
    stage = expected_stage_cost(belief, cfg)
    if cfg.comm_charge == "decision":
        e_com = float(m)
    else:
        e_com = _expected_rbf_sum(belief, pair.pi_com_raw)
    e_j = _expected_rbf_sum(belief, pair.j_star)
    return stage + cfg.gamma * (cfg.M - e_com) + discount * e_j


def _expected_rbf_sum(belief, approx):
    if not np.any(approx.weights):
        return 0.0
    phi = expected_rbf_batch(belief.mean[None], belief.cov[None], approx.centers, approx.width)
    return float(phi[0] @ approx.weights)


def fit_rbf_weights(centers, targets, width, ridge=RIDGE_START):
    """Solve (Phi + ridge I) w = targets, escalating ridge x10 (up to 1e-4 or ``ridge``) on failure."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    targets = np.asarray(targets, dtype=float).ravel()
    if targets.size != centers.shape[0]:
        raise ValueError(f"{targets.size} targets for {centers.shape[0]} centers")
    if not np.all(np.isfinite(targets)):
        raise NumericalError("non-finite RBF fit targets")
    Phi = RbfApproximator.zeros(centers, width).features(centers)
    r = float(ridge)
    r_max = max(MAX_RIDGE, r)
    while True:
        A = Phi + r * np.eye(len(targets))
        try:
            if r == 0.0:
                w = np.linalg.solve(A, targets)
            else:
                w = cho_solve(cho_factor(A, lower=True), targets)
            if np.all(np.isfinite(w)):
                return w
        except np.linalg.LinAlgError:
            pass
        r = max(r * 10.0, RIDGE_START)
        if r > r_max * (1 + 1e-9):
            raise IllConditionedError("RBF interpolation system singular after ridge escalation")


@dataclass
class BackupTable:
    """Everything a sweep needs that does not depend on the approximator weights.

    Arrays are indexed [m-1, state, input].
    """

    stage: np.ndarray
    phi_j: np.ndarray
    phi_c: np.ndarray


def precompute_backups(model, grid, cfg, width_j, width_c):
    X, U, M = grid.states, grid.inputs, grid.M
    nX, nU = X.shape[0], U.shape[0]
    x0 = np.repeat(X, nU, axis=0)
    uu = np.tile(U, (nX, 1))
    try:
        means, covs = propagate_batch(model, x0, uu, M)
    except NumericalError:
        _locate_failure(model, X, U, M)
        raise
    stage = expected_stage_cost_batch(means, covs, cfg)
    flat_m = means.reshape(M * nX * nU, -1)
    flat_S = covs.reshape(M * nX * nU, means.shape[-1], means.shape[-1])
    phi_j = expected_rbf_batch(flat_m, flat_S, X, width_j)
    phi_c = phi_j if width_c == width_j else expected_rbf_batch(flat_m, flat_S, X, width_c)
    shape = (M, nX, nU)
    table = BackupTable(
        stage.reshape(shape), phi_j.reshape(*shape, nX), phi_c.reshape(*shape, nX)
    )
    bad = ~np.isfinite(table.stage) | ~np.all(np.isfinite(table.phi_j), axis=-1)
    if bad.any():
        m, i, j = np.argwhere(bad)[0]
        raise NumericalError(f"non-finite backup at x={X[i]}, u={U[j]}, m={m + 1}")
    return table


def _locate_failure(model, X, U, M):
    for x in X:
        for u in U:
            try:
                propagate_m_steps(model, x, u, M)
            except NumericalError as exc:
                raise NumericalError(f"propagation failed at x={x}, u={u} (m<={M}): {exc}") from exc


def backup_values(table, pair, cfg, discount):
    """D(x, u, m) for the whole grid, shape (M, N_X, N_U)."""
    e_j = table.phi_j @ pair.j_star.weights
    if cfg.comm_charge == "decision":
        e_c = np.arange(1, cfg.M + 1, dtype=float)[:, None, None]
    else:
        e_c = table.phi_c @ pair.pi_com_raw.weights
    return table.stage + cfg.gamma * (cfg.M - e_c) + discount * e_j


def greedy_argmin(D, inputs, tie_tol=0.0):
    """Per-state choice of (u, m) from D (M, N_X, N_U).

    Exact ties are broken toward larger m, then smaller |u|, then scan order.
    With ``tie_tol`` > 0, the largest m whose best backup lies within
    ``tie_tol`` of the overall minimum is chosen; the input is still the
    exact minimizer for that m.

    Returns (chosen D, input index, m) arrays over states.
    """
    M, nX, nU = D.shape
    u_norm = np.linalg.norm(inputs, axis=1)
    u_order = np.argsort(u_norm, kind="stable")
    # best input per (m, state), ties toward small |u| then scan order
    Du = D[:, :, u_order]
    best_pos = np.argmin(Du, axis=2)
    best_u = u_order[best_pos]
    best_d = np.take_along_axis(Du, best_pos[..., None], axis=2)[..., 0]  # (M, nX)
    floor = best_d.min(axis=0)
    ok = best_d <= floor[None, :] + tie_tol
    # largest admissible m
    m_idx = M - 1 - np.argmax(ok[::-1], axis=0)
    cols = np.arange(nX)
    return best_d[m_idx, cols], best_u[m_idx, cols], m_idx + 1


@dataclass
class SweepHistory:
    sup_changes: list = field(default_factory=list)
    d_star: np.ndarray = None
    u_star: np.ndarray = None
    m_star: np.ndarray = None


def value_iteration(
    model,
    grid,
    cfg,
    n_ite,
    pair_init,
    discount=DEFAULT_DISCOUNT,
    ridge=VI_RIDGE,
    tol=DEFAULT_TOL,
    tie_tol=VI_TIE_TOL,
    table=None,
):
    """Run up to ``n_ite`` Jacobi sweeps; stop early once the sup-norm change of D* drops below ``tol``.

    Returns the final PolicyPair and a SweepHistory.
    """
    if grid.M != cfg.M:
        raise ValidationError(f"grid M={grid.M} differs from cost M={cfg.M}")
    if pair_init.M != cfg.M:
        raise ValidationError(f"policy M={pair_init.M} differs from cost M={cfg.M}")
    if not 0 < discount <= 1:
        raise ValidationError("discount must lie in (0, 1]")
    history = SweepHistory()
    if n_ite <= 0:
        return pair_init, history
    if not np.array_equal(pair_init.centers, grid.states):
        raise ValidationError("policy centers must be the grid states")
    if table is None:
        table = precompute_backups(
            model, grid, cfg, pair_init.j_star.width, pair_init.pi_com_raw.width
        )
    pair = pair_init
    X = grid.states
    prev = pair.j_star(X)
    for sweep in range(n_ite):
        D = backup_values(table, pair, cfg, discount)
        d_star, u_idx, m_star = greedy_argmin(D, grid.inputs, tie_tol)
        u_star = grid.inputs[u_idx]
        change = float(np.max(np.abs(d_star - prev)))
        history.sup_changes.append(change)
        prev = d_star
        j = RbfApproximator(X, fit_rbf_weights(X, d_star, pair.j_star.width, ridge), pair.j_star.width)
        inp = tuple(
            RbfApproximator(X, fit_rbf_weights(X, u_star[:, k], a.width, ridge), a.width)
            for k, a in enumerate(pair.pi_inp)
        )
        com = RbfApproximator(
            X, fit_rbf_weights(X, m_star.astype(float), pair.pi_com_raw.width, ridge), pair.pi_com_raw.width
        )
        pair = PolicyPair(j, inp, com, pair.M, pair.input_low, pair.input_high)
        log.debug("sweep %d: sup change %.3e", sweep + 1, change)
        if change < tol:
            break
    history.d_star, history.u_star, history.m_star = d_star, u_star, m_star
    return pair, history


def _approx_to_dict(a):
    return {"width": a.width, "weights": a.weights.tolist()}


def policy_to_dict(pair):
    return {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "M": pair.M,
        "input_low": pair.input_low.tolist(),
        "input_high": pair.input_high.tolist(),
        "centers": pair.centers.tolist(),
        "j_star": _approx_to_dict(pair.j_star),
        "pi_inp": [_approx_to_dict(a) for a in pair.pi_inp],
        "pi_com_raw": _approx_to_dict(pair.pi_com_raw),
    }


def policy_from_dict(d):
    if d.get("format") != POLICY_FORMAT:
        raise ValueError(f"not a {POLICY_FORMAT} file")
    if d.get("version") != POLICY_VERSION:
        raise ValueError(f"unsupported policy version {d.get('version')}")
    c = np.asarray(d["centers"], dtype=float)

    def mk(a):
        return RbfApproximator(c, a["weights"], a["width"])

    return PolicyPair(
        mk(d["j_star"]),
        tuple(mk(a) for a in d["pi_inp"]),
        mk(d["pi_com_raw"]),
        int(d["M"]),
        d["input_low"],
        d["input_high"],
    )


def save_policy(pair, path):
    with open(path, "w") as fh:
        json.dump(policy_to_dict(pair), fh, indent=1)


def load_policy(path):
    with open(path) as fh:
        return policy_from_dict(json.load(fh))


__all__ = [
    "RepresentativeGrid",
    "RbfApproximator",
    "PolicyPair",
    "box_grid",
    "rbf_eval",
    "comm_decision",
    "control_decision",
    "bellman_backup",
    "fit_rbf_weights",
    "value_iteration",
]
