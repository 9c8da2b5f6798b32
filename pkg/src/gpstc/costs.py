"""Stage and communication costs, and their closed-form Gaussian expectations."""

from dataclasses import dataclass

import numpy as np

STAGE_KINDS = ("exponential", "quadratic")
# where gamma*(M - m) enters a backup: for the hold being chosen, or for the
# next hold, read off the continuous communication policy at the successor
COMM_CHARGES = ("decision", "successor")


@dataclass(frozen=True)
class CostConfig:
    Q: np.ndarray
    gamma: float = 0.0
    M: int = 10
    stage_kind: str = "exponential"
    comm_charge: str = "successor"

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float)).copy()
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        if self.stage_kind not in STAGE_KINDS:
            raise ValueError(f"stage_kind must be one of {STAGE_KINDS}")
        if self.comm_charge not in COMM_CHARGES:
            raise ValueError(f"comm_charge must be one of {COMM_CHARGES}")
        if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T):
            raise ValueError("Q must be square and symmetric")
        if np.linalg.eigvalsh(Q)[0] <= 0:
            raise ValueError("Q must be positive definite")
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("M must be a positive integer")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "gamma", float(self.gamma))


def stage_cost(x, cfg):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    q = float(x @ cfg.Q @ x)
    if cfg.stage_kind == "exponential":
        return float(-np.expm1(-0.5 * q))
    return q


def stage_cost_batch(xs, cfg):
    xs = np.atleast_2d(xs)
    q = np.einsum("bi,ij,bj->b", xs, cfg.Q, xs)
    return -np.expm1(-0.5 * q) if cfg.stage_kind == "exponential" else q


def comm_cost(m, cfg):
    """M - m for an inter-communication time m in 1..M."""
    if int(m) != m or not 1 <= m <= cfg.M:
        raise ValueError(f"m={m} outside 1..{cfg.M}")
    return float(cfg.M - int(m))


def _exp_stage_batch(mu, S, Q):
    n = mu.shape[-1]
    A = np.eye(n) + S @ Q
    det = np.linalg.det(A)
    v = np.linalg.solve(A, mu[..., None])[..., 0]
    quad = np.einsum("...i,ij,...j->...", mu, Q, v)
    delta = det**-0.5 * np.exp(-0.5 * quad)
    return 1.0 - delta


def expected_exp_stage_cost(b, cfg):
    """E[1 - exp(-x^T Q x / 2)] for x ~ N(mean, cov)."""
    if cfg.stage_kind != "exponential":
        raise ValueError("expected_exp_stage_cost needs an exponential stage cost")
    if not np.any(b.cov):
        return stage_cost(b.mean, cfg)
    return float(_exp_stage_batch(b.mean, b.cov, cfg.Q))


def expected_quad_stage_cost(b, cfg):
    """E[x^T Q x] = tr(Q Sigma) + mu^T Q mu."""
    if cfg.stage_kind != "quadratic":
        raise ValueError("expected_quad_stage_cost needs a quadratic stage cost")
    return float(np.trace(cfg.Q @ b.cov) + b.mean @ cfg.Q @ b.mean)


def expected_stage_cost(b, cfg):
    if cfg.stage_kind == "exponential":
        return expected_exp_stage_cost(b, cfg)
    return expected_quad_stage_cost(b, cfg)


def expected_stage_cost_batch(means, covs, cfg):
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    if cfg.stage_kind == "quadratic":
        return np.einsum("ij,...ji->...", cfg.Q, covs) + np.einsum(
            "...i,ij,...j->...", means, cfg.Q, means
        )
    out = _exp_stage_batch(means, covs, cfg.Q)
    # exact pointwise value where there is no spread
    point = ~np.any(covs.reshape(*covs.shape[:-2], -1), axis=-1)
    if np.any(point):
        out = np.where(point, -np.expm1(-0.5 * np.einsum("...i,ij,...j->...", means, cfg.Q, means)), out)
    return out


def expected_rbf_batch(means, covs, centers, width):
    """E[exp(-|x - c|^2 / (2 w^2))] for each belief (rows) and each center (columns).

    Result shape (B, C) for B beliefs and C centers.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float).reshape(means.shape[0], means.shape[1], means.shape[1])
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    n = means.shape[1]
    s2 = float(width) ** 2
    A = np.eye(n)[None] + covs / s2
    det = np.linalg.det(A)
    Ainv = np.linalg.inv(A)
    Ainv = 0.5 * (Ainv + np.swapaxes(Ainv, 1, 2))
    d = means[:, None, :] - centers[None, :, :]
    quad = np.einsum("bci,bij,bcj->bc", d, Ainv, d)
    return det[:, None] ** -0.5 * np.exp(-0.5 * quad / s2)


def expected_rbf(b, center, width):
    """Gaussian expectation of one RBF feature, in (0, 1]."""
    if not width > 0:
        raise ValueError("width must be positive")
    return float(expected_rbf_batch(b.mean[None], b.cov[None], np.atleast_1d(center)[None], width)[0, 0])
