"""Gaussian state beliefs."""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

SYMMETRY_TOL = 1e-12
EIG_FLOOR = -1e-9


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a predicted state distribution.

    The covariance is symmetrized on construction and small negative
    eigenvalues (down to ``EIG_FLOOR``) are clamped to zero.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (n, n):
            raise ValueError(f"belief shapes disagree: mean {mean.shape}, cov {cov.shape}")
        cov = 0.5 * (cov + cov.T)
        if n > 0 and np.any(cov != 0.0):
            w, v = np.linalg.eigh(cov)
            if w[0] < EIG_FLOOR:
                raise NumericalError(f"covariance has eigenvalue {w[0]:.3e} below floor")
            if w[0] < 0.0:
                cov = (v * np.clip(w, 0.0, None)) @ v.T
                cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.shape[0]

    @classmethod
    def point(cls, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x, np.zeros((x.size, x.size)))
