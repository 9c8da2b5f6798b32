"""Squared-exponential Gaussian-process regression, one GP per state dimension.

Training inputs are stacked state-input pairs ``[x; u]`` and the targets are
the successor states. Hyperparameters are the signal amplitude ``alpha``, one
lengthscale per input dimension (so ``Lambda = diag(lengthscale**2)``) and the
observation noise variance.
"""

import csv
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .belief import GaussianBelief
from .errors import IllConditionedError, NotFittedError

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
DEFAULT_NOISE = 1e-4
DEFAULT_CAP = 400

# log-space box for evidence maximization
_LOG_ALPHA_BOUNDS = (np.log(1e-3), np.log(1e3))
_LOG_LENGTH_BOUNDS = (np.log(1e-2), np.log(1e3))
_LOG_NOISE_BOUNDS = (np.log(1e-12), np.log(1e1))


@dataclass(frozen=True)
class Hyperparams:
    signal_amplitude: float
    lengthscales: np.ndarray
    noise_variance: float = DEFAULT_NOISE

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_amplitude", float(self.signal_amplitude))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not self.signal_amplitude > 0:
            raise ValueError("signal_amplitude must be positive")
        if ls.ndim != 1 or ls.size == 0 or not np.all(ls > 0):
            raise ValueError("lengthscales must be a non-empty vector of positive reals")
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")

    @property
    def dim(self):
        return self.lengthscales.size

    @property
    def Lambda(self):
        return np.diag(self.lengthscales**2)

    def to_log(self, with_noise=False):
        theta = [np.log(self.signal_amplitude), *np.log(self.lengthscales)]
        if with_noise:
            theta.append(np.log(self.noise_variance))
        return np.array(theta)

    def from_log(self, theta):
        theta = np.asarray(theta, dtype=float)
        d = self.dim
        noise = np.exp(theta[d + 1]) if theta.size > d + 1 else self.noise_variance
        return Hyperparams(np.exp(theta[0]), np.exp(theta[1 : d + 1]), noise)


@dataclass
class Dataset:
    """Training transitions: ``inputs[n] = [x_n, u_n]`` and ``outputs[n] = x_{n+1}``.

    Stored row-wise (one sample per row).
    """

    inputs: np.ndarray
    outputs: np.ndarray
    n_u: int = field(default=None)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError(
                f"{self.inputs.shape[0]} inputs but {self.outputs.shape[0]} outputs"
            )
        n_u = self.inputs.shape[1] - self.outputs.shape[1] if self.n_u is None else self.n_u
        if n_u < 0 or self.inputs.shape[1] != self.outputs.shape[1] + n_u:
            raise ValueError("input width must equal n_x + n_u")
        self.n_u = int(n_u)

    @classmethod
    def empty(cls, n_x, n_u):
        return cls(np.zeros((0, n_x + n_u)), np.zeros((0, n_x)), n_u)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_x(self):
        return self.outputs.shape[1]

    def extend(self, x, u, y, cap=None):
        """Return a new dataset with samples appended; the oldest are dropped beyond ``cap``."""
        x, u, y = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (x, u, y))
        if x.shape[0] == 0:
            inputs, outputs = self.inputs, self.outputs
        else:
            inputs = np.vstack([self.inputs, np.hstack([x, u])])
            outputs = np.vstack([self.outputs, y])
        if cap is not None and inputs.shape[0] > cap:
            inputs, outputs = inputs[-cap:], outputs[-cap:]
        return Dataset(inputs, outputs, self.n_u)

    def header(self):
        return (
            [f"x{i + 1}" for i in range(self.n_x)]
            + [f"u{i + 1}" for i in range(self.n_u)]
            + [f"y{i + 1}" for i in range(self.n_x)]
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for xin, yout in zip(self.inputs, self.outputs):
                w.writerow([repr(float(v)) for v in (*xin, *yout)])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: missing header row")
        head = rows[0]
        n_x = sum(1 for h in head if h.startswith("x"))
        n_u = sum(1 for h in head if h.startswith("u"))
        n_y = sum(1 for h in head if h.startswith("y"))
        if n_y != n_x or n_x + n_u + n_y != len(head):
            raise ValueError(f"{path}: unrecognised header {head}")
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        data = data.reshape(-1, len(head))
        return cls(data[:, : n_x + n_u], data[:, n_x + n_u :], n_u)


def _check_dims(a, h):
    if a.shape[-1] != h.dim:
        raise ValueError(f"input has dimension {a.shape[-1]}, hyperparameters expect {h.dim}")


def se_kernel(a, b, h):
    """alpha^2 exp(-0.5 (a-b)^T Lambda^{-1} (a-b))."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    _check_dims(a, h)
    _check_dims(b, h)
    d = (a - b) / h.lengthscales
    return float(h.signal_amplitude**2 * np.exp(-0.5 * d @ d))


def kernel_matrix(A, B, h):
    """Cross-covariance matrix between the rows of A and the rows of B."""
    A = np.atleast_2d(A) / h.lengthscales
    B = np.atleast_2d(B) / h.lengthscales
    _check_dims(A, h)
    _check_dims(B, h)
    sq = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
    return h.signal_amplitude**2 * np.exp(-0.5 * np.clip(sq, 0.0, None))


def _jittered_cholesky(K):
    """Cholesky of K, adding diagonal jitter 1e-10 -> 1e-4 only if needed."""
    n = K.shape[0]
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise IllConditionedError(
        f"Gram matrix not positive definite after jitter {JITTER_MAX:g} (N={n})"
    )


@dataclass(frozen=True)
class GpModel:
    """A fitted single-output GP. Immutable once built."""

    hyper: Hyperparams
    inputs: np.ndarray
    targets: np.ndarray
    gram_chol: np.ndarray
    beta: np.ndarray
    jitter: float = 0.0

    @classmethod
    def build(cls, inputs, targets, hyper):
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        targets = np.asarray(targets, dtype=float).ravel()
        if inputs.shape[0] < 1:
            raise ValueError("need at least one training point")
        _check_dims(inputs, hyper)
        K = kernel_matrix(inputs, inputs, hyper) + hyper.noise_variance * np.eye(len(targets))
        L, jitter = _jittered_cholesky(K)
        beta = cho_solve((L, True), targets)
        for arr in (inputs, targets, L, beta):
            arr.setflags(write=False)
        return cls(hyper, inputs, targets, L, beta, jitter)

    @property
    def n(self):
        return self.targets.size

    @cached_property
    def gram_inv(self):
        """(K + sigma^2 I)^{-1}, from the Cholesky factor."""
        Linv = solve_triangular(self.gram_chol, np.eye(self.n), lower=True)
        out = Linv.T @ Linv
        out.setflags(write=False)
        return out

    def gram(self):
        n = self.n
        return (
            kernel_matrix(self.inputs, self.inputs, self.hyper)
            + (self.hyper.noise_variance + self.jitter) * np.eye(n)
        )

    def predict(self, xt):
        """Posterior mean and latent variance at the rows of ``xt``."""
        xt = np.atleast_2d(np.asarray(xt, dtype=float))
        ks = kernel_matrix(xt, self.inputs, self.hyper)
        mean = ks @ self.beta
        v = solve_triangular(self.gram_chol, ks.T, lower=True)
        var = self.hyper.signal_amplitude**2 - (v**2).sum(0)
        return mean, np.clip(var, 0.0, None)


def log_marginal_likelihood(model):
    """-0.5 y^T beta - sum(log diag L) - N/2 log(2 pi)."""
    if not isinstance(model, GpModel):
        raise NotFittedError("log_marginal_likelihood needs a fitted GpModel")
    y = model.targets
    return float(
        -0.5 * y @ model.beta
        - np.log(np.diag(model.gram_chol)).sum()
        - 0.5 * y.size * np.log(2.0 * np.pi)
    )


def _lml_and_grad(theta, X, y, template, with_noise):
    """Negative log marginal likelihood and its gradient in log space."""
    h = template.from_log(theta)
    n = y.size
    Ks = kernel_matrix(X, X, h)
    K = Ks + h.noise_variance * np.eye(n)
    try:
        L, _ = _jittered_cholesky(K)
    except IllConditionedError:
        return 1e25, np.zeros_like(theta)
    beta = cho_solve((L, True), y)
    lml = -0.5 * y @ beta - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)
    W = np.outer(beta, beta) - cho_solve((L, True), np.eye(n))
    grad = np.empty_like(theta)
    grad[0] = 0.5 * np.sum(W * (2.0 * Ks))
    Xs = X / h.lengthscales
    for d in range(h.dim):
        diff2 = (Xs[:, d, None] - Xs[None, :, d]) ** 2
        grad[1 + d] = 0.5 * np.sum(W * Ks * diff2)
    if with_noise:
        grad[-1] = 0.5 * np.trace(W) * h.noise_variance
    return -lml, -grad


def optimize_hyperparams(X, y, init, optimize_noise=False, restarts=3, maxiter=200, rng=None):
    """Evidence maximization by quasi-Newton ascent in log space with random restarts.

    The first start is ``init`` itself; ``restarts`` further starts are
    log-normal perturbations of it.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    theta0 = init.to_log(optimize_noise)
    bounds = [_LOG_ALPHA_BOUNDS] + [_LOG_LENGTH_BOUNDS] * init.dim
    if optimize_noise:
        bounds.append(_LOG_NOISE_BOUNDS)
    starts = [theta0] + [theta0 + 0.5 * rng.standard_normal(theta0.size) for _ in range(restarts)]
    best_theta, best_val = theta0, _lml_and_grad(theta0, X, y, init, optimize_noise)[0]
    for start in starts:
        start = np.clip(start, [b[0] for b in bounds], [b[1] for b in bounds])
        res = minimize(
            _lml_and_grad,
            start,
            args=(X, y, init, optimize_noise),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": maxiter},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, res.fun
    return init.from_log(best_theta)


class MultiGpModel:
    """Independent GPs, one per state dimension, over a shared dataset."""

    def __init__(self, models, n_u):
        self.models = tuple(models)
        self.n_u = int(n_u)
        if not self.models:
            raise ValueError("MultiGpModel needs at least one GpModel")
        if len({m.inputs.shape for m in self.models}) != 1:
            raise ValueError("all per-dimension models must share one dataset")

    @property
    def n_x(self):
        return len(self.models)

    @property
    def inputs(self):
        return self.models[0].inputs

    def __len__(self):
        return self.models[0].n

    def predict_batch(self, xt):
        """Means and latent variances, shape (B, n_x), at stacked inputs ``xt`` (B, n_x+n_u)."""
        out = [m.predict(xt) for m in self.models]
        return np.stack([o[0] for o in out], 1), np.stack([o[1] for o in out], 1)

    def predict(self, x, u):
        xt = np.concatenate([np.atleast_1d(x), np.atleast_1d(u)]).astype(float)
        if xt.size != self.n_x + self.n_u:
            raise ValueError(f"expected {self.n_x}+{self.n_u} inputs, got {xt.size}")
        mean, var = self.predict_batch(xt[None])
        return GaussianBelief(mean[0], np.diag(var[0]))


def _per_dim(init, n_x):
    if isinstance(init, Hyperparams):
        return [init] * n_x
    init = list(init)
    if len(init) != n_x:
        raise ValueError(f"need {n_x} hyperparameter sets, got {len(init)}")
    return init


def fit(data, init, optimize=False, optimize_noise=False, restarts=3, maxiter=200, seed=0):
    """Fit one GP per output dimension of ``data``.

    ``init`` is a single Hyperparams (shared starting point) or one per
    dimension. With ``optimize`` set, each dimension's hyperparameters are
    chosen by evidence maximization starting from ``init``.
    """
    if len(data) < 1:
        raise ValueError("cannot fit a GP to an empty dataset")
    rng = np.random.default_rng(seed)
    models = []
    for i, h in enumerate(_per_dim(init, data.n_x)):
        y = data.outputs[:, i]
        if optimize:
            h = optimize_hyperparams(data.inputs, y, h, optimize_noise, restarts, maxiter, rng)
            log.debug("dim %d hyper: alpha=%.3g ls=%s", i, h.signal_amplitude, h.lengthscales)
        models.append(GpModel.build(data.inputs, y, h))
    return MultiGpModel(models, data.n_u)


def predict(model, x, u):
    """Posterior belief over the successor state of (x, u); covariance is diagonal."""
    if not isinstance(model, MultiGpModel):
        raise NotFittedError("predict needs a fitted MultiGpModel")
    return model.predict(x, u)


def with_noise(h, noise_variance):
    return replace(h, noise_variance=noise_variance)
