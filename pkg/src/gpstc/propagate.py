"""Multi-step predictive distributions under a held input, by exact moment matching.

At each step the augmented input ``[x; u]`` is Gaussian with covariance
``Blkdiag(Sigma, 0)``; the GP output's first and second moments are computed
in closed form for the SE kernel and the result is re-approximated by a
Gaussian. All routines have batched forms operating on arrays of shape
``(B, ...)`` which the value iteration uses directly.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .belief import GaussianBelief
from .errors import NumericalError

__all__ = [
    "GaussianBelief",
    "augment",
    "eta_vector",
    "propagate_one_step",
    "propagate_m_steps",
    "propagate_batch",
    "moment_match_batch",
]

# negative eigenvalues down to -PSD_CLAMP_TOL * max(1, alpha^2) are round-off
PSD_CLAMP_TOL = 1e-8
# elements of a (chunk, N, N) work array
_CHUNK_ELEMS = 2_000_000


def augment(belief, u):
    """Mean [mu; u] and covariance Blkdiag(Sigma, 0)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n_x = belief.dim
    mu = np.concatenate([belief.mean, u])
    S = np.zeros((n_x + u.size, n_x + u.size))
    S[:n_x, :n_x] = belief.cov
    return mu, S


def _log_eta_batch(gp, mu_t, S_t, nu=None):
    """log eta[b, n] = log(alpha^2 |Lambda^{-1} S + I|^{-1/2} exp(-0.5 nu^T (Lambda + S)^{-1} nu))."""
    h = gp.hyper
    lam = h.lengthscales**2
    D = lam.size
    if nu is None:
        nu = gp.inputs[None, :, :] - mu_t[:, None, :]
    A = S_t + np.diag(lam)[None]
    sol = np.linalg.solve(A, np.swapaxes(nu, 1, 2))
    quad = np.einsum("bnd,bdn->bn", nu, sol)
    _, logdet = np.linalg.slogdet(S_t / lam[None, None, :] + np.eye(D)[None])
    return 2.0 * np.log(h.signal_amplitude) - 0.5 * logdet[:, None] - 0.5 * quad


def _eta_batch(gp, mu_t, S_t):
    return np.exp(_log_eta_batch(gp, mu_t, S_t))


def eta_vector(model_i, mu_t, S_t):
    """Expected kernel vector E[k_i(x~, x*_n)] for x~ ~ N(mu_t, S_t)."""
    mu_t = np.asarray(mu_t, dtype=float)
    S_t = np.asarray(S_t, dtype=float)
    return _eta_batch(model_i, mu_t[None], S_t[None])[0]


def _log_k_batch(gp, nu):
    """log k(x*_n, mu) for deviations nu = x*_n - mu, shape (B, N)."""
    h = gp.hyper
    return 2.0 * np.log(h.signal_amplitude) - 0.5 * np.sum(nu**2 / h.lengthscales**2, axis=-1)


def _moment_match_chunk(model, mu_t, S_t, n_x):
    """Exact output moments for a chunk of Gaussian inputs.

    Second moments are assembled from C = E[k k^T] - eta eta^T (the covariance
    of the kernel vector), built through expm1 of a log-ratio, so that the
    large, nearly cancelling terms of the raw formulas never meet in floating
    point. The eta^T K^{-1} eta part goes through the Cholesky factor.
    """
    B = mu_t.shape[0]
    D = mu_t.shape[1]
    gps = model.models
    nu = model.inputs[None, :, :] - mu_t[:, None, :]
    eye = np.eye(D)[None]
    means = np.empty((B, n_x))
    cov = np.empty((B, n_x, n_x))
    logk = [_log_k_batch(g, nu) for g in gps]
    zeta = [nu / (g.hyper.lengthscales**2) for g in gps]
    log_eta = [_log_eta_batch(g, mu_t, S_t, nu) for g in gps]
    eta = [np.exp(le) for le in log_eta]
    for a, ga in enumerate(gps):
        means[:, a] = eta[a] @ ga.beta
    for a, ga in enumerate(gps):
        ila = 1.0 / ga.hyper.lengthscales**2
        for b in range(a, n_x):
            gb = gps[b]
            ilb = 1.0 / gb.hyper.lengthscales**2
            R = S_t * (ila + ilb)[None, None, :] + eye
            T = np.linalg.solve(R, S_t)
            T = 0.5 * (T + np.swapaxes(T, 1, 2))
            _, logdetR = np.linalg.slogdet(R)
            za, zb = zeta[a], zeta[b]
            za_T = za @ T
            zb_T = zb @ T
            qa = logk[a] + 0.5 * np.einsum("bnd,bnd->bn", za_T, za) - log_eta[a]
            qb = logk[b] + 0.5 * np.einsum("bnd,bnd->bn", zb_T, zb) - log_eta[b]
            # log(Q_ij / (eta_a,i eta_b,j))
            ratio = (
                qa[:, :, None]
                + qb[:, None, :]
                + za_T @ np.swapaxes(zb, 1, 2)
                - 0.5 * logdetR[:, None, None]
            )
            base = log_eta[a][:, :, None] + log_eta[b][:, None, :]
            small = ratio < 1.0
            C = np.where(
                small,
                np.exp(base) * np.expm1(np.minimum(ratio, 1.0)),
                np.exp(base + np.where(small, 0.0, ratio)) - np.exp(base),
            )
            val = np.einsum("n,bnm,m->b", ga.beta, C, gb.beta)
            if a == b:
                # E[Var] = alpha^2 - tr(K^{-1} E[k k^T])
                v = solve_triangular(ga.gram_chol, eta[a].T, lower=True)
                val = (
                    val
                    + ga.hyper.signal_amplitude**2
                    - (v**2).sum(0)
                    - np.einsum("nm,bnm->b", ga.gram_inv, C)
                    + ga.hyper.noise_variance
                )
            cov[:, a, b] = val
            cov[:, b, a] = val
    return means, cov


def _repair_psd(cov, scale=1.0):
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    w, v = np.linalg.eigh(cov)
    worst = w[:, 0].min() if w.size else 0.0
    if worst < -PSD_CLAMP_TOL * max(1.0, scale):
        raise NumericalError(f"moment-matched covariance has eigenvalue {worst:.3e}")
    if worst < 0.0:
        neg = w[:, 0] < 0.0
        w = np.clip(w, 0.0, None)
        fixed = np.einsum("bij,bj,bkj->bik", v[neg], w[neg], v[neg])
        cov[neg] = 0.5 * (fixed + np.swapaxes(fixed, 1, 2))
    return cov


def moment_match_batch(model, means, covs, inputs):
    """One moment-matched step for a batch of beliefs.

    means: (B, n_x), covs: (B, n_x, n_x), inputs: (B, n_u).
    Returns successor means (B, n_x) and covariances (B, n_x, n_x).
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    inputs = np.asarray(inputs, dtype=float).reshape(means.shape[0], -1)
    B, n_x = means.shape
    mu_t = np.hstack([means, inputs])
    D = mu_t.shape[1]
    S_t = np.zeros((B, D, D))
    S_t[:, :n_x, :n_x] = covs
    out_m = np.empty((B, n_x))
    out_S = np.empty((B, n_x, n_x))

    # zero-covariance rows reduce to plain GP prediction
    point = np.all(covs.reshape(B, -1) == 0.0, axis=1)
    if point.any():
        pm, pv = model.predict_batch(mu_t[point])
        noise = np.array([g.hyper.noise_variance for g in model.models])
        out_m[point] = pm
        sub = np.zeros((pm.shape[0], n_x, n_x))
        idx = np.arange(n_x)
        sub[:, idx, idx] = pv + noise
        out_S[point] = sub
    rest = np.flatnonzero(~point)
    if rest.size:
        N = len(model)
        chunk = max(1, _CHUNK_ELEMS // max(1, N * N))
        for s in range(0, rest.size, chunk):
            sel = rest[s : s + chunk]
            m_, S_ = _moment_match_chunk(model, mu_t[sel], S_t[sel], n_x)
            out_m[sel] = m_
            out_S[sel] = S_
    scale = max(g.hyper.signal_amplitude**2 for g in model.models)
    return out_m, _repair_psd(out_S, scale)


def propagate_batch(model, x0, inputs, m):
    """Propagate point beliefs ``x0`` (B, n_x) under held ``inputs`` (B, n_u) for m steps.

    Returns means (m, B, n_x) and covariances (m, B, n_x, n_x); index l holds
    the belief after l+1 steps.
    """
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    inputs = np.asarray(inputs, dtype=float).reshape(x0.shape[0], -1)
    B, n_x = x0.shape
    means = np.empty((m, B, n_x))
    covs = np.empty((m, B, n_x, n_x))
    mu, S = x0, np.zeros((B, n_x, n_x))
    for step in range(m):
        mu, S = moment_match_batch(model, mu, S, inputs)
        means[step], covs[step] = mu, S
    return means, covs


def propagate_one_step(model, belief, u):
    """Moment-matched Gaussian over the successor of ``belief`` under input ``u``."""
    m, S = moment_match_batch(
        model, belief.mean[None], belief.cov[None], np.atleast_1d(u)[None]
    )
    return GaussianBelief(m[0], S[0])


def propagate_m_steps(model, x0, u, m):
    """Beliefs after 1..m steps from the point state ``x0`` holding ``u``."""
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    means, covs = propagate_batch(model, np.atleast_1d(x0)[None], np.atleast_1d(u)[None], m)
    return [GaussianBelief(means[l, 0], covs[l, 0]) for l in range(m)]
