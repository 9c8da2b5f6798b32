import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpstc.errors import IllConditionedError, NotFittedError
from gpstc.gp import (
    Dataset,
    GpModel,
    Hyperparams,
    fit,
    kernel_matrix,
    log_marginal_likelihood,
    optimize_hyperparams,
    predict,
    se_kernel,
    _jittered_cholesky,
    _lml_and_grad,
)


def dense_oracle(X, y, h):
    """beta and log evidence from a dense solve and slogdet."""
    n = len(y)
    K = np.array([[h.signal_amplitude**2 * np.exp(-0.5 * np.sum((a - b) ** 2 / h.lengthscales**2)) for b in X] for a in X])
    K = K + h.noise_variance * np.eye(n)
    beta = np.linalg.solve(K, y)
    lml = -0.5 * y @ beta - 0.5 * np.linalg.slogdet(K)[1] - 0.5 * n * np.log(2 * np.pi)
    return beta, lml


def test_kernel_at_zero_distance_is_alpha_squared():
    h = Hyperparams(2.0, [1.0, 3.0])
    assert se_kernel(np.array([0.3, -1]), np.array([0.3, -1]), h) == pytest.approx(4.0)


def test_kernel_one_lengthscale_away():
    h = Hyperparams(1.0, [2.0])
    assert se_kernel(np.array([0.0]), np.array([2.0]), h) == pytest.approx(np.exp(-0.5))


def test_kernel_dimension_mismatch():
    with pytest.raises(ValueError):
        se_kernel(np.zeros(2), np.zeros(3), Hyperparams(1.0, [1.0, 1.0]))


@given(st.integers(1, 15), st.integers(1, 3), st.integers(0, 2**31))
def test_kernel_matrix_symmetric_psd(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    h = Hyperparams(rng.uniform(0.2, 3), rng.uniform(0.2, 3, size=d))
    K = kernel_matrix(X, X, h)
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K)[0] > -1e-9 * h.signal_amplitude**2 * n


@pytest.mark.parametrize("bad", [dict(signal_amplitude=0.0), dict(lengthscales=[-1.0]), dict(noise_variance=0.0)])
def test_hyperparams_reject_nonpositive(bad):
    kw = dict(signal_amplitude=1.0, lengthscales=[1.0], noise_variance=1e-4)
    kw.update(bad)
    with pytest.raises(ValueError):
        Hyperparams(**kw)


@given(st.integers(2, 20), st.integers(0, 2**31))
def test_beta_and_lml_match_dense_oracle(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, size=(n, 3))
    y = rng.normal(size=n)
    h = Hyperparams(rng.uniform(0.5, 2), rng.uniform(0.5, 2, size=3), rng.uniform(1e-2, 1e-1))
    m = GpModel.build(X, y, h)
    beta, lml = dense_oracle(X, y, h)
    assert m.jitter == 0.0
    np.testing.assert_allclose(m.beta, beta, rtol=1e-8, atol=1e-8)
    assert log_marginal_likelihood(m) == pytest.approx(lml, rel=1e-8, abs=1e-8)


def test_interpolates_training_points_with_tiny_noise(rng):
    X = rng.uniform(-2, 2, size=(15, 2))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2
    m = GpModel.build(X, y, Hyperparams(1.0, [1.0, 1.0], 1e-10))
    mean, var = m.predict(X)
    np.testing.assert_allclose(mean, y, atol=1e-4)
    assert np.all(var < 1e-4)


@given(st.integers(0, 2**31))
def test_posterior_variance_below_prior(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, size=(10, 2))
    h = Hyperparams(rng.uniform(0.3, 3), rng.uniform(0.3, 2, size=2), 1e-3)
    m = GpModel.build(X, rng.normal(size=10), h)
    probes = rng.uniform(-4, 4, size=(200, 2))
    _, var = m.predict(probes)
    assert np.all(var >= 0)
    assert np.all(var <= h.signal_amplitude**2 * (1 + 1e-12))


def test_far_from_data_prediction_reverts_to_prior():
    m = GpModel.build(np.zeros((1, 1)), [3.0], Hyperparams(1.5, [0.5]))
    mean, var = m.predict(np.array([[50.0]]))
    assert abs(mean[0]) < 1e-12
    assert var[0] == pytest.approx(2.25)


def test_duplicate_inputs_need_jitter_but_build():
    X = np.zeros((30, 1))
    m = GpModel.build(X, np.ones(30), Hyperparams(1.0, [1.0], 1e-300))
    assert m.jitter > 0
    assert np.all(np.isfinite(m.beta))


def test_indefinite_matrix_exhausts_jitter():
    with pytest.raises(IllConditionedError):
        _jittered_cholesky(-np.eye(3))


def test_lml_gradient_matches_finite_differences(rng):
    X = rng.uniform(-1, 1, size=(12, 2))
    y = np.sin(2 * X[:, 0]) + 0.1 * rng.normal(size=12)
    h = Hyperparams(0.8, [0.7, 1.3], 1e-2)
    theta = h.to_log(with_noise=True)
    f0, g = _lml_and_grad(theta, X, y, h, True)
    eps = 1e-6
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = eps
        fd = (_lml_and_grad(theta + e, X, y, h, True)[0] - _lml_and_grad(theta - e, X, y, h, True)[0]) / (2 * eps)
        assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_evidence_maximization_improves_lml(rng):
    X = rng.uniform(-2, 2, size=(30, 1))
    y = np.sin(3 * X[:, 0]) + 0.05 * rng.normal(size=30)
    init = Hyperparams(1.0, [1.0], 1e-1)
    best = optimize_hyperparams(X, y, init, optimize_noise=True)
    before = log_marginal_likelihood(GpModel.build(X, y, init))
    after = log_marginal_likelihood(GpModel.build(X, y, best))
    assert after > before
    assert best.lengthscales[0] < 2.0


def test_fit_one_model_per_state_dim(rng):
    data = Dataset(rng.normal(size=(8, 3)), rng.normal(size=(8, 2)), 1)
    model = fit(data, Hyperparams(1.0, [1, 1, 1]))
    assert model.n_x == 2 and len(model) == 8
    b = predict(model, [0.1, 0.2], [0.0])
    assert b.cov.shape == (2, 2)
    assert b.cov[0, 1] == 0.0


def test_predict_without_model():
    with pytest.raises(NotFittedError):
        predict(None, [0.0], [0.0])


def test_fit_empty_dataset_rejected():
    with pytest.raises(ValueError):
        fit(Dataset.empty(1, 1), Hyperparams(1.0, [1, 1]))


def test_dataset_cap_drops_oldest():
    d = Dataset.empty(1, 1)
    d = d.extend(np.arange(5)[:, None], np.zeros((5, 1)), np.arange(5)[:, None] + 10, cap=3)
    np.testing.assert_array_equal(d.inputs[:, 0], [2, 3, 4])
    np.testing.assert_array_equal(d.outputs[:, 0], [12, 13, 14])


@given(n=st.integers(0, 12), seed=st.integers(0, 2**31))
def test_dataset_csv_round_trip(tmp_path_factory, n, seed):
    rng = np.random.default_rng(seed)
    d = Dataset(rng.normal(size=(n, 3)), rng.normal(size=(n, 2)), 1)
    path = tmp_path_factory.mktemp("d") / "data.csv"
    d.to_csv(path)
    back = Dataset.from_csv(path)
    np.testing.assert_array_equal(back.inputs, d.inputs.reshape(n, 3))
    np.testing.assert_array_equal(back.outputs, d.outputs.reshape(n, 2))
    assert back.n_u == 1
