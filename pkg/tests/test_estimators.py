import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.linear_model import LogisticRegression

from ipla_lab import GaussianMMLE, LogisticMMLE, ParticleMMLE, synthesize_logistic


def test_params_roundtrip():
    est = GaussianMMLE(sigma_obs=2.0, n_particles=7)
    params = est.get_params()
    assert params["sigma_obs"] == 2.0 and params["n_particles"] == 7
    c = clone(est).set_params(step_size=0.02)
    assert c.step_size == 0.02 and est.step_size == 0.01


def test_gaussian_mmle_recovers_sample_mean():
    y = np.array([0.5, 1.5, 1.0, 2.0])
    est = GaussianMMLE(n_particles=200, step_size=0.01, n_steps=3000, n_replicates=8, random_state=1)
    est.fit(y)
    # the parameter marginal has standard deviation sqrt(2 / (N d_x)) = 0.05
    assert est.theta_[0] == pytest.approx(y.mean(), abs=0.1)
    assert est.theta_replicates_.shape == (8, 1)
    assert est.particles_.shape == (8 * 200, 4)
    steps, path = est.theta_path()
    assert steps[0] == 0 and steps[-1] == 3000 and path.shape == (len(steps), 1)


def test_gaussian_mmle_column_input():
    est = GaussianMMLE(n_steps=10).fit(np.array([[1.0], [2.0]]))
    assert est.theta_.shape == (1,)
    with pytest.raises(ValueError):
        GaussianMMLE(n_steps=10).fit(np.ones((3, 2)))


def test_fit_is_reproducible():
    y = np.array([0.1, -0.3])
    a = GaussianMMLE(n_steps=200, random_state=5).fit(y).theta_
    b = GaussianMMLE(n_steps=200, random_state=5).fit(y).theta_
    c = GaussianMMLE(n_steps=200, random_state=6).fit(y).theta_
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()


@pytest.mark.parametrize("bad", [
    dict(n_particles=0), dict(step_size=-1.0), dict(n_steps=-2), dict(algorithm="sgd"),
    dict(n_particles=2.5), dict(init_scale=-1.0),
])
def test_invalid_hyperparameters(bad):
    with pytest.raises((ValueError, TypeError)):
        GaussianMMLE(**bad).fit(np.array([0.0]))


def test_step_size_window_checked():
    with pytest.raises(ValueError):
        GaussianMMLE(step_size=0.5).fit(np.array([0.0]))


def test_particle_mmle_needs_model():
    with pytest.raises(ValueError):
        ParticleMMLE().fit()


def test_logistic_classifier():
    p, w = synthesize_logistic(3, 300, theta_gen=0.0, sigma=1.0, seed=2)
    est = LogisticMMLE(n_particles=20, step_size=0.005, n_steps=1500, random_state=0)
    est.fit(p.V, p.y)
    proba = est.predict_proba(p.V)
    assert proba.shape == (300, 2) and np.allclose(proba.sum(1), 1.0)
    oracle = LogisticRegression().fit(p.V, p.y).score(p.V, p.y)
    assert est.score(p.V, p.y) >= oracle - 0.03
    with pytest.raises(ValueError):
        est.predict(np.ones((2, 4)))


def test_logistic_errors():
    with pytest.raises(NotFittedError):
        LogisticMMLE().predict(np.ones((2, 2)))
    with pytest.raises(ValueError):
        LogisticMMLE(n_steps=1).fit(np.ones((3, 2)), [0, 1, 2])
    with pytest.raises(ValueError):
        LogisticMMLE(n_steps=1).fit(np.ones((3, 2)))


def test_pgd_option():
    est = GaussianMMLE(algorithm="pgd", n_steps=50, random_state=0).fit(np.array([1.0]))
    assert est.record_.algorithm == "pgd"
