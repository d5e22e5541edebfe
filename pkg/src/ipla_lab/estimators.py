"""scikit-learn style wrappers around :func:`ipla_lab.samplers.run_chain`.

``ParticleMMLE`` fits any :class:`~ipla_lab.model.ModelSpec`; the two
subclasses build the bundled models from data passed to ``fit``.
"""

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .samplers import ALGORITHMS, InitSpec, RecorderSpec, RunConfig, run_chain
from .toy_models import (
    GaussianHierarchicalParams,
    LogisticRegressionParams,
    make_gaussian_model,
    make_logistic_model,
)
from .validation import check_positive_float, check_positive_int


class ParticleMMLE(BaseEstimator):
    """Maximum marginal likelihood by an interacting particle Langevin system.

    Parameters
    ----------
    model : ModelSpec, optional
        Model to fit. Subclasses build it from the data instead.
    n_particles : int
        Number of latent particles ``N``; acts as inverse temperature.
    step_size : float
        Euler step ``gamma``.
    n_steps : int
        Number of iterations.
    algorithm : {"ipla", "pgd"}
        ``"pgd"`` drops the parameter noise.
    n_replicates : int
        Independent chains; ``theta_`` is their average.
    init_theta, init_x : float
        Means of the initial law.
    init_scale : float
        Standard deviation of the initial law; 0 gives a point mass.
    random_state : int
        Seed of the counter-based noise.
    record_stride : int, optional
        Keep every ``record_stride``-th parameter iterate in ``record_``.
    """

    def __init__(
        self,
        model=None,
        n_particles=100,
        step_size=0.01,
        n_steps=1000,
        algorithm="ipla",
        n_replicates=1,
        init_theta=0.0,
        init_x=0.0,
        init_scale=0.0,
        random_state=0,
        record_stride=None,
    ):
        self.model = model
        self.n_particles = n_particles
        self.step_size = step_size
        self.n_steps = n_steps
        self.algorithm = algorithm
        self.n_replicates = n_replicates
        self.init_theta = init_theta
        self.init_x = init_x
        self.init_scale = init_scale
        self.random_state = random_state
        self.record_stride = record_stride

    def _build_model(self, X, y):
        if self.model is None:
            raise ValueError("ParticleMMLE needs a model; pass model=ModelSpec(...)")
        return self.model

    def _run_config(self):
        check_positive_int(self.n_particles, "n_particles")
        check_positive_float(self.step_size, "step_size")
        check_positive_int(self.n_steps, "n_steps", allow_zero=True)
        check_positive_int(self.n_replicates, "n_replicates")
        check_positive_float(self.init_scale, "init_scale", allow_zero=True)
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        seed = 0 if self.random_state is None else int(self.random_state)
        kind = "gaussian" if self.init_scale > 0 else "point"
        init = InitSpec(kind, self.init_theta, self.init_scale, self.init_x, self.init_scale)
        return RunConfig(
            self.n_particles, self.step_size, self.n_steps, seed, init, self.n_replicates
        )

    def fit(self, X=None, y=None):
        cfg = self._run_config()
        model = self._build_model(X, y)
        stride = self.record_stride or max(1, self.n_steps)
        record = run_chain(
            model, cfg, RecorderSpec(stride=stride, keep_cloud=True), algorithm=self.algorithm
        )
        self.model_ = model
        self.record_ = record
        self.theta_replicates_ = record.theta_final
        self.theta_ = record.theta_final.mean(axis=0)
        self.particles_ = record.cloud_final.reshape(-1, model.d_x)
        return self

    def theta_path(self):
        """Recorded steps and replicate-averaged parameter path."""
        check_is_fitted(self, "record_")
        return self.record_.steps, self.record_.theta_path.mean(axis=1)


class GaussianMMLE(ParticleMMLE):
    """Prior-mean estimation in the Gaussian hierarchical model.

    ``fit(X)`` takes the ``d_x`` observations as a 1-D array (or one column).
    The exact answer is the sample mean, which makes this a handy sanity check.
    """

    def __init__(
        self,
        sigma_lat=1.0,
        sigma_obs=1.0,
        n_particles=100,
        step_size=0.01,
        n_steps=1000,
        algorithm="ipla",
        n_replicates=1,
        init_theta=0.0,
        init_x=0.0,
        init_scale=0.0,
        random_state=0,
        record_stride=None,
    ):
        super().__init__(
            None, n_particles, step_size, n_steps, algorithm, n_replicates,
            init_theta, init_x, init_scale, random_state, record_stride,
        )
        self.sigma_lat = sigma_lat
        self.sigma_obs = sigma_obs

    def _build_model(self, X, y):
        obs = check_array(X, ensure_2d=False, dtype=np.float64)
        if obs.ndim == 2:
            if obs.shape[1] != 1:
                raise ValueError("observations must be a vector or a single column")
            obs = obs[:, 0]
        self.n_features_in_ = 1
        return make_gaussian_model(
            GaussianHierarchicalParams(obs, self.sigma_lat, self.sigma_obs)
        )


class LogisticMMLE(ClassifierMixin, ParticleMMLE):
    """Empirical Bayes logistic regression with prior ``N(theta 1, sigma^2 I)``.

    After fitting, ``particles_`` approximate the weight posterior at the
    estimated prior mean and drive :meth:`predict_proba`.
    """

    def __init__(
        self,
        sigma=1.0,
        n_particles=100,
        step_size=0.005,
        n_steps=1000,
        algorithm="ipla",
        n_replicates=1,
        init_theta=0.0,
        init_x=0.0,
        init_scale=0.0,
        random_state=0,
        record_stride=None,
    ):
        super().__init__(
            None, n_particles, step_size, n_steps, algorithm, n_replicates,
            init_theta, init_x, init_scale, random_state, record_stride,
        )
        self.sigma = sigma

    def _build_model(self, X, y):
        if y is None:
            raise ValueError("LogisticMMLE.fit requires labels y")
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if not set(self.classes_.tolist()) <= {0.0, 1.0}:
            raise ValueError("labels must be 0 or 1")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return make_logistic_model(LogisticRegressionParams(X, y, self.sigma))

    def predict_proba(self, X):
        check_is_fitted(self, "particles_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        p1 = expit(X @ self.particles_.T).mean(axis=1)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        check_is_fitted(self, "particles_")
        return self.classes_[(self.predict_proba(X)[:, 1] > 0.5).astype(int)]
