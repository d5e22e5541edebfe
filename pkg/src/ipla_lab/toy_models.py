"""Concrete models with known analytic structure.

Two families are bundled:

* a Gaussian hierarchical model, ``x_k ~ N(theta, s_lat^2)`` and
  ``y_k ~ N(x_k, s_obs^2)`` for ``k = 1..d_x``, whose marginal likelihood,
  joint minimiser and mean-field dynamics are all available in closed form;
* Bayesian logistic regression with a Gaussian prior ``x ~ N(theta 1, s^2 I)``
  on the weights, where ``theta`` is the scalar prior mean.

Both use a scalar parameter (``d_theta = 1``).
"""

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .model import AnalyticInfo, MarginalMoments, ModelSpec
from .validation import as_finite_vector, check_positive_float, check_positive_int


@dataclass(frozen=True)
class GaussianHierarchicalParams:
    y: np.ndarray
    sigma_lat: float = 1.0
    sigma_obs: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "y", as_finite_vector(self.y, "y"))
        object.__setattr__(self, "sigma_lat", check_positive_float(self.sigma_lat, "sigma_lat"))
        object.__setattr__(self, "sigma_obs", check_positive_float(self.sigma_obs, "sigma_obs"))

    @property
    def d_x(self):
        return self.y.shape[0]


@dataclass(frozen=True)
class LogisticRegressionParams:
    V: np.ndarray
    y: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        V = np.asarray(self.V, dtype=np.float64)
        if V.ndim != 2 or V.shape[0] == 0 or V.shape[1] == 0:
            raise ValueError(f"V must be a non-empty 2-D array, got shape {V.shape}")
        if not np.all(np.isfinite(V)):
            raise ValueError("V contains non-finite entries")
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if y.shape[0] != V.shape[0]:
            raise ValueError(f"{y.shape[0]} labels for {V.shape[0]} covariate rows")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", check_positive_float(self.sigma, "sigma"))

    @property
    def d_x(self):
        return self.V.shape[1]

    @property
    def d_y(self):
        return self.V.shape[0]


# -- Gaussian hierarchical model ---------------------------------------------


def gaussian_hessian(p):
    """Constant Hessian of U in the stacked coordinates ``(theta, x)``."""
    a = 1.0 / p.sigma_lat**2
    b = 1.0 / p.sigma_obs**2
    d = p.d_x
    H = np.zeros((d + 1, d + 1))
    H[0, 0] = d * a
    H[0, 1:] = H[1:, 0] = -a
    H[1:, 1:] = np.eye(d) * (a + b)
    return H


def gaussian_minimiser(p):
    """Joint minimiser ``(theta*, x*)`` of U; theta* is also the MMLE."""
    a = 1.0 / p.sigma_lat**2
    b = 1.0 / p.sigma_obs**2
    theta_star = np.array([p.y.mean()])
    x_star = (a * theta_star[0] + b * p.y) / (a + b)
    return theta_star, x_star


def make_gaussian_model(p):
    y = p.y
    d = p.d_x
    s_lat2 = p.sigma_lat**2
    s_obs2 = p.sigma_obs**2
    log_norm = d * math.log(2.0 * math.pi * p.sigma_lat * p.sigma_obs)

    def eval_U(theta, x):
        r_lat = x - theta
        r_obs = y - x
        return (
            np.sum(r_lat * r_lat, axis=-1) / (2.0 * s_lat2)
            + np.sum(r_obs * r_obs, axis=-1) / (2.0 * s_obs2)
            + log_norm
        )

    def grad_theta_U(theta, x):
        return -np.sum(x - theta, axis=-1, keepdims=True) / s_lat2

    def grad_x_U(theta, x):
        return (x - theta) / s_lat2 + (x - y) / s_obs2

    eig = np.linalg.eigvalsh(gaussian_hessian(p))
    theta_star, x_star = gaussian_minimiser(p)
    marginal_var = (s_lat2 + s_obs2) / d

    analytic = AnalyticInfo(
        theta_star=theta_star,
        x_star=x_star,
        mu=float(eig[0]),
        lipschitz_L=float(eig[-1]),
        theta_marginal_moments=MarginalMoments(
            mean=theta_star.copy(),
            variance=lambda n: np.array([marginal_var / n]),
        ),
    )
    return ModelSpec(1, d, eval_U, grad_theta_U, grad_x_U, analytic, name="gaussian")


def gaussian_kappa(p, theta):
    """Negative log marginal likelihood of the Gaussian model, up to a constant."""
    theta = np.asarray(theta, dtype=float)
    var = p.sigma_lat**2 + p.sigma_obs**2
    return np.sum((p.y - theta[..., None]) ** 2, axis=-1) / (2.0 * var)


def gaussian_meanfield_reference(p, theta0, m0, t):
    """Exact parameter and latent-mean trajectory of the mean-field limit.

    In the Gaussian model the mean-field drift depends on the latent law only
    through its mean ``m``, so ``(theta, m)`` solves the linear ODE
    ``d/dt (theta, m) = -H ((theta, m) - z*)`` with ``H`` the Hessian of U and
    ``z*`` the joint minimiser. Solved by eigendecomposition of ``H``.

    ``t`` may be a scalar or a 1-D array of times; with an array the outputs
    gain a leading time axis. Returns ``(theta_t, m_t)`` with trailing shapes
    ``(1,)`` and ``(d_x,)``.
    """
    d = p.d_x
    theta0 = as_finite_vector(theta0, "theta0", 1)
    m0 = np.broadcast_to(np.asarray(m0, dtype=float), (d,)).astype(float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")

    theta_star, x_star = gaussian_minimiser(p)
    z_star = np.concatenate([theta_star, x_star])
    evals, Q = np.linalg.eigh(gaussian_hessian(p))
    c0 = Q.T @ (np.concatenate([theta0, m0]) - z_star)
    decay = np.exp(-np.multiply.outer(t_arr, evals))
    z = z_star + (decay * c0) @ Q.T
    return z[..., :1], z[..., 1:]


# -- logistic regression -----------------------------------------------------


def make_logistic_model(p):
    V = p.V
    y = p.y
    s2 = p.sigma**2
    d = p.d_x
    log_norm = 0.5 * d * math.log(2.0 * math.pi * s2)

    def eval_U(theta, x):
        u = x @ V.T
        r = x - theta
        # -[y log s(u) + (1 - y) log s(-u)] = softplus(u) - y u
        nll = np.sum(np.logaddexp(0.0, u) - y * u, axis=-1)
        return log_norm + nll + np.sum(r * r, axis=-1) / (2.0 * s2)

    def grad_theta_U(theta, x):
        return -np.sum(x - theta, axis=-1, keepdims=True) / s2

    def grad_x_U(theta, x):
        u = x @ V.T
        return (x - theta) / s2 - (y - expit(u)) @ V

    # prior block [[d, -1'], [-1, I]] / s^2 has top eigenvalue (d + 1) / s^2;
    # the likelihood Hessian V' diag(s'(u)) V is bounded by V'V / 4
    top = np.linalg.eigvalsh(V.T @ V)[-1] if d > 0 else 0.0
    lipschitz = (d + 1) / s2 + 0.25 * float(top)
    return ModelSpec(
        1,
        d,
        eval_U,
        grad_theta_U,
        grad_x_U,
        AnalyticInfo(lipschitz_L=lipschitz),
        name="logistic",
    )


def logistic_x_lipschitz(p):
    """Lipschitz constant of ``x -> grad_x U(theta, x)`` for fixed theta."""
    return 1.0 / p.sigma**2 + 0.25 * float(np.sum(p.V * p.V))


def synthesize_logistic(d_x, d_y, theta_gen=0.0, sigma=1.0, seed=0):
    """Draw a dataset from the generative model with ground-truth prior mean.

    Covariates are iid standard normal; the true weights are drawn from the
    prior ``N(theta_gen 1, sigma^2 I)``. Returns ``(params, weights)``.
    """
    d_x = check_positive_int(d_x, "d_x")
    d_y = check_positive_int(d_y, "d_y")
    rng = np.random.default_rng(seed)
    weights = theta_gen + sigma * rng.standard_normal(d_x)
    V = rng.standard_normal((d_y, d_x))
    labels = (rng.uniform(size=d_y) < expit(V @ weights)).astype(float)
    return LogisticRegressionParams(V, labels, sigma), weights


_HEADER_RE = re.compile(r"v_(\d+)$")


def load_logistic_csv(path, sigma=1.0):
    """Read a ``v_1,...,v_dx,label`` CSV into logistic parameters."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    header, body = rows[0], rows[1:]
    if len(header) < 2 or header[-1].strip() != "label":
        raise ValueError(f"{path}: last header column must be 'label'")
    for k, name in enumerate(header[:-1], start=1):
        m = _HEADER_RE.match(name.strip())
        if not m or int(m.group(1)) != k:
            raise ValueError(f"{path}: header column {k} should be 'v_{k}', got {name!r}")
    if not body:
        raise ValueError(f"{path}: no data rows")
    data = []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            data.append([float(v) for v in row])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    data = np.array(data)
    return LogisticRegressionParams(data[:, :-1], data[:, -1], sigma)


def save_logistic_csv(p, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"v_{k}" for k in range(1, p.d_x + 1)] + ["label"])
        for row, label in zip(p.V, p.y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
