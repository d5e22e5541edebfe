"""Latent-variable model abstraction and assumption probes.

A model is the negative log joint density ``U(theta, x) = -log p_theta(x, y)``
with the data ``y`` closed over, plus its two partial gradients. All three
callables must broadcast over leading axes: ``theta`` has shape
``(..., d_theta)``, ``x`` has shape ``(..., d_x)`` and the outputs have shape
``(...)``, ``(..., d_theta)`` and ``(..., d_x)``. The samplers rely on this to
evaluate a whole particle cloud in one call.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import DegenerateProbe, NonFiniteEvaluation
from .validation import as_finite_vector, check_positive_float, check_positive_int


@dataclass(frozen=True)
class MarginalMoments:
    """Closed-form moments of the parameter marginal of the invariant law.

    ``variance(n_particles)`` returns the per-coordinate variance.
    """

    mean: np.ndarray
    variance: Callable[[int], np.ndarray]


@dataclass(frozen=True)
class AnalyticInfo:
    theta_star: Optional[np.ndarray] = None
    x_star: Optional[np.ndarray] = None
    mu: Optional[float] = None
    lipschitz_L: Optional[float] = None
    theta_marginal_moments: Optional[MarginalMoments] = None

    def __post_init__(self):
        if self.mu is not None and self.lipschitz_L is not None:
            if self.mu > self.lipschitz_L * (1 + 1e-12):
                raise ValueError(
                    f"strong convexity mu={self.mu} exceeds Lipschitz L={self.lipschitz_L}"
                )


@dataclass(frozen=True)
class ModelSpec:
    d_theta: int
    d_x: int
    eval_U: Callable
    grad_theta_U: Callable
    grad_x_U: Callable
    analytic: Optional[AnalyticInfo] = None
    name: str = field(default="model", compare=False)

    def __post_init__(self):
        check_positive_int(self.d_theta, "d_theta")
        check_positive_int(self.d_x, "d_x")

    @classmethod
    def from_pointwise(cls, d_theta, d_x, eval_U, grad_theta_U, grad_x_U, **kwargs):
        """Wrap callables that only accept single points so they broadcast.

        Slow (a Python loop per particle) but handy for prototyping.
        """

        def lift(fn, out_dim):
            def batched(theta, x):
                theta = np.asarray(theta, dtype=float)
                x = np.asarray(x, dtype=float)
                lead = np.broadcast_shapes(theta.shape[:-1], x.shape[:-1])
                th = np.broadcast_to(theta, lead + (d_theta,)).reshape(-1, d_theta)
                xs = np.broadcast_to(x, lead + (d_x,)).reshape(-1, d_x)
                vals = [np.asarray(fn(a, b), dtype=float) for a, b in zip(th, xs)]
                shape = lead if out_dim is None else lead + (out_dim,)
                return np.array(vals, dtype=float).reshape(shape)

            return batched

        return cls(
            d_theta,
            d_x,
            lift(eval_U, None),
            lift(grad_theta_U, d_theta),
            lift(grad_x_U, d_x),
            **kwargs,
        )

    def grad_U(self, theta, x):
        """Full gradient with respect to the stacked vector ``(theta, x)``."""
        return np.concatenate(
            [self.grad_theta_U(theta, x), self.grad_x_U(theta, x)], axis=-1
        )

    def split(self, v):
        v = np.asarray(v, dtype=float)
        return v[..., : self.d_theta], v[..., self.d_theta :]


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of a finite-difference gradient check at one point.

    Errors are ``max_k |analytic_k - fd_k| / (1 + |analytic_k|)`` per block;
    ``*_worst`` is the coordinate attaining it.
    """

    theta_error: float
    x_error: float
    theta_worst: int
    x_worst: int
    grad_theta: np.ndarray
    grad_x: np.ndarray
    h: float

    @property
    def max_error(self):
        return max(self.theta_error, self.x_error)

    @property
    def worst_block(self):
        return "theta" if self.theta_error >= self.x_error else "x"

    def passed(self, tol=1e-5):
        return self.max_error < tol


def _finite_U(model, theta, x):
    val = float(model.eval_U(theta, x))
    if not np.isfinite(val):
        raise NonFiniteEvaluation(f"U is non-finite at theta={theta}, x={x}")
    return val


def check_gradients(model, theta, x, h=None):
    """Compare the analytic gradients against centred finite differences.

    ``h`` defaults to ``1e-5 * (1 + max(|theta|, |x|))``.
    """
    theta = as_finite_vector(theta, "theta", model.d_theta)
    x = as_finite_vector(x, "x", model.d_x)
    if h is None:
        h = 1e-5 * (1.0 + max(np.max(np.abs(theta)), np.max(np.abs(x))))
    h = check_positive_float(h, "h")

    _finite_U(model, theta, x)
    g_theta = np.asarray(model.grad_theta_U(theta, x), dtype=float).reshape(model.d_theta)
    g_x = np.asarray(model.grad_x_U(theta, x), dtype=float).reshape(model.d_x)

    v = np.concatenate([theta, x])
    fd = np.empty_like(v)
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = h
        up = _finite_U(model, *model.split(v + e))
        down = _finite_U(model, *model.split(v - e))
        fd[k] = (up - down) / (2.0 * h)

    rel_theta = np.abs(g_theta - fd[: model.d_theta]) / (1.0 + np.abs(g_theta))
    rel_x = np.abs(g_x - fd[model.d_theta :]) / (1.0 + np.abs(g_x))
    if not (np.all(np.isfinite(rel_theta)) and np.all(np.isfinite(rel_x))):
        raise NonFiniteEvaluation("analytic gradient is non-finite")
    return GradCheckReport(
        theta_error=float(rel_theta.max()),
        x_error=float(rel_x.max()),
        theta_worst=int(rel_theta.argmax()),
        x_worst=int(rel_x.argmax()),
        grad_theta=g_theta,
        grad_x=g_x,
        h=h,
    )


def probe_convexity(model, seed=0, trials=1000, radius=1.0, center=None, max_resample=100):
    """Heuristic lower estimate of the strong convexity constant.

    Draws ``trials`` pairs uniformly in the box ``center + [-radius, radius]^d``
    and returns the smallest monotonicity ratio
    ``<v - v', grad U(v) - grad U(v')> / |v - v'|^2``. For a model with a
    constant Hessian this is a Rayleigh quotient, so it always lies between
    the extreme eigenvalues. This is a probe, not a certificate.
    """
    trials = check_positive_int(trials, "trials")
    if trials < 2:
        raise ValueError("trials must be >= 2")
    radius = check_positive_float(radius, "radius")
    dim = model.d_theta + model.d_x
    center = np.zeros(dim) if center is None else as_finite_vector(center, "center", dim)
    rng = np.random.default_rng(seed)

    v = center + rng.uniform(-radius, radius, size=(trials, dim))
    w = center + rng.uniform(-radius, radius, size=(trials, dim))
    gap = np.einsum("ij,ij->i", v - w, v - w)
    for _ in range(max_resample):
        bad = gap == 0.0
        if not bad.any():
            break
        w[bad] = center + rng.uniform(-radius, radius, size=(bad.sum(), dim))
        gap = np.einsum("ij,ij->i", v - w, v - w)
    keep = gap > 0.0
    if not keep.any():
        raise DegenerateProbe("all sampled pairs were coincident")
    v, w, gap = v[keep], w[keep], gap[keep]

    dg = model.grad_U(*model.split(v)) - model.grad_U(*model.split(w))
    ratios = np.einsum("ij,ij->i", v - w, dg) / gap
    if not np.all(np.isfinite(ratios)):
        raise NonFiniteEvaluation("gradient is non-finite at a probe point")
    return float(ratios.min())
