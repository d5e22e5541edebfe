"""Error functionals, the three-term error bound and rate fitting."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DomainError, EmptySample, SizeMismatch
from .samplers import coupled_step_size_run
from .validation import check_positive_float, check_positive_int, check_step_size


@dataclass(frozen=True)
class EmpiricalLaw:
    """``M`` iid draws of a ``d``-dimensional statistic, stored as ``(M, d)``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2:
            raise ValueError(f"samples must be (M, d), got shape {s.shape}")
        if s.shape[0] == 0:
            raise EmptySample("empirical law has no samples")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples contain non-finite entries")
        object.__setattr__(self, "samples", s)

    @property
    def size(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]


def _as_law(law):
    return law if isinstance(law, EmpiricalLaw) else EmpiricalLaw(law)


def w2_to_dirac(law, point):
    """Root mean squared distance of the samples to ``point``.

    This is exactly the 2-Wasserstein distance to a point mass.
    """
    law = _as_law(law)
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.shape != (law.dim,):
        raise SizeMismatch(f"point has shape {point.shape}, samples have dimension {law.dim}")
    diff = law.samples - point
    return float(math.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def w2_1d(a, b):
    """Exact 2-Wasserstein distance between equal-size 1-D samples.

    The monotone (sorted) coupling is optimal on the line.
    """
    a, b = _as_law(a), _as_law(b)
    if a.dim != 1 or b.dim != 1:
        raise ValueError("w2_1d needs one-dimensional samples")
    if a.size != b.size:
        raise SizeMismatch(f"sample sizes differ: {a.size} vs {b.size}")
    diff = np.sort(a.samples[:, 0]) - np.sort(b.samples[:, 0])
    return float(math.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True)
class RMSEEstimate:
    """RMSE with a delta-method standard error."""

    value: float
    se: float
    n: int


def rmse_with_se(sq_errors):
    """``sqrt(mean(e))`` and its standard error from per-replicate squared errors.

    With ``m = mean(e)`` and ``s_m`` the standard error of ``m``, the delta
    method gives ``se = s_m / (2 sqrt(m))``.
    """
    e = np.asarray(sq_errors, dtype=float).ravel()
    if e.size == 0:
        raise EmptySample("no squared errors")
    m = float(e.mean())
    if e.size < 2 or m == 0.0:
        return RMSEEstimate(math.sqrt(m), 0.0 if m == 0.0 else float("nan"), e.size)
    s_m = float(e.std(ddof=1)) / math.sqrt(e.size)
    return RMSEEstimate(math.sqrt(m), s_m / (2.0 * math.sqrt(m)), e.size)


@dataclass(frozen=True)
class BoundInputs:
    mu: float
    d_theta: int
    d_x: int
    N: int
    n: int
    gamma: float
    z0_dist: float
    C1: Optional[float] = None
    lipschitz_L: Optional[float] = None

    def __post_init__(self):
        check_positive_float(self.mu, "mu")
        check_positive_int(self.d_theta, "d_theta")
        check_positive_int(self.d_x, "d_x")
        check_positive_int(self.N, "N")
        check_positive_int(self.n, "n", allow_zero=True)
        check_positive_float(self.z0_dist, "z0_dist", allow_zero=True)
        if self.C1 is not None:
            check_positive_float(self.C1, "C1")


@dataclass(frozen=True)
class BoundTerms:
    total: float
    term_concentration: float
    term_ergodic: float
    term_discretization: Optional[float]

    @property
    def has_discretization(self):
        return self.term_discretization is not None

    @property
    def without_discretization(self):
        return self.term_concentration + self.term_ergodic

    def __iter__(self):
        yield from (self.total, self.term_concentration, self.term_ergodic, self.term_discretization)


def discretization_scale(d_theta, d_x, N, gamma):
    """``(1 + sqrt(d_theta / N + d_x)) sqrt(gamma)``, the factor multiplying C1."""
    return (1.0 + math.sqrt(d_theta / N + d_x)) * math.sqrt(gamma)


def theorem1_bound(b):
    """Evaluate the concentration + ergodic + discretisation error bound.

    When ``C1`` is missing the discretisation term is ``None`` and ``total``
    covers the first two terms only.
    """
    check_step_size(b.gamma, b.mu, b.lipschitz_L)
    conc = math.sqrt(2.0 * b.d_theta / (b.N * b.mu))
    erg = math.exp(-b.mu * b.n * b.gamma) * (
        b.z0_dist + math.sqrt((b.d_x * b.N + b.d_theta) / (b.N * b.mu))
    )
    disc = None
    if b.C1 is not None:
        disc = b.C1 * discretization_scale(b.d_theta, b.d_x, b.N, b.gamma)
    total = conc + erg + (disc or 0.0)
    return BoundTerms(total, conc, erg, disc)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float

    def __iter__(self):
        yield from (self.slope, self.intercept, self.r2)


def _ols(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2)


def fit_rate(points):
    """Least squares line through ``(log scale, log error)``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (scale, error) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise DomainError("scales and errors must be finite and positive")
    if np.unique(pts[:, 0]).size != pts.shape[0]:
        raise ValueError("scales must be distinct")
    return _ols(np.log(pts[:, 0]), np.log(pts[:, 1]))


def fit_exponential_rate(times, errors):
    """Least squares line through ``(time, log error)``; slope is the decay rate."""
    t = np.asarray(times, dtype=float)
    e = np.asarray(errors, dtype=float)
    if t.shape != e.shape or t.ndim != 1 or t.size < 3:
        raise ValueError("need at least 3 (time, error) points")
    if np.any(e <= 0):
        raise DomainError("errors must be positive")
    return _ols(t, np.log(e))


def pre_floor_prefix(errors, floor, factor=3.0):
    """Length of the leading run of errors that stay at or above ``factor * floor``."""
    e = np.asarray(errors, dtype=float)
    below = np.nonzero(e < factor * floor)[0]
    return int(below[0]) if below.size else e.size


@dataclass(frozen=True)
class C1Calibration:
    """Strong errors against a fine reference chain sharing the Brownian path."""

    C1: float
    gammas: np.ndarray
    errors: np.ndarray
    standard_errors: np.ndarray
    implied_C1: np.ndarray

    def fit(self):
        return fit_rate(zip(self.gammas, self.errors))


def estimate_c1(model, cfg_grid, reference_gamma, noise=None, algorithm="ipla"):
    """Calibrated discretisation constant; see :func:`calibrate_c1`."""
    return calibrate_c1(model, cfg_grid, reference_gamma, noise, algorithm).C1


def calibrate_c1(model, cfg_grid, reference_gamma, noise=None, algorithm="ipla"):
    """Calibrate the discretisation constant of the error bound.

    C1 is the largest ``error / ((1 + sqrt(d_theta / N + d_x)) sqrt(gamma))``
    over the grid, where ``error`` is the RMS gap between the parameter end
    points of the coarse and reference chains.
    """
    cfgs = list(cfg_grid)
    theta_ref, finals = coupled_step_size_run(
        model, cfgs, reference_gamma, noise=noise, algorithm=algorithm
    )
    gammas, errs, ses, implied = [], [], [], []
    n = cfgs[0].n_particles
    for cfg in sorted(cfgs, key=lambda c: c.gamma):
        sq = np.sum((finals[cfg.gamma] - theta_ref) ** 2, axis=-1)
        est = rmse_with_se(sq)
        gammas.append(cfg.gamma)
        errs.append(est.value)
        ses.append(est.se)
        implied.append(est.value / discretization_scale(model.d_theta, model.d_x, n, cfg.gamma))
    implied = np.array(implied)
    return C1Calibration(
        C1=float(implied.max()),
        gammas=np.array(gammas),
        errors=np.array(errs),
        standard_errors=np.array(ses),
        implied_C1=implied,
    )
