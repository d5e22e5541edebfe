"""Interacting particle Langevin updates and chain drivers.

The parameter update averages ``grad_theta U`` over the cloud and adds
``sqrt(2 gamma / N)`` Gaussian noise; every particle takes an unadjusted
Langevin step in ``x`` at the current parameter. All gradients are taken at
the old state. The PGD variant drops the parameter noise.

Internally every routine works on a stack of independent replicates:
``theta`` has shape ``(M, d_theta)`` and the cloud ``(M, N, d_x)``.
The average over particles is a sorted sum, so it does not depend on the
order of the particles and the parameter path is invariant (bit for bit) under
relabelling the particles together with their noise sources.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DivergedState, GammaOutOfRange, UnsupportedModel
from .noise import NoiseStreams, ZeroNoise
from .toy_models import GaussianHierarchicalParams, gaussian_meanfield_reference, make_gaussian_model
from .validation import (
    as_finite_vector,
    check_positive_float,
    check_positive_int,
    check_step_size,
)

ALGORITHMS = ("ipla", "pgd")


@dataclass(frozen=True)
class InitSpec:
    """Initial law: a point mass, or independent Gaussians around the means.

    With ``kind="point"`` the scales are ignored.
    """

    kind: str = "point"
    theta_mean: object = 0.0
    theta_scale: float = 0.0
    x_mean: object = 0.0
    x_scale: float = 0.0

    def __post_init__(self):
        if self.kind not in ("point", "gaussian"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        check_positive_float(self.theta_scale, "theta_scale", allow_zero=True)
        check_positive_float(self.x_scale, "x_scale", allow_zero=True)

    def sample(self, noise, d_theta, d_x):
        m, n = noise.replicates, noise.n_particles
        theta = np.broadcast_to(np.asarray(self.theta_mean, dtype=float), (d_theta,))
        x = np.broadcast_to(np.asarray(self.x_mean, dtype=float), (d_x,))
        theta0 = np.tile(theta, (m, 1))
        cloud0 = np.tile(x, (m, n, 1))
        if self.kind == "gaussian":
            xi_theta, xi_cloud = noise.draw_init()
            theta0 = theta0 + self.theta_scale * xi_theta
            cloud0 = cloud0 + self.x_scale * xi_cloud
        return theta0, cloud0


@dataclass(frozen=True)
class RunConfig:
    n_particles: int
    gamma: float
    n_steps: int
    seed: int = 0
    init: InitSpec = field(default_factory=InitSpec)
    replicates: int = 1

    def __post_init__(self):
        check_positive_int(self.n_particles, "n_particles")
        check_positive_float(self.gamma, "gamma")
        check_positive_int(self.n_steps, "n_steps", allow_zero=True)
        check_positive_int(self.replicates, "replicates")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def horizon(self):
        return self.n_steps * self.gamma

    def validate_for(self, model):
        info = model.analytic
        if info is not None:
            check_step_size(self.gamma, info.mu, info.lipschitz_L)
        return self

    def streams(self, model, particle_order=None):
        return NoiseStreams(
            self.seed,
            self.n_particles,
            model.d_theta,
            model.d_x,
            self.replicates,
            particle_order=particle_order,
        )


@dataclass(frozen=True)
class SystemState:
    theta: np.ndarray
    cloud: np.ndarray
    step: int = 0
    time: float = 0.0

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        cloud = np.asarray(self.cloud, dtype=float)
        if cloud.ndim == 1:
            cloud = cloud[:, None]
        if theta.ndim != 1 or cloud.ndim != 2:
            raise ValueError("theta must be a vector and cloud an (N, d_x) array")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(cloud))):
            raise ValueError("state contains non-finite entries")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "cloud", cloud)

    @property
    def n_particles(self):
        return self.cloud.shape[0]


@dataclass(frozen=True)
class RescaledState:
    z: np.ndarray


def rescale(s):
    """Stack ``(theta, x_1 / sqrt(N), ..., x_N / sqrt(N))``."""
    n = s.n_particles
    return RescaledState(np.concatenate([s.theta, (s.cloud / math.sqrt(n)).ravel()]))


def distance_to_minimiser(theta, cloud, theta_star, x_star):
    """Rescaled distance ``|z - z*|`` for one state or a stack of replicates."""
    theta = np.asarray(theta, dtype=float)
    cloud = np.asarray(cloud, dtype=float)
    n = cloud.shape[-2]
    d2 = np.sum((theta - theta_star) ** 2, axis=-1)
    d2 = d2 + np.sum((cloud - x_star) ** 2, axis=(-2, -1)) / n
    return np.sqrt(d2)


# -- vectorised kernel ---------------------------------------------------------


def _gradients(model, theta, cloud):
    th = theta[:, None, :]
    g_theta = np.asarray(model.grad_theta_U(th, cloud), dtype=float)
    g_cloud = np.asarray(model.grad_x_U(th, cloud), dtype=float)
    return g_theta, g_cloud


def _check_finite(theta, g_theta, g_cloud, step):
    if np.isfinite(g_theta).all() and np.isfinite(g_cloud).all():
        return
    bad_theta = ~np.isfinite(theta).all(axis=-1)
    if bad_theta.any():
        r = int(np.argmax(bad_theta))
        raise DivergedState(
            f"parameter became non-finite in replicate {r} at step {step}",
            particle=None,
            step=step,
            replicate=r,
        )
    bad = ~(np.isfinite(g_theta).all(axis=-1) & np.isfinite(g_cloud).all(axis=-1))
    r, i = (int(v) for v in np.argwhere(bad)[0])
    raise DivergedState(
        f"non-finite gradient at particle {i} of replicate {r}, step {step}",
        particle=i,
        step=step,
        replicate=r,
    )


def _theta_drift(g_theta):
    n = g_theta.shape[1]
    return np.sort(g_theta, axis=1).sum(axis=1) / n


def _advance(model, theta, cloud, gamma, xi_theta, xi_cloud, theta_noise, step):
    g_theta, g_cloud = _gradients(model, theta, cloud)
    _check_finite(theta, g_theta, g_cloud, step)
    n = cloud.shape[1]
    new_theta = theta - gamma * _theta_drift(g_theta)
    if theta_noise:
        new_theta += math.sqrt(2.0 * gamma / n) * xi_theta
    new_cloud = cloud - gamma * g_cloud + math.sqrt(2.0 * gamma) * xi_cloud
    return new_theta, new_cloud


def _theta_noise_flag(algorithm):
    if algorithm not in ALGORITHMS:
        raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    return algorithm == "ipla"


# -- single-state steps --------------------------------------------------------


def _draw_for_state(noise, s, d_theta, d_x):
    if isinstance(noise, tuple):
        xi_theta, xi_cloud = noise
        xi_theta = np.asarray(xi_theta, dtype=float).reshape(1, d_theta)
        xi_cloud = np.asarray(xi_cloud, dtype=float).reshape(1, s.n_particles, d_x)
        return xi_theta, xi_cloud
    if noise is None:
        noise = ZeroNoise(s.n_particles, d_theta, d_x)
    if noise.replicates != 1 or noise.n_particles != s.n_particles:
        raise ValueError("noise layout does not match the state")
    return noise.draw(s.step)


def _step(model, s, gamma, noise, theta_noise):
    if s.theta.shape[0] != model.d_theta or s.cloud.shape[1] != model.d_x:
        raise ValueError("state dimensions do not match the model")
    gamma = check_positive_float(gamma, "gamma")
    xi_theta, xi_cloud = _draw_for_state(noise, s, model.d_theta, model.d_x)
    theta, cloud = _advance(
        model, s.theta[None], s.cloud[None], gamma, xi_theta, xi_cloud, theta_noise, s.step
    )
    return SystemState(theta[0], cloud[0], s.step + 1, s.time + gamma)


def ipla_step(model, s, gamma, noise=None):
    """One interacting particle Langevin step from ``s``.

    ``noise`` is a single-replicate :class:`NoiseStreams` (read at
    ``s.step``), a :class:`ZeroNoise`, an explicit ``(xi_theta, xi_cloud)``
    pair, or ``None`` for a noiseless step.
    """
    return _step(model, s, gamma, noise, theta_noise=True)


def pgd_step(model, s, gamma, noise=None):
    """Same as :func:`ipla_step` without noise on the parameter."""
    return _step(model, s, gamma, noise, theta_noise=False)


# -- chain driver --------------------------------------------------------------


@dataclass(frozen=True)
class RecorderSpec:
    """What :func:`run_chain` keeps besides the final state.

    ``stride`` subsamples the parameter path (step 0 and the last step are
    always kept); ``at_steps`` adds extra steps to the record. From step
    ``burn_in`` on, per-replicate running sums of the parameter and of its
    squared distance to ``reference`` (default: the model's known minimiser)
    are accumulated at every step.
    """

    stride: int = 1
    burn_in: Optional[int] = None
    reference: Optional[np.ndarray] = None
    keep_cloud: bool = False
    at_steps: Optional[tuple] = None

    def __post_init__(self):
        check_positive_int(self.stride, "stride")
        if self.at_steps is not None:
            object.__setattr__(self, "at_steps", frozenset(int(k) for k in self.at_steps))
        if self.burn_in is not None:
            check_positive_int(self.burn_in, "burn_in", allow_zero=True)


@dataclass(frozen=True)
class StationaryStats:
    count: int
    mean: np.ndarray  # (M, d_theta), time average per replicate
    second: np.ndarray  # (M, d_theta), time average of theta**2
    sq_dist: Optional[np.ndarray]  # (M,), time average of |theta - ref|^2


@dataclass(frozen=True)
class RunRecord:
    algorithm: str
    config: RunConfig
    steps: np.ndarray  # (K,)
    theta_path: np.ndarray  # (K, M, d_theta)
    theta_initial: np.ndarray  # (M, d_theta)
    theta_final: np.ndarray  # (M, d_theta)
    cloud_mean: np.ndarray  # (M, d_x)
    cloud_var: np.ndarray  # (M, d_x)
    cloud_final: Optional[np.ndarray] = None
    stationary: Optional[StationaryStats] = None

    @property
    def times(self):
        return self.steps * self.config.gamma


def simulate(model, theta0, cloud0, gamma, n_steps, noise, algorithm="ipla", callback=None):
    """Advance a stack of replicates ``n_steps`` times; returns the final state.

    ``callback(step, theta, cloud)`` is invoked after the initial state and
    after every step with the post-step counter.
    """
    theta_noise = _theta_noise_flag(algorithm)
    theta, cloud = np.array(theta0, dtype=float), np.array(cloud0, dtype=float)
    if callback is not None:
        callback(0, theta, cloud)
    for n in range(n_steps):
        xi_theta, xi_cloud = noise.draw(n)
        theta, cloud = _advance(model, theta, cloud, gamma, xi_theta, xi_cloud, theta_noise, n)
        if callback is not None:
            callback(n + 1, theta, cloud)
    if not (np.isfinite(theta).all() and np.isfinite(cloud).all()):
        _check_finite(theta, *_gradients(model, theta, cloud), n_steps)
    return theta, cloud


def run_chain(model, cfg, recorder=None, algorithm="ipla", noise=None, particle_order=None):
    """Run ``cfg.replicates`` independent chains for ``cfg.n_steps`` steps.

    Replicate ``r`` uses noise streams ``r * (N + 1) .. r * (N + 1) + N``, so
    replicates never share randomness and the output is a pure function of
    the configuration.
    """
    cfg.validate_for(model)
    recorder = recorder or RecorderSpec()
    if noise is None:
        noise = cfg.streams(model, particle_order)
    theta0, cloud0 = cfg.init.sample(noise, model.d_theta, model.d_x)

    reference = recorder.reference
    if reference is None and model.analytic is not None:
        reference = model.analytic.theta_star
    burn_in = recorder.burn_in
    m = cfg.replicates
    acc = {"count": 0, "sum": np.zeros((m, model.d_theta)), "sq": np.zeros((m, model.d_theta)),
           "dist": np.zeros(m)}
    steps, path = [], []
    extra = recorder.at_steps or frozenset()

    def callback(step, theta, cloud):
        if step % recorder.stride == 0 or step == cfg.n_steps or step in extra:
            steps.append(step)
            path.append(theta.copy())
        if burn_in is not None and step >= burn_in:
            acc["count"] += 1
            acc["sum"] += theta
            acc["sq"] += theta * theta
            if reference is not None:
                acc["dist"] += np.sum((theta - reference) ** 2, axis=-1)

    theta, cloud = simulate(
        model, theta0, cloud0, cfg.gamma, cfg.n_steps, noise, algorithm, callback
    )

    stationary = None
    if burn_in is not None and acc["count"] > 0:
        c = acc["count"]
        stationary = StationaryStats(
            count=c,
            mean=acc["sum"] / c,
            second=acc["sq"] / c,
            sq_dist=acc["dist"] / c if reference is not None else None,
        )
    return RunRecord(
        algorithm=algorithm,
        config=cfg,
        steps=np.array(steps, dtype=np.int64),
        theta_path=np.array(path),
        theta_initial=theta0,
        theta_final=theta,
        cloud_mean=cloud.mean(axis=1),
        cloud_var=cloud.var(axis=1),
        cloud_final=cloud if recorder.keep_cloud else None,
        stationary=stationary,
    )


# -- coupled runs ----------------------------------------------------------------


def _check_grid(cfgs):
    cfgs = list(cfgs)
    if not cfgs:
        raise ValueError("empty configuration grid")
    first = cfgs[0]
    for cfg in cfgs[1:]:
        same = (
            cfg.n_particles == first.n_particles
            and cfg.seed == first.seed
            and cfg.init == first.init
            and cfg.replicates == first.replicates
        )
        if not same:
            raise ValueError("grid configurations must share N, seed, init and replicates")
        if not math.isclose(cfg.horizon, first.horizon, rel_tol=1e-9):
            raise ValueError("grid configurations must share the horizon n_steps * gamma")
    return cfgs


def coupled_step_size_run(model, cfg_grid, reference_gamma, noise=None, algorithm="ipla"):
    """Run one fine chain and several coarse chains on the same Brownian path.

    Every ``gamma`` in the grid must be an integer multiple ``k`` of
    ``reference_gamma``. A coarse step consumes the normalised sum of the
    ``k`` fine increments it spans, so all chains discretise the same path.
    Returns ``(theta_reference, {gamma: theta_final})`` at the common horizon.
    """
    cfgs = _check_grid(cfg_grid)
    for cfg in cfgs:
        cfg.validate_for(model)
    reference_gamma = check_positive_float(reference_gamma, "reference_gamma")
    info = model.analytic
    if info is not None:
        check_step_size(reference_gamma, info.mu, info.lipschitz_L, "reference_gamma")
    theta_noise = _theta_noise_flag(algorithm)

    ratios = []
    for cfg in cfgs:
        k = round(cfg.gamma / reference_gamma)
        if k < 1 or not math.isclose(k * reference_gamma, cfg.gamma, rel_tol=1e-9):
            raise GammaOutOfRange(
                f"gamma={cfg.gamma} is not an integer multiple of reference {reference_gamma}"
            )
        ratios.append(k)
    first = cfgs[0]
    n_fine = first.n_steps * ratios[0]

    if noise is None:
        noise = first.streams(model)
    theta0, cloud0 = first.init.sample(noise, model.d_theta, model.d_x)
    fine = (theta0.copy(), cloud0.copy())
    coarse = [(theta0.copy(), cloud0.copy()) for _ in cfgs]
    buffers = [None] * len(cfgs)

    for n in range(n_fine):
        xi_theta, xi_cloud = noise.draw(n)
        fine = _advance(model, *fine, reference_gamma, xi_theta, xi_cloud, theta_noise, n)
        for g, (cfg, k) in enumerate(zip(cfgs, ratios)):
            if buffers[g] is None:
                buffers[g] = (xi_theta.copy(), xi_cloud.copy())
            else:
                bt, bc = buffers[g]
                bt += xi_theta
                bc += xi_cloud
            if (n + 1) % k == 0:
                scale = 1.0 / math.sqrt(k)
                bt, bc = buffers[g]
                coarse[g] = _advance(
                    model, *coarse[g], cfg.gamma, bt * scale, bc * scale, theta_noise, (n + 1) // k - 1
                )
                buffers[g] = None
    return fine[0], {cfg.gamma: coarse[g][0] for g, cfg in enumerate(cfgs)}


@dataclass(frozen=True)
class ChaosRecord:
    """Distances between the particle system and its mean-field limit.

    ``sup_theta[r]`` is ``max_n |theta_n - theta_n^MF|`` for replicate ``r``;
    ``sup_joint`` adds the particle-averaged latent distance.
    """

    n_particles: int
    sup_theta: np.ndarray
    sup_joint: np.ndarray

    @property
    def mean(self):
        return float(self.sup_theta.mean())

    @property
    def se(self):
        m = self.sup_theta.size
        return float(self.sup_theta.std(ddof=1) / math.sqrt(m)) if m > 1 else float("nan")


def coupled_chaos_run(p, cfg, algorithm="ipla", noise=None):
    """Couple the particle system with the Gaussian model's mean-field limit.

    The mean-field parameter is integrated by Euler with the exact latent mean
    from :func:`gaussian_meanfield_reference`; mean-field particles reuse the
    Brownian increments of their particle-system twins.
    """
    if not isinstance(p, GaussianHierarchicalParams):
        raise UnsupportedModel(
            "the mean-field oracle is only available for the Gaussian hierarchical model"
        )
    model = make_gaussian_model(p)
    cfg.validate_for(model)
    theta_noise = _theta_noise_flag(algorithm)
    if noise is None:
        noise = cfg.streams(model)
    theta0, cloud0 = cfg.init.sample(noise, model.d_theta, model.d_x)
    m0 = np.broadcast_to(np.asarray(cfg.init.x_mean, dtype=float), (model.d_x,))
    times = cfg.gamma * np.arange(cfg.n_steps + 1)
    # latent mean of the limit law at every grid time, per replicate
    means = np.stack(
        [gaussian_meanfield_reference(p, th, m0, times)[1] for th in theta0], axis=1
    )  # (n_steps + 1, M, d_x)

    gamma = cfg.gamma
    theta, cloud = theta0.copy(), cloud0.copy()
    theta_mf, cloud_mf = theta0.copy(), cloud0.copy()
    sup_theta = np.zeros(cfg.replicates)
    sup_joint = np.zeros(cfg.replicates)
    for n in range(cfg.n_steps):
        xi_theta, xi_cloud = noise.draw(n)
        theta, cloud = _advance(model, theta, cloud, gamma, xi_theta, xi_cloud, theta_noise, n)
        # grad_theta U is affine in x, so its mean-field average is its value at the mean
        drift_mf = model.grad_theta_U(theta_mf, means[n])
        g_mf = model.grad_x_U(theta_mf[:, None, :], cloud_mf)
        theta_mf = theta_mf - gamma * drift_mf
        cloud_mf = cloud_mf - gamma * g_mf + math.sqrt(2.0 * gamma) * xi_cloud
        d_theta = np.linalg.norm(theta - theta_mf, axis=-1)
        d_x = np.linalg.norm(cloud - cloud_mf, axis=-1).mean(axis=-1)
        np.maximum(sup_theta, d_theta, out=sup_theta)
        np.maximum(sup_joint, d_theta + d_x, out=sup_joint)
    return ChaosRecord(cfg.n_particles, sup_theta, sup_joint)
