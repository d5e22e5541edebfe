"""Experiment orchestration behind the command-line front end.

Every function takes a parsed :class:`~ipla_lab.config.ExperimentConfig` and
its built model and returns an :class:`ExperimentResult`: tidy tables keyed
by file name, human-readable report lines, and a pass flag. Nothing here
touches the file system, so results can be inspected directly in tests.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .diagnostics import (
    BoundInputs,
    calibrate_c1,
    discretization_scale,
    fit_exponential_rate,
    fit_rate,
    pre_floor_prefix,
    rmse_with_se,
    theorem1_bound,
)
from .exceptions import ConfigError, DomainError, UnsupportedModel
from .model import check_gradients
from .samplers import RecorderSpec, coupled_chaos_run, distance_to_minimiser, run_chain
from .toy_models import GaussianHierarchicalParams

RATE_HEADER = ("kind", "statistic", "slope", "intercept", "r2", "n_points")


@dataclass
class ExperimentResult:
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    lines: list = field(default_factory=list)
    notes: list = field(default_factory=list)  # warnings for stderr
    ok: bool = True
    data: dict = field(default_factory=dict)


def parallel_map(fn, items, threads=1):
    """Ordered map, optionally on a thread pool; output order never depends on scheduling."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def _fmt(v):
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    return "[" + ", ".join(f"{x:.6g}" for x in arr) + "]"


def _reference(built):
    info = built.spec.analytic
    return None if info is None else info.theta_star


def _mu(cfg, built):
    mu = cfg.bound.get("mu")
    if mu is None and built.spec.analytic is not None:
        mu = built.spec.analytic.mu
    return mu


def _lipschitz(built):
    info = built.spec.analytic
    return None if info is None else info.lipschitz_L


def initial_distance(cfg, built, run=None):
    """RMS over replicates of the rescaled distance from the initial state to the minimiser.

    Uses ``bound.z0_dist`` when configured; ``None`` when the latent
    minimiser is unknown.
    """
    if "z0_dist" in cfg.bound:
        return float(cfg.bound["z0_dist"])
    info = built.spec.analytic
    if info is None or info.x_star is None:
        return None
    run = run or cfg.run
    theta0, cloud0 = run.init.sample(run.streams(built.spec), built.spec.d_theta, built.spec.d_x)
    d = distance_to_minimiser(theta0, cloud0, info.theta_star, info.x_star)
    return float(np.sqrt(np.mean(d * d)))


def bound_terms(cfg, built, run=None, C1=None):
    """Error bound at the run's final iterate, or ``None`` when an input is unknown."""
    run = run or cfg.run
    mu = _mu(cfg, built)
    if mu is None:
        return None
    z0 = initial_distance(cfg, built, run)
    if z0 is None:
        return None
    C1 = cfg.bound.get("C1") if C1 is None else C1
    spec = built.spec
    return theorem1_bound(
        BoundInputs(mu, spec.d_theta, spec.d_x, run.n_particles, run.n_steps, run.gamma, z0,
                    C1=C1, lipschitz_L=_lipschitz(built))
    )


def _default_stride(cfg):
    if cfg.record_stride is not None:
        return cfg.record_stride
    return max(1, cfg.run.n_steps // 1000)


# -- run -------------------------------------------------------------------------


def run_experiment(cfg, built, threads=1):
    spec = built.spec
    ref = _reference(built)
    stride = _default_stride(cfg)
    records = parallel_map(
        lambda alg: run_chain(spec, cfg.run, RecorderSpec(stride=stride), algorithm=alg),
        cfg.algorithms,
        threads,
    )
    res = ExperimentResult()
    traj, summary = [], []
    terms = bound_terms(cfg, built)
    for alg, rec in zip(cfg.algorithms, records):
        for k, step in enumerate(rec.steps):
            t = float(step) * cfg.run.gamma
            for r in range(cfg.run.replicates):
                for c in range(spec.d_theta):
                    traj.append((alg, int(step), t, r, c, float(rec.theta_path[k, r, c])))
        for r in range(cfg.run.replicates):
            for c in range(spec.d_theta):
                summary.append((alg, r, "theta_initial", c, float(rec.theta_initial[r, c])))
                summary.append((alg, r, "theta_final", c, float(rec.theta_final[r, c])))
        mean = rec.theta_final.mean(axis=0)
        m = cfg.run.replicates
        se = rec.theta_final.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.full_like(mean, np.nan)
        for c in range(spec.d_theta):
            summary.append((alg, "all", "theta_final_mean", c, float(mean[c])))
            summary.append((alg, "all", "theta_final_se", c, float(se[c])))
        res.lines.append(f"{alg}: final theta (replicate mean) = {_fmt(mean)}")
        if ref is not None:
            est = rmse_with_se(np.sum((rec.theta_final - ref) ** 2, axis=-1))
            summary.append((alg, "all", "rmse", "", est.value))
            summary.append((alg, "all", "rmse_se", "", est.se))
            res.lines.append(f"{alg}: RMSE to theta* = {est.value:.6g} (SE {est.se:.3g})")
            res.data.setdefault("rmse", {})[alg] = est
        if terms is not None:
            for name in ("term_concentration", "term_ergodic", "term_discretization", "total"):
                summary.append((alg, "all", f"bound_{name}", "", getattr(terms, name)))
        res.data.setdefault("records", {})[alg] = rec
    if terms is not None:
        disc = "n/a" if terms.term_discretization is None else f"{terms.term_discretization:.6g}"
        res.lines.append(
            f"bound: concentration {terms.term_concentration:.6g} + ergodic "
            f"{terms.term_ergodic:.6g} + discretization {disc} = {terms.total:.6g}"
        )
        res.data["bound"] = terms
    meta = [
        ("", "all", "library_version", "", __version__),
        ("", "all", "seed", "", cfg.run.seed),
        ("", "all", "n_particles", "", cfg.run.n_particles),
        ("", "all", "gamma", "", cfg.run.gamma),
        ("", "all", "n_steps", "", cfg.run.n_steps),
        ("", "all", "replicates", "", cfg.run.replicates),
    ]
    res.tables["run.csv"] = (("algorithm", "step", "time", "replicate", "component", "theta"), traj)
    res.tables["summary.csv"] = (
        ("algorithm", "replicate", "statistic", "component", "value"), meta + summary
    )
    return res


# -- sweeps ----------------------------------------------------------------------


def _require_reference(built, what):
    ref = _reference(built)
    if ref is None:
        raise UnsupportedModel(f"{what} needs a model with a known minimiser")
    return ref


def _fit_row(kind, statistic, fit, n):
    return (kind, statistic, fit.slope, fit.intercept, fit.r2, n)


def sweep_n_particles(cfg, built, threads=1):
    spec = built.spec
    ref = _require_reference(built, "the particle-number sweep")
    burn_in = int(cfg.sweep.burn_in_fraction * cfg.run.n_steps)
    mu = _mu(cfg, built)
    alg = cfg.algorithms[0]

    def one(n):
        run = replace(cfg.run, n_particles=int(n))
        rec = run_chain(
            spec, run, RecorderSpec(stride=max(1, run.n_steps), burn_in=burn_in, reference=ref),
            algorithm=alg,
        )
        return rec.stationary.sq_dist

    sq = parallel_map(one, cfg.sweep.values, threads)
    res = ExperimentResult()
    rows, points = [], []
    for n, e in zip(cfg.sweep.values, sq):
        est = rmse_with_se(e)
        for r, v in enumerate(e):
            rows.append(("n_particles", int(n), r, "stationary_sq_error", float(v)))
        rows.append(("n_particles", int(n), "all", "rmse", est.value))
        rows.append(("n_particles", int(n), "all", "rmse_se", est.se))
        line = f"N={int(n)}: stationary RMSE {est.value:.6g} (SE {est.se:.3g})"
        if mu is not None:
            conc = math.sqrt(2.0 * spec.d_theta / (mu * n))
            rows.append(("n_particles", int(n), "all", "bound_concentration", conc))
            line += f", concentration term {conc:.6g}"
        res.lines.append(line)
        points.append((float(n), est.value))
    rates = []
    if len(points) >= 3:
        fit = fit_rate(points)
        rates.append(_fit_row("n_particles", "log_rmse_vs_log_n", fit, len(points)))
        res.lines.append(f"fitted slope {fit.slope:.4f} (r2 {fit.r2:.4f})")
        res.data["fit"] = fit
    else:
        res.notes.append("fewer than 3 sweep points: no slope fitted")
    res.data["points"] = points
    res.tables["sweep.csv"] = (("kind", "scale", "replicate", "statistic", "value"), rows)
    res.tables["rates.csv"] = (RATE_HEADER, rates)
    return res


def _gamma_grid(run, gammas):
    horizon = run.horizon
    grid = []
    for g in gammas:
        n = round(horizon / g)
        if n < 1 or not math.isclose(n * g, horizon, rel_tol=1e-9):
            raise ConfigError(
                f"field 'sweep.values': gamma={g} does not divide the horizon {horizon}",
                field="sweep.values",
            )
        grid.append(replace(run, gamma=float(g), n_steps=int(n)))
    return grid


def sweep_gamma(cfg, built, threads=1):
    spec = built.spec
    if cfg.sweep.reference_gamma is None:
        raise ConfigError("field 'sweep.reference_gamma': required for a gamma sweep",
                          field="sweep.reference_gamma")
    grid = _gamma_grid(cfg.run, cfg.sweep.values)
    cal = calibrate_c1(spec, grid, cfg.sweep.reference_gamma, algorithm=cfg.algorithms[0])
    res = ExperimentResult()
    rows = []
    n = cfg.run.n_particles
    for g, e, se, c in zip(cal.gammas, cal.errors, cal.standard_errors, cal.implied_C1):
        bound = cal.C1 * discretization_scale(spec.d_theta, spec.d_x, n, g)
        rows += [
            ("gamma", float(g), "all", "strong_error", float(e)),
            ("gamma", float(g), "all", "strong_error_se", float(se)),
            ("gamma", float(g), "all", "implied_C1", float(c)),
            ("gamma", float(g), "all", "bound_discretization", bound),
        ]
        res.lines.append(f"gamma={g:g}: strong error {e:.6g} (SE {se:.3g}), implied C1 {c:.6g}")
    rows.append(("gamma", "all", "all", "C1", cal.C1))
    res.lines.append(f"calibrated C1 = {cal.C1:.6g}")
    rates = []
    if len(cal.gammas) >= 3:
        try:
            fit = cal.fit()
        except DomainError as exc:
            res.notes.append(f"no slope fitted: {exc}")
        else:
            rates.append(_fit_row("gamma", "log_error_vs_log_gamma", fit, len(cal.gammas)))
            res.lines.append(f"fitted slope {fit.slope:.4f} (r2 {fit.r2:.4f})")
            res.data["fit"] = fit
    else:
        res.notes.append("fewer than 3 step sizes: no slope fitted")
    res.data["calibration"] = cal
    res.tables["sweep.csv"] = (("kind", "scale", "replicate", "statistic", "value"), rows)
    res.tables["rates.csv"] = (RATE_HEADER, rates)
    return res


def sweep_iterations(cfg, built, threads=1):
    spec = built.spec
    ref = _require_reference(built, "the iteration sweep")
    values = [int(v) for v in cfg.sweep.values]
    run = replace(cfg.run, n_steps=max(values))
    rec = run_chain(
        spec, run, RecorderSpec(stride=max(1, run.n_steps), at_steps=values),
        algorithm=cfg.algorithms[0],
    )
    index = {int(s): k for k, s in enumerate(rec.steps)}
    res = ExperimentResult()
    rows, times, errors = [], [], []
    for v in values:
        theta = rec.theta_path[index[v]]
        est = rmse_with_se(np.sum((theta - ref) ** 2, axis=-1))
        t = v * run.gamma
        rows.append(("iterations", v, "all", "time", t))
        rows.append(("iterations", v, "all", "rmse", est.value))
        rows.append(("iterations", v, "all", "rmse_se", est.se))
        times.append(t)
        errors.append(est.value)

    mu = _mu(cfg, built)
    rates = []
    floor = None
    if mu is not None:
        floor = math.sqrt(2.0 * spec.d_theta / (run.n_particles * mu))
        if cfg.bound.get("C1") is not None:
            floor += cfg.bound["C1"] * discretization_scale(
                spec.d_theta, spec.d_x, run.n_particles, run.gamma
            )
        rows.append(("iterations", "all", "all", "error_floor", floor))
        k = pre_floor_prefix(errors, floor)
    else:
        res.notes.append("mu unknown: fitting every sweep point")
        k = len(errors)
    if k >= 3:
        try:
            fit = fit_exponential_rate(times[:k], errors[:k])
        except DomainError as exc:
            res.notes.append(f"no slope fitted: {exc}")
        else:
            rates.append(_fit_row("iterations", "log_rmse_vs_time", fit, k))
            line = f"decay rate {fit.slope:.4f} over {k} pre-floor points (r2 {fit.r2:.4f})"
            if mu is not None:
                line += f"; -mu = {-mu:.4f}"
            res.lines.append(line)
            res.data["fit"] = fit
    else:
        res.notes.append(f"only {k} points above the error floor: no slope fitted")
    res.data.update(times=times, errors=errors, floor=floor, prefix=k)
    res.tables["sweep.csv"] = (("kind", "scale", "replicate", "statistic", "value"), rows)
    res.tables["rates.csv"] = (RATE_HEADER, rates)
    return res


def sweep_experiment(cfg, built, threads=1):
    kind = cfg.sweep.kind
    if kind == "n_particles":
        return sweep_n_particles(cfg, built, threads)
    if kind == "gamma":
        return sweep_gamma(cfg, built, threads)
    if kind == "iterations":
        return sweep_iterations(cfg, built, threads)
    raise ConfigError("field 'sweep.kind': the sweep command needs a sweep", field="sweep.kind")


# -- compare ---------------------------------------------------------------------


def _mean_se(theta):
    m = theta.shape[0]
    mean = theta.mean(axis=0)
    se = theta.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.full_like(mean, np.nan)
    return mean, se


def compare_experiment(cfg, built, threads=1):
    if "algorithm" in cfg.raw and cfg.algorithm != "both":
        raise ConfigError("field 'algorithm': compare needs 'both'", field="algorithm")
    spec = built.spec
    ref = _reference(built)
    stride = _default_stride(cfg)
    jobs = [("ipla", cfg.run), ("pgd", cfg.run)]
    want_ref = cfg.compare.get("reference_run", False)
    if want_ref:
        jobs.append(("reference", replace(
            cfg.run, gamma=cfg.run.gamma / 10, n_steps=10 * cfg.run.n_steps,
            n_particles=4 * cfg.run.n_particles,
        )))

    def one(job):
        name, run = job
        alg = "ipla" if name == "reference" else name
        return run_chain(spec, run, RecorderSpec(stride=stride if name != "reference" else
                                                 max(1, run.n_steps)), algorithm=alg)

    recs = dict(zip([j[0] for j in jobs], parallel_map(one, jobs, threads)))
    ip, pg = recs["ipla"], recs["pgd"]
    res = ExperimentResult()
    rows = []
    for k, step in enumerate(ip.steps):
        t = float(step) * cfg.run.gamma
        gap = ip.theta_path[k] - pg.theta_path[k]
        rows.append(("trajectory", "both", int(step), t, "theta_gap_rms",
                     float(np.sqrt(np.mean(np.sum(gap * gap, axis=-1))))))
        if ref is not None:
            for name, rec in (("ipla", ip), ("pgd", pg)):
                est = rmse_with_se(np.sum((rec.theta_path[k] - ref) ** 2, axis=-1))
                rows.append(("trajectory", name, int(step), t, "rmse", est.value))
                rows.append(("trajectory", name, int(step), t, "rmse_se", est.se))

    finals = {}
    for name, rec in recs.items():
        mean, se = _mean_se(rec.theta_final)
        finals[name] = (mean, se)
        step = int(rec.config.n_steps)
        for c in range(spec.d_theta):
            rows.append(("final", name, step, rec.config.horizon, f"theta_mean_{c}", float(mean[c])))
            rows.append(("final", name, step, rec.config.horizon, f"theta_se_{c}", float(se[c])))
        res.lines.append(f"{name}: final theta {_fmt(mean)} (SE {_fmt(se)})")
    if ref is not None:
        for name, rec in (("ipla", ip), ("pgd", pg)):
            est = rmse_with_se(np.sum((rec.theta_final - ref) ** 2, axis=-1))
            res.lines.append(f"{name}: final RMSE to theta* {est.value:.6g} (SE {est.se:.3g})")
    if want_ref:
        rmean, rse = finals["reference"]
        for name in ("ipla", "pgd"):
            mean, se = finals[name]
            tol = 3.0 * np.sqrt(se**2 + rse**2)
            dev = np.abs(mean - rmean)
            agree = bool(np.all(dev <= tol))
            res.ok &= agree
            rows.append(("check", name, "", "", "max_deviation_over_tolerance",
                         float(np.max(dev / tol))))
            res.lines.append(
                f"{name} vs reference: |diff| {_fmt(dev)} <= 3 SE {_fmt(tol)}: "
                f"{'PASS' if agree else 'FAIL'}"
            )
    res.data["records"] = recs
    res.data["finals"] = finals
    res.tables["compare.csv"] = (("section", "algorithm", "step", "time", "statistic", "value"), rows)
    return res


# -- chaos -----------------------------------------------------------------------


def chaos_experiment(cfg, built, threads=1):
    if not isinstance(built.params, GaussianHierarchicalParams):
        raise UnsupportedModel("the chaos experiment needs the Gaussian hierarchical model")
    if cfg.sweep.kind == "n_particles":
        ns = [int(v) for v in cfg.sweep.values]
    elif cfg.sweep.kind == "none":
        ns = [cfg.run.n_particles]
    else:
        raise ConfigError("field 'sweep.kind': chaos sweeps over n_particles", field="sweep.kind")

    jobs = [(alg, n) for alg in cfg.algorithms for n in ns]
    recs = parallel_map(
        lambda job: coupled_chaos_run(
            built.params, replace(cfg.run, n_particles=job[1]), algorithm=job[0]
        ),
        jobs,
        threads,
    )
    res = ExperimentResult()
    rows = []
    by_alg = {}
    for (alg, n), rec in zip(jobs, recs):
        for r in range(rec.sup_theta.size):
            rows.append((alg, n, r, "sup_theta", float(rec.sup_theta[r])))
            rows.append((alg, n, r, "sup_joint", float(rec.sup_joint[r])))
        rows.append((alg, n, "all", "mean_sup_theta", rec.mean))
        rows.append((alg, n, "all", "se_sup_theta", rec.se))
        rows.append((alg, n, "all", "mean_sup_joint", float(rec.sup_joint.mean())))
        res.lines.append(f"{alg} N={n}: mean sup |theta - theta_MF| = {rec.mean:.6g} (SE {rec.se:.3g})")
        by_alg.setdefault(alg, []).append((float(n), rec.mean))
    fits = {}
    for alg, points in by_alg.items():
        if len(points) < 2:
            res.notes.append(f"{alg}: single N, no slope fitted")
            continue
        if len(points) < 3:
            res.notes.append(f"{alg}: fewer than 3 values of N, no slope fitted")
            continue
        try:
            fit = fit_rate(points)
        except DomainError as exc:
            res.notes.append(f"{alg}: no slope fitted ({exc})")
            continue
        fits[alg] = fit
        rows.append((alg, "all", "all", "slope", fit.slope))
        rows.append((alg, "all", "all", "intercept", fit.intercept))
        rows.append((alg, "all", "all", "r2", fit.r2))
        res.lines.append(f"{alg}: fitted slope {fit.slope:.4f} (r2 {fit.r2:.4f})")
    res.data.update(records=dict(zip(jobs, recs)), fits=fits)
    res.tables["chaos.csv"] = (("algorithm", "scale", "replicate", "statistic", "value"), rows)
    return res


# -- gradcheck -------------------------------------------------------------------


def gradcheck_experiment(cfg, built, threads=1):
    spec = built.spec
    opts = cfg.gradcheck
    points = opts.get("points", 100)
    tol = opts.get("tol", 1e-5)
    scale = opts.get("scale", 1.0)
    h = opts.get("h")
    rng = np.random.default_rng(cfg.run.seed)
    worst = (-1.0, None, None, None, None)
    for k in range(points):
        theta = scale * rng.standard_normal(spec.d_theta)
        x = scale * rng.standard_normal(spec.d_x)
        rep = check_gradients(spec, theta, x, h=h)
        if rep.max_error > worst[0]:
            worst = (rep.max_error, k, rep.worst_block, theta, x)
    err, k, block, theta, x = worst
    res = ExperimentResult(ok=err < tol)
    res.lines.append(
        f"gradcheck {spec.name}: {points} points, max relative error {err:.3e} "
        f"(tol {tol:g}): {'PASS' if res.ok else 'FAIL'}"
    )
    if not res.ok:
        res.lines.append(f"worst point #{k}: block {block}, theta={_fmt(theta)}, x={_fmt(x)}")
    res.data.update(max_error=err, worst_point=k, worst_block=block)
    return res


# -- bound -----------------------------------------------------------------------


def bound_experiment(cfg, built, threads=1):
    spec = built.spec
    if _mu(cfg, built) is None:
        raise ConfigError("field 'bound.mu': required for a model without a known mu",
                          field="bound.mu")
    if initial_distance(cfg, built) is None:
        raise ConfigError("field 'bound.z0_dist': required when the minimiser is unknown",
                          field="bound.z0_dist")
    res = ExperimentResult()
    rows = []
    C1 = cfg.bound.get("C1")
    calib = cfg.bound.get("calibrate")
    if calib:
        base = replace(
            cfg.run,
            n_particles=calib.get("n_particles", cfg.run.n_particles),
            replicates=calib.get("replicates", max(cfg.run.replicates, 2)),
        )
        horizon = calib.get("horizon", 1.0)
        grid = _gamma_grid(replace(base, gamma=calib["gammas"][0],
                                   n_steps=max(1, round(horizon / calib["gammas"][0]))),
                           calib["gammas"])
        cal = calibrate_c1(spec, grid, calib["reference_gamma"], algorithm=cfg.algorithms[0])
        for g, e, c in zip(cal.gammas, cal.errors, cal.implied_C1):
            rows.append(("strong_error", float(g), float(e)))
            rows.append(("implied_C1", float(g), float(c)))
        C1 = cal.C1
        res.lines.append(f"calibrated C1 = {C1:.6g} over gammas {_fmt(cal.gammas)}")
        res.data["calibration"] = cal
    terms = bound_terms(cfg, built, C1=C1)
    rows += [
        ("term_concentration", "", terms.term_concentration),
        ("term_ergodic", "", terms.term_ergodic),
        ("term_discretization", "", terms.term_discretization),
        ("total", "", terms.total),
        ("C1", "", C1),
    ]
    disc = "n/a (no C1)" if terms.term_discretization is None else f"{terms.term_discretization:.6g}"
    res.lines.append(
        f"N={cfg.run.n_particles} gamma={cfg.run.gamma:g} n={cfg.run.n_steps}: concentration "
        f"{terms.term_concentration:.6g}, ergodic {terms.term_ergodic:.6g}, discretization {disc}, "
        f"total {terms.total:.6g}"
    )
    res.data["bound"] = terms
    res.tables["bound.csv"] = (("statistic", "scale", "value"), rows)
    return res


COMMANDS = {
    "run": run_experiment,
    "sweep": sweep_experiment,
    "compare": compare_experiment,
    "chaos": chaos_experiment,
    "gradcheck": gradcheck_experiment,
    "bound": bound_experiment,
}
