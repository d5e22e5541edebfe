"""JSON experiment configuration: parsing, validation and model construction."""

import copy
import importlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .exceptions import ConfigError, GammaOutOfRange
from .model import ModelSpec
from .samplers import InitSpec, RunConfig
from .toy_models import (
    GaussianHierarchicalParams,
    load_logistic_csv,
    make_gaussian_model,
    make_logistic_model,
    synthesize_logistic,
)

EXPERIMENTS = ("run", "sweep", "compare", "chaos", "gradcheck", "bound")


def load_schema():
    text = resources.files("ipla_lab").joinpath("config_schema.json").read_text("utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class SweepSpec:
    kind: str = "none"
    values: tuple = ()
    burn_in_fraction: float = 0.1
    reference_gamma: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    model: dict
    run: RunConfig
    record_stride: Optional[int]
    sweep: SweepSpec
    algorithm: str
    output_dir: Path
    experiment: Optional[str]
    gradcheck: dict = field(default_factory=dict)
    bound: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def algorithms(self):
        return ("ipla", "pgd") if self.algorithm == "both" else (self.algorithm,)

    def echo(self):
        """Canonical JSON of the effective configuration.

        The seed override is applied; ``output_dir`` is left out so that the
        echo does not depend on where the outputs were written.
        """
        raw = {k: v for k, v in self.raw.items() if k != "output_dir"}
        return json.dumps(raw, indent=2, sort_keys=True) + "\n"

    def with_run(self, **changes):
        return replace(self, run=replace(self.run, **changes))


def _field_path(error):
    parts = [str(p) for p in error.absolute_path]
    return ".".join(parts) if parts else "<root>"


def _best_error(errors):
    # prefer the deepest error; oneOf branches otherwise hide the real culprit
    return max(errors, key=lambda e: (len(e.absolute_path), -len(e.context or [])))


def _locate(text, key):
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None


def parse_config(text, base_dir=".", overrides=None):
    """Validate ``text`` against the schema and build an :class:`ExperimentConfig`.

    ``overrides`` maps ``seed`` / ``output_dir`` to command-line values.
    Raises :class:`ConfigError` naming the offending field.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}", line=exc.lineno) from None

    validator = jsonschema.Draft202012Validator(load_schema())
    errors = list(validator.iter_errors(raw))
    if errors:
        err = _best_error(errors)
        if err.context:
            err = _best_error(err.context)
        path = _field_path(err)
        last = str(err.absolute_path[-1]) if err.absolute_path else None
        line = _locate(text, last) if last else None
        where = f"line {line}, " if line else ""
        raise ConfigError(f"{where}field '{path}': {err.message}", field=path, line=line)

    raw = copy.deepcopy(raw)
    overrides = overrides or {}
    if overrides.get("seed") is not None:
        raw["run"]["seed"] = int(overrides["seed"])
    if overrides.get("output_dir") is not None:
        raw["output_dir"] = str(overrides["output_dir"])

    run = raw["run"]
    init = run.get("init", {})
    try:
        init_spec = InitSpec(
            kind=init.get("kind", "point"),
            theta_mean=init.get("theta_mean", 0.0),
            theta_scale=init.get("theta_scale", 0.0),
            x_mean=init.get("x_mean", 0.0),
            x_scale=init.get("x_scale", 0.0),
        )
        run_cfg = RunConfig(
            n_particles=run["n_particles"],
            gamma=float(run["gamma"]),
            n_steps=run["n_steps"],
            seed=run.get("seed", 0),
            init=init_spec,
            replicates=run.get("replicates", 1),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field 'run': {exc}", field="run") from None

    sweep_raw = raw.get("sweep", {"kind": "none"})
    values = tuple(sweep_raw.get("values", ()))
    if sweep_raw["kind"] != "none":
        if not values:
            raise ConfigError("field 'sweep.values': required for this sweep kind", field="sweep.values")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError("field 'sweep.values': must be strictly increasing", field="sweep.values")
        if sweep_raw["kind"] in ("n_particles", "iterations") and any(
            float(v) != int(v) for v in values
        ):
            raise ConfigError("field 'sweep.values': must be integers", field="sweep.values")
    sweep = SweepSpec(
        kind=sweep_raw["kind"],
        values=values,
        burn_in_fraction=sweep_raw.get("burn_in_fraction", 0.1),
        reference_gamma=sweep_raw.get("reference_gamma"),
    )
    calib = raw.get("bound", {}).get("calibrate")
    if calib:
        g = calib["gammas"]
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ConfigError("field 'bound.calibrate.gammas': must be strictly increasing",
                              field="bound.calibrate.gammas")

    return ExperimentConfig(
        raw=raw,
        model=raw["model"],
        run=run_cfg,
        record_stride=run.get("record_stride"),
        sweep=sweep,
        algorithm=raw.get("algorithm", "ipla"),
        output_dir=Path(raw.get("output_dir", "ipla-out")),
        experiment=raw.get("experiment"),
        gradcheck=raw.get("gradcheck", {}),
        bound=raw.get("bound", {}),
        compare=raw.get("compare", {}),
        base_dir=Path(base_dir),
    )


def load_config(path, overrides=None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent, overrides=overrides)


@dataclass(frozen=True)
class BuiltModel:
    spec: ModelSpec
    params: object = None  # GaussianHierarchicalParams / LogisticRegressionParams
    extras: dict = field(default_factory=dict)


def build_model(cfg):
    """Instantiate the configured model; the run's step size is checked against it."""
    m = cfg.model
    kind = m["kind"]
    try:
        if kind == "gaussian":
            params = GaussianHierarchicalParams(
                m["y"], m.get("sigma_lat", 1.0), m.get("sigma_obs", 1.0)
            )
            built = BuiltModel(make_gaussian_model(params), params)
        elif kind == "logistic":
            sigma = m.get("sigma", 1.0)
            if "dataset" in m:
                data_path = Path(m["dataset"])
                if not data_path.is_absolute():
                    data_path = cfg.base_dir / data_path
                params = load_logistic_csv(data_path, sigma)
                built = BuiltModel(make_logistic_model(params), params)
            else:
                s = m["synth"]
                params, weights = synthesize_logistic(
                    s["d_x"], s["d_y"], s.get("theta_gen", 0.0), sigma, s.get("seed", 0)
                )
                extras = {"theta_gen": float(s.get("theta_gen", 0.0)), "synth_seed": s.get("seed", 0)}
                built = BuiltModel(make_logistic_model(params), params, extras)
        else:
            module_name, attr = m["factory"].split(":")
            factory = getattr(importlib.import_module(module_name), attr)
            spec = factory(**m.get("kwargs", {}))
            if not isinstance(spec, ModelSpec):
                raise ConfigError(f"field 'model.factory': {m['factory']} did not return a ModelSpec",
                                  field="model.factory")
            built = BuiltModel(spec)
    except ConfigError:
        raise
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"field 'model.factory': {exc}", field="model.factory") from None
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"field 'model': {exc}", field="model") from None

    try:
        cfg.run.validate_for(built.spec)
    except GammaOutOfRange as exc:
        raise ConfigError(f"field 'run.gamma': {exc}", field="run.gamma") from None
    return built
