"""``ipla-lab`` command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 configuration error,
3 numerical divergence.
"""

import argparse
import os
import sys
import time

from . import __version__
from .config import EXPERIMENTS, build_model, load_config
from .exceptions import ConfigError, DivergedState, GammaOutOfRange, UnsupportedModel
from .experiments import COMMANDS
from .io import write_csv

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

_PREAMBLE = """set datafile separator ','
set key outside
set grid
"""

# each script reads the CSVs the command writes; row 1 is the schema comment
_GNUPLOT = {
    "run": """set xlabel 'time n*gamma'
set ylabel 'theta'
plot 'run.csv' skip 2 using 3:6 with dots title 'theta (all replicates)'
""",
    "sweep": """set logscale xy
set xlabel 'scale'
set ylabel 'error'
plot 'sweep.csv' skip 2 using 2:((strcol(4) eq 'rmse' || strcol(4) eq 'strong_error') ? $5 : NaN) \\
     with linespoints title 'measured'
""",
    "compare": """set xlabel 'time n*gamma'
set ylabel 'RMSE to theta*'
plot 'compare.csv' skip 2 using 4:((strcol(1) eq 'trajectory' && strcol(2) eq 'ipla' && strcol(5) eq 'rmse') ? $6 : NaN) with lines title 'IPLA', \\
     '' skip 2 using 4:((strcol(1) eq 'trajectory' && strcol(2) eq 'pgd' && strcol(5) eq 'rmse') ? $6 : NaN) with lines title 'PGD', \\
     '' skip 2 using 4:((strcol(5) eq 'theta_gap_rms') ? $6 : NaN) with lines title 'theta gap'
""",
    "chaos": """set logscale xy
set xlabel 'N'
set ylabel 'mean sup |theta - theta_MF|'
plot 'chaos.csv' skip 2 using 2:((strcol(4) eq 'mean_sup_theta') ? $5 : NaN) with linespoints title 'measured'
""",
    "bound": """set style data histograms
set style fill solid
plot 'bound.csv' skip 2 using 3:xtic(1) title 'bound terms'
""",
}


def build_parser():
    p = argparse.ArgumentParser(
        prog="ipla-lab",
        description="Interacting particle Langevin experiments for maximum marginal likelihood.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--output-dir", help="override output_dir from the config")
    p.add_argument("--seed", type=_u64, help="override run.seed (unsigned 64-bit)")
    p.add_argument("--threads", type=_positive, default=None,
                   help="worker threads for sweep points (default: $IPLA_LAB_THREADS or 1)")
    p.add_argument("--gnuplot", action="store_true", help="also write plot.gp")
    return p


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def resolve_threads(arg, environ=None):
    if arg is not None:
        return arg
    env = (environ if environ is not None else os.environ).get("IPLA_LAB_THREADS")
    if not env:
        return 1
    try:
        return _positive(env)
    except (ValueError, argparse.ArgumentTypeError):
        raise ConfigError(f"IPLA_LAB_THREADS must be a positive integer, got {env!r}") from None


def _write_outputs(cfg, command, result, gnuplot):
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.echo(), encoding="utf-8")
    written = []
    for name, (header, rows) in result.tables.items():
        written.append(write_csv(out / name, header, rows))
    if gnuplot and command in _GNUPLOT:
        (out / "plot.gp").write_text(_PREAMBLE + _GNUPLOT[command], encoding="utf-8")
        written.append(out / "plot.gp")
    return written


def main(argv=None):
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        threads = resolve_threads(args.threads)
        cfg = load_config(args.config, {"seed": args.seed, "output_dir": args.output_dir})
        if cfg.experiment is not None and cfg.experiment != args.command:
            raise ConfigError(
                f"field 'experiment': config is for '{cfg.experiment}', not '{args.command}'",
                field="experiment",
            )
        built = build_model(cfg)
        result = COMMANDS[args.command](cfg, built, threads)
        written = _write_outputs(cfg, args.command, result, args.gnuplot)
    except (ConfigError, UnsupportedModel, GammaOutOfRange) as exc:
        print(f"ipla-lab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedState as exc:
        print(f"ipla-lab: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    for line in result.lines:
        print(line)
    for note in result.notes:
        print(f"ipla-lab: note: {note}", file=sys.stderr)
    for path in written:
        print(f"wrote {path}")
    # timing goes to stderr so stdout and files stay reproducible
    print(f"ipla-lab: wall-clock {time.perf_counter() - start:.3f} s", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
