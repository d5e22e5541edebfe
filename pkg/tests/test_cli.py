import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ipla_lab import ConfigError
from ipla_lab.cli import main, resolve_threads
from ipla_lab.config import build_model, parse_config
from ipla_lab.io import read_csv, write_csv

GAUSS = {"kind": "gaussian", "y": [0.0]}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return path


def run_cli(tmp_path, command, cfg, *extra, out="out"):
    path = write(tmp_path, cfg)
    return main([command, "--config", str(path), "--output-dir", str(tmp_path / out), *extra])


def base(**run):
    r = {"n_particles": 5, "gamma": 0.01, "n_steps": 50, "seed": 1, "replicates": 3}
    r.update(run)
    return {"model": dict(GAUSS), "run": r}


def csv_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.glob("*.csv"))}


# -- csv --------------------------------------------------------------------------


def test_csv_format(tmp_path):
    path = write_csv(tmp_path / "t.csv", ("a", "b"), [(1, 0.1), ("x,y", None), ('q"', float("nan"))])
    raw = path.read_bytes()
    assert raw.startswith(b"# schema_version,1\r\na,b\r\n1,0.1\r\n")
    assert b'"x,y",\r\n' in raw and b'"q""",nan\r\n' in raw
    header, rows = read_csv(path)
    assert header == ["a", "b"] and rows[1] == ["x,y", ""]
    with pytest.raises(ValueError):
        write_csv(tmp_path / "u.csv", ("a",), [(1, 2)])


def test_floats_roundtrip(tmp_path):
    vals = [0.1 + 0.2, 1e-300, -2.5e17, 1 / 3]
    path = write_csv(tmp_path / "f.csv", ("v",), [(v,) for v in vals])
    _, rows = read_csv(path)
    assert [float(r[0]) for r in rows] == vals


# -- run --------------------------------------------------------------------------


def test_run_writes_outputs(tmp_path, capsys):
    assert run_cli(tmp_path, "run", base(), "--gnuplot") == 0
    out = tmp_path / "out"
    assert {p.name for p in out.iterdir()} == {"run.csv", "summary.csv", "config.json", "plot.gp"}
    header, rows = read_csv(out / "run.csv")
    assert header == ["algorithm", "step", "time", "replicate", "component", "theta"]
    assert len(rows) == 51 * 3
    _, summary = read_csv(out / "summary.csv")
    stats = {r[2] for r in summary}
    assert {"theta_final", "rmse", "bound_term_concentration", "library_version", "seed"} <= stats
    text = capsys.readouterr().out
    assert "final theta" in text and "RMSE" in text and "bound:" in text


def test_zero_steps_echoes_initialisation(tmp_path):
    cfg = base(n_steps=0, init={"kind": "point", "theta_mean": 2.5})
    assert run_cli(tmp_path, "run", cfg) == 0
    _, summary = read_csv(tmp_path / "out" / "summary.csv")
    finals = [float(r[4]) for r in summary if r[2] == "theta_final"]
    inits = [float(r[4]) for r in summary if r[2] == "theta_initial"]
    assert finals == inits == [2.5] * 3


def test_gamma_zero_is_config_error(tmp_path, capsys):
    assert run_cli(tmp_path, "run", base(gamma=0)) == 2
    assert "run.gamma" in capsys.readouterr().err


def test_gamma_outside_window_is_config_error(tmp_path, capsys):
    assert run_cli(tmp_path, "run", base(gamma=0.5)) == 2
    assert "run.gamma" in capsys.readouterr().err


def test_malformed_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "model": {"kind": "gaussian", "y": [0]},\n  "run": {,}\n}')
    assert main(["run", "--config", str(path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = base()
    cfg["run"]["n_partciles"] = 3
    assert run_cli(tmp_path, "run", cfg) == 2
    assert "n_partciles" in capsys.readouterr().err


def test_config_error_carries_field_and_line():
    text = '{\n  "model": {"kind": "gaussian", "y": [0]},\n  "run": {"n_particles": -1, "gamma": 0.1, "n_steps": 1}\n}'
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.field == "run.n_particles" and exc.value.line == 3


@pytest.mark.parametrize("values", [[100, 25], [25, 25], [], [-1, 2]])
def test_sweep_values_must_increase(tmp_path, values):
    cfg = base()
    cfg["sweep"] = {"kind": "n_particles", "values": values}
    assert run_cli(tmp_path, "sweep", cfg) == 2


def test_experiment_must_match_command(tmp_path):
    cfg = base()
    cfg["experiment"] = "chaos"
    assert run_cli(tmp_path, "run", cfg) == 2


def test_divergence_exit_code(tmp_path, capsys):
    cfg = base(gamma=1.0, n_steps=500, init={"theta_mean": 1.0})
    cfg["model"] = {"kind": "python", "factory": "cli_models:stiff"}
    with np.errstate(all="ignore"):
        assert run_cli(tmp_path, "run", cfg) == 3
    assert "diverged" in capsys.readouterr().err


def test_bad_factory(tmp_path):
    cfg = base()
    cfg["model"] = {"kind": "python", "factory": "cli_models:not_a_model"}
    assert run_cli(tmp_path, "run", cfg) == 2
    cfg["model"] = {"kind": "python", "factory": "no_such_module:f"}
    assert run_cli(tmp_path, "run", cfg) == 2


def test_logistic_dataset_relative_path(tmp_path):
    (tmp_path / "data.csv").write_text("v_1,v_2,label\n1.0,0.5,1\n-1.0,0.2,0\n0.3,-0.4,1\n")
    cfg = base()
    cfg["model"] = {"kind": "logistic", "dataset": "data.csv"}
    assert run_cli(tmp_path, "run", cfg) == 0
    cfg["model"] = {"kind": "logistic", "dataset": "missing.csv"}
    assert run_cli(tmp_path, "run", cfg) == 2


def test_logistic_needs_one_data_source():
    text = json.dumps({"model": {"kind": "logistic"}, "run": base()["run"]})
    with pytest.raises(ConfigError):
        parse_config(text)


def test_seed_override(tmp_path):
    assert run_cli(tmp_path, "run", base(), out="a") == 0
    assert run_cli(tmp_path, "run", base(), "--seed", "2", out="b") == 0
    assert csv_bytes(tmp_path / "a")["run.csv"] != csv_bytes(tmp_path / "b")["run.csv"]
    echoed = json.loads((tmp_path / "b" / "config.json").read_text())
    assert echoed["run"]["seed"] == 2


def test_echoed_config_reproduces_outputs(tmp_path):
    assert run_cli(tmp_path, "run", base(), out="first") == 0
    echo = tmp_path / "first" / "config.json"
    assert main(["run", "--config", str(echo), "--output-dir", str(tmp_path / "second")]) == 0
    assert csv_bytes(tmp_path / "first") == csv_bytes(tmp_path / "second")


def test_threads_env_fallback():
    assert resolve_threads(None, {"IPLA_LAB_THREADS": "3"}) == 3
    assert resolve_threads(2, {"IPLA_LAB_THREADS": "3"}) == 2
    assert resolve_threads(None, {}) == 1
    with pytest.raises(ConfigError):
        resolve_threads(None, {"IPLA_LAB_THREADS": "zero"})


# -- other commands ---------------------------------------------------------------


def test_sweep_and_chaos_deterministic_across_threads(tmp_path):
    sweep = base(n_steps=400)
    sweep["sweep"] = {"kind": "n_particles", "values": [2, 4, 8, 16]}
    chaos = base(n_steps=200, gamma=0.001)
    chaos["sweep"] = {"kind": "n_particles", "values": [2, 4, 8]}
    for cmd, cfg in (("sweep", sweep), ("chaos", chaos)):
        assert run_cli(tmp_path, cmd, cfg, "--threads", "1", out=f"{cmd}1") == 0
        assert run_cli(tmp_path, cmd, cfg, "--threads", "4", out=f"{cmd}4") == 0
        assert csv_bytes(tmp_path / f"{cmd}1") == csv_bytes(tmp_path / f"{cmd}4")
    _, rates = read_csv(tmp_path / "sweep1" / "rates.csv")
    assert rates[0][0] == "n_particles"


def test_gamma_and_iteration_sweeps(tmp_path):
    cfg = base(gamma=0.02, n_steps=25, replicates=10, init={"theta_mean": 2.0})
    cfg["sweep"] = {"kind": "gamma", "values": [0.005, 0.01, 0.02], "reference_gamma": 0.001}
    assert run_cli(tmp_path, "sweep", cfg, out="g") == 0
    _, rows = read_csv(tmp_path / "g" / "sweep.csv")
    assert {r[3] for r in rows} >= {"strong_error", "implied_C1", "C1"}
    cfg["sweep"] = {"kind": "gamma", "values": [0.005, 0.01, 0.02]}
    assert run_cli(tmp_path, "sweep", cfg, out="g2") == 2

    cfg = base(n_particles=50, gamma=0.01, replicates=50, init={"theta_mean": 10.0})
    cfg["sweep"] = {"kind": "iterations", "values": [100, 200, 300, 400, 600, 1000]}
    assert run_cli(tmp_path, "sweep", cfg, out="i") == 0
    _, rates = read_csv(tmp_path / "i" / "rates.csv")
    assert rates and float(rates[0][2]) < 0


def test_sweep_requires_kind(tmp_path):
    assert run_cli(tmp_path, "sweep", base()) == 2


def test_compare(tmp_path, capsys):
    cfg = base(n_steps=100)
    cfg["algorithm"] = "both"
    assert run_cli(tmp_path, "compare", cfg, "--gnuplot") == 0
    header, rows = read_csv(tmp_path / "out" / "compare.csv")
    assert header[0] == "section" and any(r[4] == "theta_gap_rms" for r in rows)
    cfg["algorithm"] = "ipla"
    assert run_cli(tmp_path, "compare", cfg, out="o2") == 2


def test_compare_one_step_gap(tmp_path):
    cfg = base(n_steps=1, n_particles=4, gamma=0.04, replicates=1)
    cfg["algorithm"] = "both"
    assert run_cli(tmp_path, "compare", cfg) == 0
    _, rows = read_csv(tmp_path / "out" / "compare.csv")
    gap = [float(r[5]) for r in rows if r[4] == "theta_gap_rms" and r[2] == "1"][0]
    from ipla_lab import NoiseStreams

    xi0, _ = NoiseStreams(1, 4, 1, 1).draw(0)
    assert gap == pytest.approx(np.sqrt(2 * 0.04 / 4) * abs(xi0[0, 0]), rel=1e-12)


def test_chaos_single_n_and_unsupported(tmp_path, capsys):
    assert run_cli(tmp_path, "chaos", base(gamma=0.001)) == 0
    assert "no slope" in capsys.readouterr().err
    cfg = base()
    cfg["model"] = {"kind": "logistic", "synth": {"d_x": 2, "d_y": 10}}
    assert run_cli(tmp_path, "chaos", cfg, out="o2") == 2


def test_gradcheck(tmp_path, capsys):
    assert run_cli(tmp_path, "gradcheck", base()) == 0
    assert "PASS" in capsys.readouterr().out
    cfg = base()
    cfg["model"] = {"kind": "python", "factory": "cli_models:corrupted"}
    assert run_cli(tmp_path, "gradcheck", cfg) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "block theta" in out


def test_gradcheck_large_h_degrades(tmp_path, capsys):
    cfg = base()
    cfg["model"] = {"kind": "logistic", "synth": {"d_x": 3, "d_y": 50}}
    cfg["gradcheck"] = {"points": 20}
    assert run_cli(tmp_path, "gradcheck", cfg) == 0
    cfg["gradcheck"] = {"points": 20, "h": 0.1}
    assert run_cli(tmp_path, "gradcheck", cfg) == 1
    assert "FAIL" in capsys.readouterr().out


def test_bound_command(tmp_path):
    cfg = base(n_particles=10, replicates=5)
    cfg["bound"] = {"calibrate": {"gammas": [0.01, 0.02, 0.04], "reference_gamma": 0.002, "horizon": 0.4}}
    assert run_cli(tmp_path, "bound", cfg, "--gnuplot") == 0
    _, rows = read_csv(tmp_path / "out" / "bound.csv")
    stats = {r[0]: r[2] for r in rows}
    assert float(stats["total"]) > 0 and float(stats["C1"]) > 0
    cfg = base()
    cfg["model"] = {"kind": "logistic", "synth": {"d_x": 2, "d_y": 10}}
    assert run_cli(tmp_path, "bound", cfg, out="o2") == 2


def test_build_model_general_sigma():
    text = json.dumps({"model": {"kind": "gaussian", "y": [1, 2], "sigma_lat": 2.0}, "run": base()["run"]})
    built = build_model(parse_config(text))
    assert built.spec.d_x == 2 and built.spec.analytic.theta_star[0] == pytest.approx(1.5)


def test_console_script(tmp_path):
    path = write(tmp_path, base(n_steps=5))
    env = dict(os.environ, IPLA_LAB_THREADS="2")
    proc = subprocess.run(
        [sys.executable, "-m", "ipla_lab.cli", "run", "--config", str(path),
         "--output-dir", str(tmp_path / "o")],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0, proc.stderr
    assert "wall-clock" in proc.stderr and (tmp_path / "o" / "run.csv").exists()
    bad = subprocess.run([sys.executable, "-m", "ipla_lab.cli", "nonsense", "--config", "x"],
                         capture_output=True, text=True)
    assert bad.returncode == 2
