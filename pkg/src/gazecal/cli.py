"""``gazecal`` command line.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 internal error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import baseline as bl
from . import io as gio
from .calibration import self_calibrate
from .errors import DataError
from .experiments import EXPERIMENTS, ExperimentSpec, run_experiment
from .fixation import detect_fixations
from .synth import random_script, simulate
from .trace import cumulative_distance

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class Ctx:
    def __init__(self, config, seed, threads, out_dir):
        self.config = config
        self.seed = seed
        self.threads = threads
        self.out_dir = Path(out_dir)

    def section(self, name, **overrides):
        return gio.build(name, self.config, **overrides)

    def out(self, name) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name


def _emit(obj, path=None):
    text = json.dumps(obj, indent=1, default=str) + "\n"
    if path is not None:
        Path(path).write_text(text)
    click.echo(text, nl=False)


def _theta(ctx, param, value):
    if value is None:
        return None
    try:
        return gio.theta_arg(value)
    except DataError as exc:
        raise click.BadParameter(str(exc)) from None


def _trace_path(arg, opt):
    if (arg is None) == (opt is None):
        raise click.UsageError("give the trace either as an argument or with --trace")
    return arg or opt


ALGO = click.Choice(["IVT", "IDT3D", "IVDT3D"], case_sensitive=False)
MODE = click.Choice(["opt", "vis"])


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="key = value config with [detector], [optimizer] and [walk] sections.")
@click.option("--seed", type=int, default=None, help="Master seed (default 0 or config run.seed).")
@click.option("--threads", type=int, default=None, help="Worker threads for experiments.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Directory for output files (default: current directory).")
@click.pass_context
def cli(ctx, config_path, seed, threads, out_dir):
    """Self-calibration of gaze offsets from fixations in 3D scenes."""
    config = gio.load_config(config_path) if config_path else {}
    run = config.get("run", {})
    ctx.obj = Ctx(config,
                  seed if seed is not None else int(run.get("seed", 0)),
                  threads if threads is not None else int(run.get("threads", 1)),
                  out_dir or run.get("out_dir", "."))


@cli.command()
@click.option("--script", "script_path", type=click.Path(exists=True, dir_okay=False),
              help="Scripted session (JSON). Without it a random walk is generated.")
@click.option("--scene", default="room", show_default=True, help="Builtin name or OBJ path.")
@click.option("--offset", callback=_theta, help="True offset 'alpha,beta' in degrees.")
@click.option("--noise", type=float, default=None, help="Angular noise std in degrees.")
@click.option("--mode", type=MODE, default="opt", show_default=True)
@click.option("--distance", type=float, default=None, help="Walk length in metres.")
@click.option("-o", "--output", default="trace.jsonl", show_default=True)
@click.pass_obj
def simulate_cmd(obj: Ctx, script_path, scene, offset, noise, mode, distance, output):
    """Render a simulated trace (JSON lines plus a .truth.json sidecar)."""
    if script_path:
        script = gio.load_script(script_path)
        if noise is not None or offset is not None:
            from dataclasses import replace
            script = replace(script, noise_std_deg=script.noise_std_deg if noise is None else noise,
                             true_offset=script.true_offset if offset is None else offset)
    else:
        walk = obj.section("walk", **({} if distance is None else {"distance_m": distance}))
        script = random_script(gio.load_scene(scene), seed=obj.seed, true_offset=offset, mode=mode,
                               noise_std_deg=noise or 0.0, spec=walk)
    trace = simulate(script)
    path = gio.save_trace(trace, obj.out(output))
    gio.save_script(script, obj.out(Path(output).stem + ".script.json"))
    _emit({"trace": str(path), "frames": len(trace), "true_offset": list(script.true_offset),
           "cumulative_distance_m": cumulative_distance(trace)})


cli.add_command(simulate_cmd, "simulate")


@cli.command()
@click.argument("trace_path", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--trace", "trace_opt", type=click.Path(exists=True, dir_okay=False),
              help="Trace file (alternative to the positional argument).")
@click.option("--algo", type=ALGO, default="IVDT3D", show_default=True)
@click.option("--theta", callback=_theta, default="0,0", show_default=True,
              help="Offset used to calibrate gaze during detection.")
@click.option("--mode", type=MODE, default="opt", show_default=True)
@click.option("--scene", default="room", show_default=True)
@click.option("-o", "--output", default=None, help="Also write the clusters to this file.")
@click.pass_obj
def detect(obj: Ctx, trace_path, trace_opt, algo, theta, mode, scene, output):
    """Detect fixation clusters."""
    trace = gio.load_trace(_trace_path(trace_path, trace_opt))
    clusters = detect_fixations(trace, algo, gio.load_scene(scene), theta, obj.section("detector"), mode)
    _emit({"algo": algo.upper(), "n_clusters": len(clusters),
           "clusters": [c.to_dict() for c in clusters]}, output and obj.out(output))


@cli.command()
@click.argument("trace_path", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--trace", "trace_opt", type=click.Path(exists=True, dir_okay=False),
              help="Trace file (alternative to the positional argument).")
@click.option("--algo", type=ALGO, default="IVDT3D", show_default=True)
@click.option("--mode", type=MODE, default="opt", show_default=True)
@click.option("--theta-det", callback=_theta, default="0,0", show_default=True,
              help="Offset used for fixation detection.")
@click.option("--scene", default="room", show_default=True)
@click.option("-o", "--out", "--output", "output", default=None)
@click.pass_obj
def calibrate(obj: Ctx, trace_path, trace_opt, algo, mode, theta_det, scene, output):
    """Estimate the gaze offset of a trace."""
    trace = gio.load_trace(_trace_path(trace_path, trace_opt))
    opt = obj.section("optimizer", **({} if "seed" in obj.config.get("optimizer", {})
                                      else {"seed": obj.seed}))
    res = self_calibrate(trace, gio.load_scene(scene), algo, mode, theta_det,
                         obj.section("detector"), opt)
    out = res.to_dict()
    if trace.truth is not None:
        out["true_offset"] = list(trace.truth.true_offset)
        out["offset_error_deg"] = bl.offset_error(res.theta, trace.truth.true_offset, mode)
    _emit(out, output and obj.out(output))


@cli.group()
def baseline():
    """Marker-grid regression calibration."""


@baseline.command("simulate")
@click.option("--noise", type=float, default=0.3, show_default=True)
@click.option("--distortion", default="0.02,1.05,0.03,-0.01,0.02,0.95", show_default=True,
              help="a1,a2,a3,b1,b2,b3 mapping targets to raw gaze.")
@click.option("-o", "--output", default="session.json", show_default=True)
@click.pass_obj
def baseline_simulate(obj: Ctx, noise, distortion, output):
    """Write a synthetic marker session."""
    try:
        c = [float(x) for x in distortion.split(",")]
        if len(c) != 6:
            raise ValueError
    except ValueError:
        raise click.BadParameter("need six comma-separated coefficients", param_hint="--distortion")
    session = bl.synthetic_session(bl.RegressionCoeffs(tuple(c[:3]), tuple(c[3:])), noise, obj.seed)
    path = obj.out(output)
    path.write_text(json.dumps(session.to_dict()) + "\n")
    _emit({"session": str(path), "markers": len(session.markers)})


def _session(path):
    try:
        return bl.MarkerSession.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad marker session {path}: {exc}") from None


@baseline.command("fit")
@click.argument("session_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", default="coeffs.json", show_default=True)
@click.pass_obj
def baseline_fit(obj: Ctx, session_path, output):
    """Fit the regression on the estimation markers."""
    coeffs = bl.fit_session(_session(session_path))
    _emit(coeffs.to_dict(), obj.out(output))


@baseline.command("eval")
@click.argument("session_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--coeffs", "coeffs_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--theta", callback=_theta, help="Evaluate an offset model instead.")
@click.option("--mode", type=MODE, default="opt")
@click.pass_obj
def baseline_eval(obj: Ctx, session_path, coeffs_path, theta, mode):
    """Mean angular error on the evaluation markers (degrees)."""
    session = _session(session_path)
    model = theta
    if coeffs_path:
        d = json.loads(Path(coeffs_path).read_text())
        model = bl.RegressionCoeffs(tuple(d["a"]), tuple(d["b"]), d.get("residual", 0.0))
    _emit({"raw_error_deg": bl.evaluate_accuracy(None, session),
           "error_deg": bl.evaluate_accuracy(model, session, mode)})


@cli.command()
@click.argument("name", type=click.Choice(EXPERIMENTS))
@click.option("--algos", default="IVT,IDT3D,IVDT3D", show_default=True)
@click.option("--modes", default="opt", show_default=True)
@click.option("--traces", "n_traces", type=int, default=3, show_default=True)
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--distances", default="3:34", show_default=True, help="start:stop in metres (step 1).")
@click.option("--thetas-per-range", type=int, default=50, show_default=True)
@click.pass_obj
def experiment(obj: Ctx, name, algos, modes, n_traces, noise, distances, thetas_per_range):
    """Run an experiment and write CSV and JSON reports to --out-dir."""
    try:
        lo, hi = (int(x) for x in distances.split(":"))
    except ValueError:
        raise click.BadParameter("expected start:stop", param_hint="--distances") from None
    walk = obj.section("walk")
    if name == "convergence" and "distance_m" not in obj.config.get("walk", {}):
        walk = obj.section("walk", distance_m=float(hi))
    try:
        spec = ExperimentSpec(name, tuple(algos.split(",")), tuple(modes.split(",")),
                              tuple(range(lo, hi + 1)), thetas_per_range=thetas_per_range,
                              n_traces=n_traces, noise_std_deg=noise, seed=obj.seed, walk=walk,
                              detector=obj.section("detector"), optimizer=obj.section("optimizer"))
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    summary, _ = run_experiment(spec, gio.load_scene("room"), obj.out_dir, threads=obj.threads)
    _emit({"experiment": name, "partial": summary["partial"], "conditions": summary["conditions"]})


@cli.command()
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
def inspect(trace_path):
    """Summarize a trace file."""
    trace = gio.load_trace(trace_path)
    dt = np.diff(trace.t)
    out = {
        "frames": len(trace),
        "duration_s": float(trace.t[-1] - trace.t[0]),
        "median_dt_s": float(np.median(dt)) if len(dt) else None,
        "blink_frames": int(np.sum(trace.openness < 0.5)),
        "cumulative_distance_m": cumulative_distance(trace),
    }
    if trace.truth is not None:
        out["true_offset"] = list(trace.truth.true_offset)
        out["mode"] = trace.truth.mode
        out["fixations"] = len(trace.truth.fixation_ranges())
    _emit(out)


@cli.command()
@click.argument("report_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--columns", default="distance_m,mean_error_deg,std_error_deg,n_clusters",
              show_default=True)
def plotdata(report_csv, columns):
    """Print whitespace-separated columns of a report, grouped by condition prefix."""
    import csv

    cols = columns.split(",")
    with open(report_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    missing = [c for c in cols if rows and c not in rows[0]]
    if missing:
        raise click.BadParameter(f"unknown columns {missing}", param_hint="--columns")
    last = None
    for r in rows:
        group = r["condition"].rsplit("/", 1)[0]
        if group != last:
            if last is not None:
                click.echo("\n")
            click.echo(f"# {group}")
            click.echo("# " + " ".join(cols))
            last = group
        click.echo(" ".join(r[c] for c in cols))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="gazecal", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.BadParameter) as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
