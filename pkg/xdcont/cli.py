"""Command-line entry point: ``xdcont <command> CONFIG``."""
import functools
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import click
import numpy as np

from . import artifacts, plotting
from .config import RunConfig, StudyKind, load_config, settings
from .continuation import (
    ContinuationProblem,
    Diagram,
    EventKind,
    EventRecord,
    continue_branch,
    full_diagram,
    init_from_homogeneous,
    point_at,
    switch_branch,
)
from .experiments import fit_order, ring_sequence, sweep_epsilon
from .models import homogeneous_state, jacobian_defect
from .turing import d_b_curve, predict_bifurcations
from .utils import XdcontException, configure_logging, create_error_response

logger = logging.getLogger(__name__)


def _handle_errors(func: Callable[..., Any]) -> Callable[..., Any]:
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except XdcontException as exc:
            click.echo(json.dumps(create_error_response(exc), sort_keys=True), err=True)
            sys.exit(1)

    return wrapper


def _output_dir(ctx: click.Context, config: RunConfig, config_path: str) -> Path:
    if ctx.obj.get("out"):
        return Path(ctx.obj["out"])
    if config.output_dir:
        return Path(config.output_dir)
    return Path(settings.output_dir) / Path(config_path).stem


def _echo(summary: Dict[str, Any]) -> None:
    click.echo(json.dumps(summary, indent=2, sort_keys=True, default=str))


@click.group()
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (overrides the config).")
@click.option("--threads", type=int, default=None, help="Worker threads for independent runs.")
@click.option("--seed", type=int, default=None, help="Seed for random test directions.")
@click.option("--log-level", default=None, help="Logging level.")
@click.option("--log-format", type=click.Choice(["console", "json"]), default=None)
@click.pass_context
def main(
    ctx: click.Context,
    out: Optional[str],
    threads: Optional[int],
    seed: Optional[int],
    log_level: Optional[str],
    log_format: Optional[str],
) -> None:
    """Bifurcation diagrams of cross-diffusion and fast-reaction systems."""
    configure_logging(log_level or settings.log_level, log_format or settings.log_format)
    ctx.ensure_object(dict)
    ctx.obj["out"] = out
    ctx.obj["threads"] = threads or settings.threads
    ctx.obj["seed"] = settings.seed if seed is None else seed


def _write_diagram(config: RunConfig, diagram: Diagram, out: Path) -> Dict[str, Any]:
    manifest = artifacts.write_diagram(
        diagram, out, snapshots=config.output.snapshots, spectra=config.output.spectra
    )
    if config.output.plots:
        plotting.plot_diagram(diagram.branches, out / "diagram.svg", config.param_name)
    return manifest


def _run_turing(config: RunConfig, out: Path) -> Dict[str, Any]:
    tc = config.turing
    value_range = tc.param_range or config.continuation.param_range
    predictions = predict_bifurcations(
        config.params, config.domain_spec(), config.param_name, value_range,
        tc.lambda_max, scan_points=tc.scan_points,
    )
    artifacts.write_turing_csv(predictions, out / "turing.csv")
    curve_max = tc.curve_lambda_max or tc.lambda_max
    lambdas = np.linspace(curve_max / tc.curve_points, curve_max, tc.curve_points)
    values = d_b_curve(config.params, lambdas)
    artifacts.write_curve_csv(lambdas, values, out / "d_b_curve.csv")
    if config.output.plots:
        plotting.plot_d_b_curve(lambdas, values, out / "d_b_curve.svg",
                                modes=[pr.mode.lam for pr in predictions])
    return {
        "study": "turing",
        "param": config.param_name,
        "predictions": [pr.critical_value for pr in predictions],
    }


def _run_sweep(config: RunConfig, out: Path, threads: int) -> Dict[str, Any]:
    mesh = config.build_mesh()
    summary: Dict[str, Any] = {"study": "sweep-eps", "param": config.param_name}
    result = sweep_epsilon(
        mesh, config.params, config.param_name, config.sweep.eps, config.start_value,
        config.continuation, n_events=config.sweep.n_events, threads=threads,
    )
    artifacts.write_sweep_csv(result, out / "sweep.csv")
    fits = fit_order(result, skip_insufficient=True)
    artifacts.write_fit_json(fits, out / "fit.json")
    summary["reference"] = result.reference
    summary["slopes"] = {label: fit.slope for label, fit in fits.items()}
    if config.sweep.topology:
        eps_values: Sequence[Optional[float]] = list(config.sweep.eps)
        if config.sweep.include_cross:
            eps_values = [*eps_values, None]
        rings = ring_sequence(
            mesh, config.params, config.param_name, eps_values, config.start_value,
            config.continuation, config.switching, threads=threads,
        )
        artifacts.write_topology_json(rings.reports, out / "topology.json")
        summary["closed_loops"] = {eps: rep.closed_loops for eps, rep in rings.reports.items()}
    return summary


def _run_continuation(config: RunConfig, out: Path) -> Dict[str, Any]:
    mesh = config.build_mesh()
    artifacts.write_mesh(mesh, out / "mesh.txt")
    if config.study is StudyKind.SINGLE_BRANCH:
        problem = ContinuationProblem(mesh, config.params, config.model, config.param_name)
        start = init_from_homogeneous(mesh, config.params, config.model, config.param_name,
                                      config.start_value, config.continuation)
        diagram = Diagram(problem, [continue_branch(problem, start, config.continuation)])
    else:
        diagram = full_diagram(mesh, config.params, config.model, config.param_name,
                               config.start_value, config.continuation, config.switching)
    manifest = _write_diagram(config, diagram, out)
    return {"study": config.study.value, "branches": manifest["branches"],
            "events": manifest["events"]}


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_handle_errors
def run(ctx: click.Context, config_path: str) -> None:
    """Run the study selected in CONFIG_PATH."""
    config = load_config(config_path)
    out = _output_dir(ctx, config, config_path)
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_json(config.model_dump(mode="json"), out / "config.json")
    if config.study is StudyKind.TURING:
        summary = _run_turing(config, out)
    elif config.study is StudyKind.SWEEP_EPS:
        summary = _run_sweep(config, out, ctx.obj["threads"])
    else:
        summary = _run_continuation(config, out)
    _echo(summary)


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_handle_errors
def turing(ctx: click.Context, config_path: str) -> None:
    """Predicted homogeneous-branch bifurcations and the d_B curve."""
    config = load_config(config_path)
    out = _output_dir(ctx, config, config_path)
    _echo(_run_turing(config, out))


@main.command("sweep-eps")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_handle_errors
def sweep_eps(ctx: click.Context, config_path: str) -> None:
    """Epsilon sweep of the fast model with convergence fits."""
    config = load_config(config_path)
    out = _output_dir(ctx, config, config_path)
    _echo(_run_sweep(config, out, ctx.obj["threads"]))


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--run-dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory of a previous run holding events.json.")
@click.option("--event-id", required=True, help="Event id as recorded in events.json.")
@click.option("--direction", type=click.Choice(["1", "-1"]), default="1")
@click.option("--mix", type=float, nargs=2, default=None,
              help="Weights of the two kernel vectors at a double branch point.")
@click.pass_context
@_handle_errors
def switch(
    ctx: click.Context,
    config_path: str,
    run_dir: str,
    event_id: str,
    direction: str,
    mix: Optional[Sequence[float]],
) -> None:
    """Switch branches at a recorded branch point."""
    config = load_config(config_path)
    run_path = Path(run_dir)
    record = artifacts.find_event(artifacts.load_events(run_path / "events.json"), event_id)
    if record is None or record.get("snapshot") is None:
        raise XdcontException(f"no snapshot for event {event_id!r} in {run_path}")
    snap = artifacts.read_event_snapshot(run_path / record["snapshot"])
    mesh = config.build_mesh()
    problem = ContinuationProblem(mesh, config.params, config.model, config.param_name)
    state = snap["state"]
    point = point_at(problem, state.fields, state.param_value, snap["tangent"],
                     config.continuation)
    event = EventRecord(EventKind(snap["kind"]), state.param_value, point, (0.0, 0.0),
                        snap["multiplicity"], event_id)
    branch = switch_branch(problem, event, int(direction), config.continuation,
                           kernel_mix=mix)
    out = _output_dir(ctx, config, config_path)
    manifest = _write_diagram(config, Diagram(problem, [branch]), out)
    _echo({"study": "switch", "event_id": event_id, "branches": manifest["branches"]})


@main.group()
def mesh() -> None:
    """Mesh utilities."""


@mesh.command("dump")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_handle_errors
def mesh_dump(ctx: click.Context, config_path: str) -> None:
    """Write the configured mesh as mesh.txt plus a JSON summary."""
    config = load_config(config_path)
    out = _output_dir(ctx, config, config_path)
    m = config.build_mesh()
    artifacts.write_mesh(m, out / "mesh.txt")
    summary = artifacts.mesh_summary(m)
    artifacts.write_json(summary, out / "mesh.json")
    _echo(summary)


@main.command("plot-data")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("snapshot", type=click.Path(exists=True, dir_okay=False))
@click.option("--index", type=int, default=None,
              help="Row of a branch state archive; omit for single-state snapshots.")
@click.pass_context
@_handle_errors
def plot_data(ctx: click.Context, config_path: str, snapshot: str, index: Optional[int]) -> None:
    """Render a stored state as an SVG profile next to the snapshot."""
    config = load_config(config_path)
    m = config.build_mesh()
    if index is None:
        state = artifacts.read_state(snapshot)
    else:
        states = artifacts.read_branch_states(snapshot)
        if not -len(states) <= index < len(states):
            raise XdcontException(f"index {index} outside 0..{len(states) - 1}")
        state = states[index]
    suffix = "" if index is None else f"_{index:05d}"
    path = plotting.plot_profile(m, state, Path(snapshot).with_name(
        f"{Path(snapshot).stem}{suffix}.svg"))
    _echo({"profile": str(path), "param_value": state.param_value})


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--directions", type=int, default=20, show_default=True)
@click.pass_context
@_handle_errors
def verify(ctx: click.Context, config_path: str, directions: int) -> None:
    """Check the analytic Jacobian against finite differences along random directions."""
    config = load_config(config_path)
    m = config.build_mesh()
    rng = np.random.default_rng(ctx.obj["seed"])
    base = homogeneous_state(m, config.params.with_value(config.param_name, config.start_value),
                             config.model, config.param_name)
    perturbed = base.with_fields(
        base.fields * (1 + 0.1 * rng.standard_normal(base.fields.size)), base.param_value
    )
    defect = jacobian_defect(m, config.params, perturbed, rng, directions)
    _echo({"jacobian_defect": defect, "directions": directions, "seed": ctx.obj["seed"]})


if __name__ == "__main__":
    main()
