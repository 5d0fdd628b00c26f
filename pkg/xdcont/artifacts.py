"""
On-disk formats: branch CSVs, event logs, plain-text meshes and state snapshots,
npz archives of whole branches, spectra, sweep tables, fit summaries, topology
reports and Turing tables.

Floats are written with 17 significant digits so every value round-trips.
"""

import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .continuation import Branch, BranchPoint, Diagram, EventKind, EventRecord
from .experiments import OrderFit, SweepResult, TopologyReport
from .mesh_fem import DomainKind, DomainSpec, Mesh
from .models import ModelTag, State
from .stability import SpectrumSlice
from .turing import TuringPrediction
from .utils.error_handlers import InvalidArgumentException

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"

BRANCH_COLUMNS = ["step", "param", "v_at_origin", "u_L1", "u_L2", "n_unstable", "event_flag",
                  "in_bounds"]

_EVENT_CODES = {EventKind.BRANCH_POINT: "BP", EventKind.FOLD: "FP", EventKind.HOPF: "HP"}


def _write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(payload: Any, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def event_code(event: EventRecord) -> str:
    code = _EVENT_CODES[event.kind]
    return f"{code}{event.multiplicity}" if event.multiplicity > 1 else code


def branch_frame(branch: Branch) -> pd.DataFrame:
    flags: Dict[int, List[str]] = {}
    for ev in branch.events:
        flags.setdefault(ev.point.step_index, []).append(event_code(ev))
    rows = [
        {
            "step": pt.step_index,
            "param": pt.param,
            "v_at_origin": pt.measures.v_at_origin,
            "u_L1": pt.measures.u_L1,
            "u_L2": pt.measures.u_L2,
            "n_unstable": pt.n_unstable,
            "event_flag": "+".join(flags.get(pt.step_index, [])),
            "in_bounds": pt.in_bounds,
        }
        for pt in branch.points
    ]
    return pd.DataFrame(rows, columns=BRANCH_COLUMNS)


def write_branch_csv(branch: Branch, path: PathLike) -> Path:
    return _write_frame(branch_frame(branch), path)


def read_branch_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, keep_default_na=False, float_precision="round_trip")


def _format_header(header: Mapping[str, Any]) -> str:
    return "".join(f"# {key}: {value}\n" for key, value in header.items())


def _write_text(path: PathLike, header: Mapping[str, Any], tables: Sequence[tuple]) -> Path:
    """Header lines ``# key: value`` followed by each (array, fmt) table in order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(_format_header(header))
    for array, fmt in tables:
        np.savetxt(buf, array, fmt=fmt)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _read_text(path: PathLike) -> Tuple[Dict[str, str], List[str]]:
    header: Dict[str, str] = {}
    rows: List[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
        elif line.strip():
            rows.append(line)
    return header, rows


def _g(value: float) -> str:
    return FLOAT_FORMAT % value


def _state_header(state: State) -> Dict[str, Any]:
    return {
        "model": state.model_tag.value,
        "param_name": state.param_name,
        "param_value": _g(state.param_value),
        "nodes": state.fields.size // state.model_tag.n_components,
        "columns": " ".join(state.model_tag.component_names),
    }


def _state_from(header: Mapping[str, str], table: np.ndarray) -> State:
    model = ModelTag(header["model"])
    columns = table[:, :model.n_components]
    return State(
        np.ascontiguousarray(columns.T).ravel(),
        float(header["param_value"]),
        model,
        header["param_name"],
    )


def _node_columns(vector: np.ndarray, n_components: int) -> np.ndarray:
    return np.asarray(vector, dtype=float).reshape(n_components, -1).T


def write_state(state: State, path: PathLike) -> Path:
    """Plain-text state: one row per node, one column per component."""
    table = _node_columns(state.fields, state.model_tag.n_components)
    return _write_text(path, _state_header(state), [(table, FLOAT_FORMAT)])


def read_state(path: PathLike) -> State:
    header, rows = _read_text(path)
    if "model" not in header or not rows:
        raise InvalidArgumentException(f"{path} is not a state snapshot")
    return _state_from(header, np.loadtxt(rows, ndmin=2))


def write_event_snapshot(event: EventRecord, path: PathLike) -> Path:
    """Event state plus the tangent's state part as extra columns; the tangent's
    parameter component goes in the header."""
    state = event.state
    n_comp = state.model_tag.n_components
    tangent = np.asarray(event.point.tangent, dtype=float)
    header = _state_header(state)
    header["columns"] += " " + " ".join(f"t_{c}" for c in state.model_tag.component_names)
    header.update({
        "kind": event.kind.value,
        "multiplicity": event.multiplicity,
        "event_id": event.event_id,
        "tangent_param": _g(tangent[-1]),
    })
    table = np.hstack([_node_columns(state.fields, n_comp), _node_columns(tangent[:-1], n_comp)])
    return _write_text(path, header, [(table, FLOAT_FORMAT)])


def read_event_snapshot(path: PathLike) -> Dict[str, Any]:
    """State plus the stored kind, multiplicity, tangent and event id."""
    header, rows = _read_text(path)
    if "event_id" not in header or not rows:
        raise InvalidArgumentException(f"{path} is not an event snapshot")
    table = np.loadtxt(rows, ndmin=2)
    state = _state_from(header, table)
    n_comp = state.model_tag.n_components
    tangent_x = np.ascontiguousarray(table[:, n_comp:2 * n_comp].T).ravel()
    return {
        "state": state,
        "kind": EventKind(header["kind"]),
        "multiplicity": int(header["multiplicity"]),
        "tangent": np.append(tangent_x, float(header["tangent_param"])),
        "event_id": header["event_id"],
    }


def write_branch_states(branch: Branch, path: PathLike) -> Path:
    """All point states of a branch as one npz archive, one row per CSV row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    first = branch.points[0].state
    np.savez(
        path,
        fields=np.vstack([pt.x for pt in branch.points]),
        params=np.array([pt.param for pt in branch.points]),
        steps=np.array([pt.step_index for pt in branch.points]),
        model=first.model_tag.value,
        param_name=first.param_name,
    )
    return path


def read_branch_states(path: PathLike) -> List[State]:
    with np.load(path) as data:
        model = ModelTag(str(data["model"]))
        name = str(data["param_name"])
        return [
            State(np.array(row, dtype=float), float(lam), model, name)
            for row, lam in zip(data["fields"], data["params"])
        ]


def write_mesh(mesh: Mesh, path: PathLike) -> Path:
    """Plain-text mesh: node coordinates, then element node indices with the element measure."""
    spec = mesh.domain
    header = {
        "kind": spec.kind.value,
        "Lx": _g(spec.Lx),
        "Ly": "none" if spec.Ly is None else _g(spec.Ly),
        "offset": " ".join(_g(o) for o in spec.offset),
        "shape": " ".join(str(s) for s in mesh.shape),
        "nodes": mesh.node_count,
        "elements": mesh.element_count,
    }
    elements = np.hstack([mesh.elements.astype(float), mesh.element_measures[:, None]])
    n_idx = mesh.elements.shape[1]
    element_fmt = ["%d"] * n_idx + [FLOAT_FORMAT]
    return _write_text(path, header, [(mesh.nodes, FLOAT_FORMAT), (elements, element_fmt)])


def read_mesh(path: PathLike) -> Mesh:
    header, rows = _read_text(path)
    n_nodes, n_elements = int(header["nodes"]), int(header["elements"])
    if len(rows) != n_nodes + n_elements:
        raise InvalidArgumentException(
            f"{path} lists {len(rows)} rows for {n_nodes} nodes and {n_elements} elements"
        )
    nodes = np.loadtxt(rows[:n_nodes], ndmin=2)
    elements = np.loadtxt(rows[n_nodes:], ndmin=2)
    spec = DomainSpec(
        DomainKind(header["kind"]),
        float(header["Lx"]),
        None if header["Ly"] == "none" else float(header["Ly"]),
        tuple(float(o) for o in header["offset"].split()),
    )
    return Mesh(
        nodes,
        elements[:, :-1].astype(int),
        elements[:, -1].copy(),
        spec,
        tuple(int(s) for s in header["shape"].split()),
    )


def mesh_summary(mesh: Mesh) -> Dict[str, Any]:
    spec = mesh.domain
    return {
        "kind": spec.kind.value,
        "Lx": spec.Lx,
        "Ly": spec.Ly,
        "offset": list(spec.offset or ()),
        "shape": list(mesh.shape),
        "node_count": mesh.node_count,
        "element_count": mesh.element_count,
        "total_measure": float(np.sum(mesh.element_measures)),
    }


def spectrum_frame(spectrum: SpectrumSlice) -> pd.DataFrame:
    values = spectrum.eigenvalues
    return pd.DataFrame({"re": values.real, "im": values.imag})


def write_spectrum_csv(point: BranchPoint, path: PathLike) -> Path:
    if point.spectrum is None:
        raise InvalidArgumentException("branch point carries no spectrum")
    return _write_frame(spectrum_frame(point.spectrum), path)


def write_diagram(
    diagram: Diagram,
    out_dir: PathLike,
    snapshots: bool = True,
    spectra: bool = False,
) -> Dict[str, Any]:
    """Branch CSVs, per-branch state archives, event snapshots and events.json."""
    out = Path(out_dir)
    events: List[Dict[str, Any]] = []
    manifest: Dict[str, Any] = {"branches": []}
    for branch in diagram.branches:
        safe = branch.label.replace(":", "_")
        csv_path = write_branch_csv(branch, out / "branches" / f"{safe}.csv")
        entry = {
            "label": branch.label,
            "origin": branch.origin,
            "status": branch.status.value,
            "landing_value": branch.landing_value,
            "points": len(branch.points),
            "csv": csv_path.relative_to(out).as_posix(),
        }
        if snapshots:
            states = write_branch_states(branch, out / "snapshots" / f"{safe}_states.npz")
            entry["states"] = states.relative_to(out).as_posix()
        if spectra:
            for pt in branch.points:
                if pt.spectrum is not None:
                    write_spectrum_csv(
                        pt, out / "spectra" / f"{safe}_{pt.step_index:05d}.csv"
                    )
        manifest["branches"].append(entry)
        for ev in branch.events:
            record: Dict[str, Any] = {
                "event_id": ev.event_id,
                "branch": branch.label,
                "kind": ev.kind.value,
                "param_value": ev.param_value,
                "multiplicity": ev.multiplicity,
                "test_values": list(ev.test_values),
                "n_unstable": ev.point.n_unstable,
                "in_bounds": ev.point.in_bounds,
                "snapshot": None,
            }
            if ev.kind is EventKind.HOPF:
                record["imag_part"] = ev.imag_part
            if snapshots:
                snap = write_event_snapshot(
                    ev, out / "snapshots" / f"event_{ev.event_id.replace(':', '_')}.txt"
                )
                record["snapshot"] = snap.relative_to(out).as_posix()
            events.append(record)
    write_json(events, out / "events.json")
    manifest["events"] = len(events)
    manifest["switch_failures"] = dict(diagram.switch_failures)
    write_json(manifest, out / "manifest.json")
    logger.info(f"wrote {len(diagram.branches)} branches and {len(events)} events to {out}")
    return manifest


def sweep_frame(result: SweepResult) -> pd.DataFrame:
    rows = [
        {
            "eps": r.eps,
            "event": r.event,
            "value": np.nan if r.value is None else r.value,
            "ref": np.nan if r.reference is None else r.reference,
            "abs_diff": np.nan if r.abs_diff is None else r.abs_diff,
        }
        for r in sorted(result.rows, key=lambda r: (-r.eps, r.index))
    ]
    return pd.DataFrame(rows, columns=["eps", "event", "value", "ref", "abs_diff"])


def write_sweep_csv(result: SweepResult, path: PathLike) -> Path:
    return _write_frame(sweep_frame(result), path)


def write_fit_json(fits: Mapping[str, OrderFit], path: PathLike) -> Path:
    payload = {
        label: {
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
            "rows": fit.n_rows,
        }
        for label, fit in fits.items()
    }
    return write_json(payload, path)


def write_topology_json(reports: Mapping[float, TopologyReport], path: PathLike) -> Path:
    """Loop counts keyed by eps; eps 0 denotes the cross-diffusion diagram."""
    payload = [
        {
            "eps": eps,
            "closed_loops": rep.closed_loops,
            "open_segments": rep.open_segments,
            "loop_pairs": [list(pair) for pair in rep.loop_pairs],
        }
        for eps, rep in sorted(reports.items(), key=lambda item: -item[0])
    ]
    return write_json(payload, path)


def turing_frame(predictions: Sequence[TuringPrediction]) -> pd.DataFrame:
    rows = []
    for pr in predictions:
        indices = ";".join(" ".join(str(i) for i in idx) for idx in pr.mode.indices)
        rows.append({
            "modes": indices,
            "lambda": pr.mode.lam,
            "multiplicity": pr.mode.multiplicity,
            "param": pr.param_name,
            "critical_value": pr.critical_value,
        })
    return pd.DataFrame(rows, columns=["modes", "lambda", "multiplicity", "param",
                                       "critical_value"])


def write_turing_csv(predictions: Sequence[TuringPrediction], path: PathLike) -> Path:
    return _write_frame(turing_frame(predictions), path)


def write_curve_csv(
    lambdas: np.ndarray, values: np.ndarray, path: PathLike, name: str = "d_B"
) -> Path:
    return _write_frame(pd.DataFrame({"lambda": lambdas, name: values}), path)


def load_events(path: PathLike) -> List[Dict[str, Any]]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def find_event(events: Sequence[Mapping[str, Any]], event_id: str) -> Optional[Mapping[str, Any]]:
    return next((ev for ev in events if ev["event_id"] == event_id), None)
