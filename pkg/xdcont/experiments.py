"""
Scripted studies on the fast-reaction limit: epsilon sweeps of homogeneous-branch
bifurcation values, log-log convergence fits and loop counting for ring diagrams.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .continuation import (
    Branch,
    BranchStatus,
    ContinuationProblem,
    ContinuationSettings,
    Diagram,
    EventKind,
    SwitchingSettings,
    continue_branch,
    full_diagram,
    init_from_homogeneous,
)
from .mesh_fem import Mesh, laplacian_eigenvalues
from .models import ModelTag, Params
from .turing import critical_d
from .utils.error_handlers import InsufficientDataException, InvalidArgumentException

logger = logging.getLogger(__name__)


class SweepRow(NamedTuple):
    eps: float
    event: str
    kind: str
    value: Optional[float]
    reference: Optional[float]
    index: int

    @property
    def abs_diff(self) -> Optional[float]:
        if self.value is None or self.reference is None:
            return None
        return abs(self.reference - self.value)


@dataclass
class SweepResult:
    param_name: str
    rows: List[SweepRow]
    reference: Dict[str, float]

    def events(self) -> List[str]:
        return sorted(self.reference, key=lambda label: int(label[1:]))

    def rows_for(self, event: str) -> List[SweepRow]:
        return sorted((r for r in self.rows if r.event == event), key=lambda r: -r.eps)

    def non_monotone(self, event: str) -> int:
        """Pairs of consecutive eps (descending) where the distance to the reference grows."""
        diffs = [r.abs_diff for r in self.rows_for(event) if r.abs_diff is not None]
        return sum(1 for a, b in zip(diffs, diffs[1:]) if b > a)


class OrderFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    n_rows: int


class TopologyReport(NamedTuple):
    closed_loops: int
    open_segments: int
    loop_pairs: Tuple[Tuple[int, int], ...]


def homogeneous_branch(
    mesh: Mesh,
    p: Params,
    model: ModelTag,
    param_name: str,
    start_value: float,
    settings: ContinuationSettings,
) -> Branch:
    problem = ContinuationProblem(mesh, p, ModelTag(model), param_name)
    start = init_from_homogeneous(mesh, p, model, param_name, start_value, settings)
    return continue_branch(problem, start, settings, label="hom")


def branch_point_values(branch: Branch) -> List[float]:
    """Branch-point parameter values in the order they were passed."""
    return [ev.param_value for ev in branch.events if ev.kind is EventKind.BRANCH_POINT]


def reference_values(
    mesh: Mesh,
    p: Params,
    param_name: str,
    start_value: float,
    settings: ContinuationSettings,
    n_events: Optional[int] = None,
) -> Dict[str, float]:
    """Cross-diffusion bifurcation values labelled B1, B2, ... on the same mesh.

    For d these are d_B at the mesh's own discrete Laplacian eigenvalues; for any other
    parameter they come from continuing the cross-diffusion homogeneous branch.
    """
    if param_name == "d":
        count = (n_events or 10) + 1
        lambdas = laplacian_eigenvalues(mesh, count + 1)
        values = [critical_d(p, lam) for lam in lambdas if lam > 0]
        lo, hi = settings.param_range
        found = sorted((v for v in values if v is not None and lo <= v <= hi), reverse=True)
    else:
        found = branch_point_values(
            homogeneous_branch(mesh, p, ModelTag.CROSS, param_name, start_value, settings)
        )
    if n_events is not None:
        found = found[:n_events]
    return {f"B{i + 1}": value for i, value in enumerate(found)}


def _match(values: Sequence[float], reference: Dict[str, float]) -> Dict[str, float]:
    """Pair each located value with the nearest unused reference label."""
    pairs = sorted(
        (abs(v - ref), label, v) for v in values for label, ref in reference.items()
    )
    matched: Dict[str, float] = {}
    used = set()
    for _, label, v in pairs:
        if label in matched or v in used:
            continue
        matched[label] = v
        used.add(v)
    return matched


def _run_eps(
    mesh: Mesh,
    p: Params,
    param_name: str,
    eps: float,
    start_value: float,
    settings: ContinuationSettings,
) -> List[float]:
    logger.info(f"sweep: eps={eps:g}")
    branch = homogeneous_branch(
        mesh, p.with_value("eps", eps), ModelTag.FAST, param_name, start_value, settings
    )
    return branch_point_values(branch)


def sweep_epsilon(
    mesh: Mesh,
    p: Params,
    param_name: str,
    eps_values: Sequence[float],
    start_value: float,
    settings: ContinuationSettings,
    n_events: Optional[int] = None,
    threads: int = 1,
) -> SweepResult:
    """Homogeneous-branch continuation of the fast model for each eps, against the
    cross-diffusion reference. Missing events are recorded with value None."""
    if not eps_values:
        raise InvalidArgumentException("eps list is empty")
    if any(e <= 0 for e in eps_values):
        raise InvalidArgumentException(f"eps values must be positive, got {list(eps_values)}")
    reference = reference_values(mesh, p, param_name, start_value, settings, n_events)

    ordered = sorted(set(float(e) for e in eps_values), reverse=True)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        located = list(pool.map(
            lambda e: _run_eps(mesh, p, param_name, e, start_value, settings), ordered
        ))

    rows: List[SweepRow] = []
    for eps, values in zip(ordered, located):
        matched = _match(values, reference)
        for i, (label, ref) in enumerate(reference.items()):
            value = matched.get(label)
            if value is None:
                logger.info(f"sweep: {label} absent at eps={eps:g}")
            rows.append(SweepRow(eps, label, EventKind.BRANCH_POINT.value, value, ref, i + 1))
    result = SweepResult(param_name, rows, reference)
    for label in reference:
        if result.non_monotone(label) > 1:
            logger.warning(f"sweep: {label} approaches its reference non-monotonically")
    return result


def fit_line(eps: Sequence[float], diffs: Sequence[float]) -> OrderFit:
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.asarray(diffs, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (slope * x + intercept)
    total = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - float(np.sum(residuals**2)) / total if total > 0 else 1.0
    return OrderFit(float(slope), float(intercept), r_squared, len(x))


def fit_order(result: SweepResult, skip_insufficient: bool = False) -> Dict[str, OrderFit]:
    """Least-squares slope of log|ref - value| against log eps, per event."""
    fits: Dict[str, OrderFit] = {}
    for label in result.events():
        usable = [r for r in result.rows_for(label) if r.abs_diff is not None and r.abs_diff > 0]
        if len(usable) < 3:
            if skip_insufficient:
                logger.warning(f"fit: {label} has only {len(usable)} usable rows, skipped")
                continue
            raise InsufficientDataException(
                f"{label} has {len(usable)} usable rows, need at least 3",
                details={"event": label, "rows": len(usable)},
            )
        fits[label] = fit_line([r.eps for r in usable], [r.abs_diff for r in usable])
    if not fits:
        raise InsufficientDataException("no event has enough rows for a fit")
    return fits


def _nearest(values: Sequence[float], target: float) -> int:
    return int(np.argmin(np.abs(np.asarray(values) - target)))


def ring_report(branches: Sequence[Branch]) -> TopologyReport:
    """Count closed loops between homogeneous branch points and open non-homogeneous segments.

    A switched branch that ended back on the homogeneous branch closes the loop between
    its origin and landing branch points; the two halves of a ring count once. Landing
    back on the origin closes a ring attached at that single point, keyed (a, a).
    """
    hom = next((b for b in branches if b.origin == "trivial"), None)
    if hom is None:
        return TopologyReport(0, 0, ())
    hom_values = branch_point_values(hom)
    pairs = set()
    open_segments = 0
    for br in branches:
        if br is hom or br.origin_value is None:
            continue
        if br.status is BranchStatus.RETURNED and br.landing_value is not None and hom_values:
            a = _nearest(hom_values, br.origin_value)
            b = _nearest(hom_values, br.landing_value)
            pairs.add((min(a, b), max(a, b)))
            continue
        open_segments += 1
    loop_pairs = tuple(sorted(pairs))
    return TopologyReport(len(loop_pairs), open_segments, loop_pairs)


@dataclass
class RingSequence:
    reports: Dict[float, TopologyReport] = field(default_factory=dict)
    diagrams: Dict[float, Diagram] = field(default_factory=dict)


def ring_sequence(
    mesh: Mesh,
    p: Params,
    param_name: str,
    eps_values: Sequence[Optional[float]],
    start_value: float,
    settings: ContinuationSettings,
    switching: Optional[SwitchingSettings] = None,
    threads: int = 1,
) -> RingSequence:
    """Full diagrams and loop counts per eps; ``None`` stands for the cross-diffusion limit."""
    switching = switching or SwitchingSettings(depth=1)

    def run(eps: Optional[float]) -> Diagram:
        if eps is None:
            return full_diagram(mesh, p, ModelTag.CROSS, param_name, start_value, settings,
                                switching)
        return full_diagram(mesh, p.with_value("eps", eps), ModelTag.FAST, param_name,
                            start_value, settings, switching)

    ordered = sorted(eps_values, key=lambda e: -1.0 if e is None else e, reverse=True)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        diagrams = list(pool.map(run, ordered))
    sequence = RingSequence()
    for eps, diagram in zip(ordered, diagrams):
        key = 0.0 if eps is None else float(eps)
        sequence.diagrams[key] = diagram
        sequence.reports[key] = ring_report(diagram.branches)
        logger.info(f"rings at eps={key:g}: {sequence.reports[key].closed_loops} closed loops")
    return sequence
