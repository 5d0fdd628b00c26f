"""
Pseudo-arclength continuation of steady states in one scalar parameter.

Extended points are y = (x, λ) with the weighted inner product
<a, b> = ξ a_x·b_x + (1 - ξ) a_λ b_λ, ξ = 1/N by default. Every linear solve goes
through a sparse LU of the bordered matrix [[J, G_λ], [ξ t_x^T, (1 - ξ) t_λ]].
The sign of its determinant is the branch-point test function.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .mesh_fem import Mesh
from .models import (
    Measures,
    ModelTag,
    Params,
    State,
    block_mass,
    equilibrium_cross,
    homogeneous_state,
    inhomogeneity,
    jacobian,
    measures,
    negative_coefficient,
    residual,
    within_bounds,
)
from .stability import (
    Classification,
    SpectrumSlice,
    classify,
    combine_kernel,
    kernel_vectors,
    leading_spectrum,
    max_complex_real_part,
    nearest_axis_pair,
)
from .utils.error_handlers import (
    DegeneratePointException,
    InvalidArgumentException,
    InvalidBracketException,
    NoStartException,
    SwitchFailureException,
)

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8

FD_STEP = float(np.finfo(float).eps ** (1.0 / 3.0))


class DetectFlags(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    branch: bool = True
    fold: bool = True
    hopf: bool = True


class ContinuationSettings(BaseModel):
    """Step control, tolerances and event detection for one continuation run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    ds0: float = Field(1e-4, gt=0)
    ds_min: float = Field(1e-7, gt=0)
    ds_max: float = Field(1e-4, gt=0)
    ds_max_switched: Optional[float] = Field(None, gt=0)
    min_tangent_cos: float = Field(0.5, ge=0, lt=1)
    event_ds_factor: float = Field(0.25, gt=0, le=1)
    newton_tol: float = Field(1e-10, gt=0)
    newton_max_iter: int = Field(12, ge=1)
    max_steps: int = Field(2000, ge=1)
    param_range: Tuple[float, float] = (0.003, 0.04)
    n_eigs: int = Field(10, ge=1)
    detect: DetectFlags = DetectFlags()
    direction: int = -1
    xi: Optional[float] = Field(None, gt=0, lt=1)
    eig_shift: float = 0.1
    stability_tol: float = Field(1e-8, gt=0)
    hopf_imag_tol: float = Field(1e-6, gt=0)
    hopf_real_tol: float = Field(1e-4, gt=0)
    event_rtol: float = Field(1e-6, gt=0)
    cluster_rtol: float = Field(1e-5, gt=0)
    max_bisections: int = Field(60, ge=1)
    grow: float = Field(1.3, ge=1.0)
    fast_iterations: int = Field(3, ge=0)
    switch_delta: float = Field(1e-2, gt=0)
    switch_retries: int = Field(3, ge=0)
    homogeneity_tol: float = Field(1e-5, gt=0)

    @model_validator(mode="after")
    def _check_steps(self) -> "ContinuationSettings":
        if not self.ds_min <= self.ds0 <= self.ds_max:
            raise ValueError(
                f"need ds_min <= ds0 <= ds_max, got {self.ds_min}, {self.ds0}, {self.ds_max}"
            )
        lo, hi = self.param_range
        if not lo < hi:
            raise ValueError(f"param_range must be increasing, got {self.param_range}")
        if self.direction not in (-1, 1):
            raise ValueError(f"direction must be +1 or -1, got {self.direction}")
        if self.ds_max_switched is not None and self.ds_max_switched < self.ds_max:
            raise ValueError(
                f"ds_max_switched {self.ds_max_switched} is below ds_max {self.ds_max}"
            )
        return self

    def step_cap(self, origin: str) -> float:
        """Largest step on a branch of the given origin."""
        if origin == "trivial" or self.ds_max_switched is None:
            return self.ds_max
        return self.ds_max_switched


class EventKind(str, Enum):
    BRANCH_POINT = "branch_point"
    FOLD = "fold"
    HOPF = "hopf"


class BranchStatus(str, Enum):
    LEFT_RANGE = "left_range"
    MAX_STEPS = "max_steps"
    DS_UNDERFLOW = "ds_underflow"
    RETURNED = "returned_to_homogeneous"
    DEGENERATE = "degenerate"


@dataclass(frozen=True, eq=False)
class BranchPoint:
    state: State
    measures: Measures
    n_unstable: int
    tangent: np.ndarray
    step_index: int
    det_sign: int = 1
    spectrum: Optional[SpectrumSlice] = None
    n_unstable_complex: int = 0
    marginal: bool = False
    in_bounds: bool = True
    residual_norm: float = 0.0
    iterations: int = 0

    @property
    def param(self) -> float:
        return self.state.param_value

    @property
    def x(self) -> np.ndarray:
        return self.state.fields

    @property
    def y(self) -> np.ndarray:
        return np.append(self.state.fields, self.state.param_value)


@dataclass(frozen=True, eq=False)
class EventRecord:
    kind: EventKind
    param_value: float
    point: BranchPoint
    test_values: Tuple[float, float]
    multiplicity: int = 1
    event_id: str = ""
    imag_part: float = 0.0

    @property
    def state(self) -> State:
        return self.point.state


@dataclass(eq=False)
class Branch:
    points: List[BranchPoint]
    events: List[EventRecord] = field(default_factory=list)
    origin: str = "trivial"
    label: str = "hom"
    status: BranchStatus = BranchStatus.MAX_STEPS
    landing_value: Optional[float] = None
    origin_value: Optional[float] = None

    @property
    def params(self) -> np.ndarray:
        return np.array([p.param for p in self.points])


@dataclass(frozen=True)
class CorrectorResult:
    converged: bool
    x: np.ndarray
    lam: float
    iterations: int
    residual_norm: float


@dataclass(eq=False)
class Diagram:
    problem: "ContinuationProblem"
    branches: List[Branch]
    switch_failures: Dict[str, str] = field(default_factory=dict)

    def branch(self, label: str) -> Branch:
        for br in self.branches:
            if br.label == label:
                return br
        raise InvalidArgumentException(f"no branch labelled {label!r}")


@dataclass(frozen=True, eq=False)
class ContinuationProblem:
    """Residual and derivatives of one model on one mesh as functions of (x, λ)."""

    mesh: Mesh
    params: Params
    model: ModelTag
    param_name: str

    @cached_property
    def mass_block(self) -> sp.csr_matrix:
        return block_mass(self.mesh, ModelTag(self.model).n_components)

    @property
    def size(self) -> int:
        return ModelTag(self.model).n_components * self.mesh.node_count

    def state(self, x: np.ndarray, lam: float) -> State:
        model = ModelTag(self.model)
        return State(np.asarray(x, dtype=float), float(lam), model, self.param_name)

    def residual(self, x: np.ndarray, lam: float) -> np.ndarray:
        return residual(self.mesh, self.params, self.state(x, lam))

    def jacobian(self, x: np.ndarray, lam: float) -> sp.csr_matrix:
        return jacobian(self.mesh, self.params, self.state(x, lam))

    def param_derivative(self, x: np.ndarray, lam: float) -> np.ndarray:
        """Central difference of G in λ; the relative step eps^(1/3) balances the
        O(h^2) truncation error against roundoff."""
        h = FD_STEP * max(abs(lam), 1e-8)
        return (self.residual(x, lam + h) - self.residual(x, lam - h)) / (2 * h)


def weight(settings: ContinuationSettings, n: int) -> float:
    return settings.xi if settings.xi is not None else 1.0 / n


def inner(a: np.ndarray, b: np.ndarray, xi: float) -> float:
    return float(xi * (a[:-1] @ b[:-1]) + (1 - xi) * a[-1] * b[-1])


def weighted_norm(a: np.ndarray, xi: float) -> float:
    return float(np.sqrt(inner(a, a, xi)))


def _bordered(J: sp.spmatrix, g: np.ndarray, row: np.ndarray, xi: float) -> sp.csc_matrix:
    col = sp.csc_matrix(np.asarray(g, dtype=float)[:, None])
    last = sp.csr_matrix((xi * row[:-1])[None, :])
    corner = sp.csr_matrix(np.array([[(1 - xi) * row[-1]]]))
    return sp.bmat([[J, col], [last, corner]], format="csc")


def _permutation_parity(perm: np.ndarray) -> int:
    perm = np.asarray(perm)
    seen = np.zeros(perm.size, dtype=bool)
    parity = 1
    for start in range(perm.size):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            parity = -parity
    return parity


def determinant_sign(lu: spla.SuperLU) -> int:
    """sign det(A) for Pr A Pc = L U with unit-diagonal L."""
    diag = lu.U.diagonal()
    if np.any(diag == 0):
        return 0
    sign = -1 if np.count_nonzero(diag < 0) % 2 else 1
    return sign * _permutation_parity(lu.perm_r) * _permutation_parity(lu.perm_c)


def _factorize(A: sp.csc_matrix) -> spla.SuperLU:
    try:
        return spla.splu(A)
    except RuntimeError as exc:
        raise DegeneratePointException(f"bordered matrix is singular: {exc}") from exc


@dataclass(frozen=True)
class TangentResult:
    vector: np.ndarray
    det_sign: int


def tangent(
    J: sp.spmatrix, g: np.ndarray, prev: np.ndarray, xi: float
) -> TangentResult:
    """Unit tangent of the extended Jacobian [J | g], oriented so <t, prev> > 0."""
    lu = _factorize(_bordered(J, g, prev, xi))
    rhs = np.zeros(J.shape[0] + 1)
    rhs[-1] = 1.0
    t = lu.solve(rhs)
    if not np.all(np.isfinite(t)):
        raise DegeneratePointException("tangent solve produced non-finite values")
    norm = weighted_norm(t, xi)
    if norm == 0:
        raise DegeneratePointException("zero tangent")
    return TangentResult(t / norm, determinant_sign(lu))


def corrector(
    problem: ContinuationProblem,
    predicted: np.ndarray,
    prev_y: np.ndarray,
    prev_tangent: np.ndarray,
    ds: float,
    settings: ContinuationSettings,
) -> CorrectorResult:
    """Newton on [G(x, λ); <t_prev, y - y_prev> - ds]; failure is reported, never raised."""
    xi = weight(settings, problem.size)
    y = np.array(predicted, dtype=float)
    arc_tol = settings.newton_tol + 1e-8 * abs(ds)
    rn = float("inf")
    for it in range(settings.newton_max_iter + 1):
        x, lam = y[:-1], float(y[-1])
        try:
            G = problem.residual(x, lam)
        except InvalidArgumentException as exc:
            logger.debug(f"corrector iterate left the parameter domain: {exc.message}")
            break
        arc = inner(prev_tangent, y - prev_y, xi) - ds
        rn = float(np.max(np.abs(G)))
        if not np.isfinite(rn):
            break
        if rn <= settings.newton_tol and abs(arc) <= arc_tol:
            return CorrectorResult(True, x.copy(), lam, it, rn)
        if it == settings.newton_max_iter:
            break
        try:
            A = _bordered(problem.jacobian(x, lam), problem.param_derivative(x, lam),
                          prev_tangent, xi)
            dy = spla.splu(A).solve(-np.append(G, arc))
        except (RuntimeError, InvalidArgumentException):
            break
        if not np.all(np.isfinite(dy)):
            break
        y = y + dy
        if np.max(np.abs(y)) > DIVERGENCE_LIMIT:
            break
        logger.debug(f"corrector iteration {it + 1}: |G| = {rn:.3e}")
    return CorrectorResult(False, y[:-1], float(y[-1]), settings.newton_max_iter, rn)


def newton_solve(
    problem: ContinuationProblem, x0: np.ndarray, lam: float, settings: ContinuationSettings
) -> CorrectorResult:
    """Fixed-parameter Newton iteration on G(x, λ) = 0."""
    x = np.array(x0, dtype=float)
    rn = float("inf")
    for it in range(settings.newton_max_iter + 1):
        G = problem.residual(x, lam)
        rn = float(np.max(np.abs(G)))
        if rn <= settings.newton_tol:
            return CorrectorResult(True, x, float(lam), it, rn)
        if it == settings.newton_max_iter or not np.isfinite(rn):
            break
        try:
            dx = spla.splu(problem.jacobian(x, lam).tocsc()).solve(-G)
        except RuntimeError:
            break
        x = x + dx
    return CorrectorResult(False, x, float(lam), settings.newton_max_iter, rn)


def _make_point(
    problem: ContinuationProblem,
    x: np.ndarray,
    lam: float,
    prev_tangent: np.ndarray,
    settings: ContinuationSettings,
    step_index: int,
    iterations: int = 0,
    with_spectrum: bool = True,
) -> BranchPoint:
    xi = weight(settings, problem.size)
    J = problem.jacobian(x, lam)
    t = tangent(J, problem.param_derivative(x, lam), prev_tangent, xi)
    state = problem.state(x, lam)
    if negative_coefficient(problem.mesh, problem.params, state):
        logger.warning(
            f"accepted point at {problem.param_name}={lam:.6g} has negative c(v) on some elements"
        )
    spectrum = None
    cls = Classification(0, False, 0)
    if with_spectrum:
        spectrum = leading_spectrum(J, problem.mass_block, settings.n_eigs, settings.eig_shift)
        cls = classify(spectrum, settings.stability_tol, settings.hopf_imag_tol)
    return BranchPoint(
        state=state,
        measures=measures(problem.mesh, state),
        n_unstable=cls.n_unstable,
        tangent=t.vector,
        step_index=step_index,
        det_sign=t.det_sign,
        spectrum=spectrum,
        n_unstable_complex=cls.n_unstable_complex,
        marginal=cls.marginal,
        in_bounds=within_bounds(problem.params, state),
        residual_norm=float(np.max(np.abs(problem.residual(x, lam)))),
        iterations=iterations,
    )


def point_at(
    problem: ContinuationProblem,
    x: np.ndarray,
    lam: float,
    prev_tangent: np.ndarray,
    settings: ContinuationSettings,
    step_index: int = 0,
) -> BranchPoint:
    """Classified branch point at a converged (x, λ), tangent oriented along prev_tangent."""
    return _make_point(problem, x, lam, prev_tangent, settings, step_index)


def init_from_homogeneous(
    mesh: Mesh,
    p: Params,
    model: ModelTag,
    param_name: str,
    param_value: float,
    settings: Optional[ContinuationSettings] = None,
) -> BranchPoint:
    """Constant-field steady state at ``param_value``, classified and with a unit tangent."""
    settings = settings or ContinuationSettings()
    q = p.with_value(param_name, param_value)
    eq = equilibrium_cross(q)
    if not eq.admissible:
        raise NoStartException(
            "homogeneous equilibrium is not positive",
            details={"u": eq.u, "v": eq.v, param_name: param_value},
        )
    problem = ContinuationProblem(mesh, p, ModelTag(model), param_name)
    start = homogeneous_state(mesh, q, ModelTag(model), param_name)
    rn = float(np.max(np.abs(problem.residual(start.fields, param_value))))
    if rn > 1e-10:
        raise NoStartException(
            f"homogeneous state residual {rn:.3e} exceeds 1e-10",
            details={"residual": rn},
        )
    prev = np.zeros(problem.size + 1)
    prev[-1] = settings.direction
    return _make_point(problem, start.fields, param_value, prev, settings, step_index=0)


def _sign(value: float) -> int:
    if np.isnan(value):
        return 0
    return 1 if value > 0 else -1


def _real_unstable(pt: BranchPoint) -> int:
    return pt.n_unstable - pt.n_unstable_complex


def _test_function(
    name: str, settings: ContinuationSettings, reference: float = 0.0
) -> Callable[[BranchPoint], float]:
    if name == "branch_point":
        return lambda pt: float(pt.det_sign)
    if name == "fold":
        return lambda pt: float(pt.tangent[-1])
    if name == "hopf":
        def hopf(pt: BranchPoint) -> float:
            assert pt.spectrum is not None
            value = max_complex_real_part(pt.spectrum, settings.hopf_imag_tol)
            return value if np.isfinite(value) else -1.0
        return hopf
    if name == "stability":
        return lambda pt: _real_unstable(pt) - reference
    raise InvalidArgumentException(f"unknown test function {name!r}")


def _bisect(
    problem: ContinuationProblem,
    a: BranchPoint,
    b: BranchPoint,
    f: Callable[[BranchPoint], float],
    needs_spectrum: bool,
    settings: ContinuationSettings,
) -> Tuple[BranchPoint, BranchPoint]:
    """Shrink [a, b] in arclength along a's tangent, keeping sign(f) apart at the ends."""
    xi = weight(settings, problem.size)
    side = _sign(f(a))
    lo, hi = a, b
    s_lo, s_hi = 0.0, inner(a.tangent, b.y - a.y, xi)
    for _ in range(settings.max_bisections):
        width = abs(hi.param - lo.param)
        scale = max(abs(lo.param), abs(hi.param), 1e-12)
        if width <= settings.event_rtol * scale and abs(s_hi - s_lo) <= settings.ds_min:
            break
        s = 0.5 * (s_lo + s_hi)
        res = corrector(problem, a.y + s * a.tangent, a.y, a.tangent, s, settings)
        if not res.converged:
            logger.debug(f"bisection corrector failed at s={s:.3e}; keeping current bracket")
            break
        try:
            mid = _make_point(problem, res.x, res.lam, a.tangent, settings, a.step_index,
                              res.iterations, with_spectrum=needs_spectrum)
        except DegeneratePointException:
            break
        if _sign(f(mid)) == side:
            lo, s_lo = mid, s
        else:
            hi, s_hi = mid, s
    return lo, hi


def _with_spectrum(
    problem: ContinuationProblem, pt: BranchPoint, prev_tangent: np.ndarray,
    settings: ContinuationSettings,
) -> BranchPoint:
    if pt.spectrum is not None:
        return pt
    return _make_point(problem, pt.x, pt.param, prev_tangent, settings, pt.step_index,
                       pt.iterations)


def _hopf_pair(
    lo: BranchPoint, hi: BranchPoint, settings: ContinuationSettings
) -> Optional[complex]:
    """The complex pair that crosses the imaginary axis between lo and hi, or None.

    The pair nearest the axis must be the same pair on both sides, change the sign of
    its real part, and sit within hopf_real_tol of the axis with |Im| >= hopf_imag_tol.
    """
    assert lo.spectrum is not None and hi.spectrum is not None
    before = nearest_axis_pair(lo.spectrum, settings.hopf_imag_tol)
    after = nearest_axis_pair(hi.spectrum, settings.hopf_imag_tol)
    if before is None or after is None:
        return None
    if (before.real > 0) == (after.real > 0):
        return None
    if abs(before.imag - after.imag) > 0.1 * max(abs(before.imag), abs(after.imag)):
        return None
    pair = before if abs(before.real) <= abs(after.real) else after
    if abs(pair.real) > settings.hopf_real_tol:
        return None
    return pair


def locate_event(
    problem: ContinuationProblem,
    bracket: Tuple[BranchPoint, BranchPoint],
    test: str,
    settings: ContinuationSettings,
    level: Optional[float] = None,
) -> EventRecord:
    """Bisect in arclength along the left tangent until the parameter interval is tight.

    ``test`` is one of branch_point, fold, hopf or stability. The stability test tracks
    the count of unstable real eigenvalues through ``level`` (default: halfway between
    the bracket ends) and reports a simple branch point. A hopf bracket without a
    complex pair crossing the imaginary axis raises InvalidBracketException.
    """
    a, b = bracket
    if level is None:
        level = _real_unstable(a) + (_real_unstable(b) - _real_unstable(a)) / 2
    f = _test_function(test, settings, reference=level)
    fa, fb = f(a), f(b)
    if fa == fb or _sign(fa) == _sign(fb):
        raise InvalidBracketException(
            f"{test} test does not change sign across the bracket",
            details={"test_values": [fa, fb], "params": [a.param, b.param]},
        )
    lo, hi = _bisect(problem, a, b, f, test in ("hopf", "stability"), settings)
    point = _with_spectrum(problem, lo, a.tangent, settings)

    kind = EventKind.BRANCH_POINT
    imag_part = 0.0
    if test == "fold":
        kind = EventKind.FOLD
    elif test == "hopf":
        kind = EventKind.HOPF
        pair = _hopf_pair(point, _with_spectrum(problem, hi, a.tangent, settings), settings)
        if pair is None:
            raise InvalidBracketException(
                "no complex pair crosses the imaginary axis in the bracket",
                details={"params": [lo.param, hi.param]},
            )
        imag_part = abs(pair.imag)
    logger.info(f"located {kind.value} at {problem.param_name}={point.param:.8g}")
    return EventRecord(kind, point.param, point, (fa, fb), imag_part=imag_part)


def _cluster_event(
    problem: ContinuationProblem,
    cluster: List[Tuple[BranchPoint, BranchPoint]],
    counts: Tuple[float, float],
) -> Optional[EventRecord]:
    lo, hi = cluster[0]
    if len(cluster) == 1 and lo.det_sign * hi.det_sign > 0:
        # one real eigenvalue through zero without a determinant change is a fold
        return None
    multiplicity = len(cluster)
    logger.info(f"located branch_point at {problem.param_name}={lo.param:.8g}"
                + (f" (multiplicity {multiplicity})" if multiplicity > 1 else ""))
    return EventRecord(EventKind.BRANCH_POINT, lo.param, lo, counts, multiplicity)


def locate_crossings(
    problem: ContinuationProblem,
    a: BranchPoint,
    b: BranchPoint,
    settings: ContinuationSettings,
) -> List[EventRecord]:
    """Branch points for a step across which several real eigenvalues change sign.

    Every integer level of the real unstable count is bisected on its own. Crossings
    within cluster_rtol of each other form one event whose multiplicity is the
    cluster size.
    """
    start, end = _real_unstable(a), _real_unstable(b)
    step = 1 if end > start else -1
    crossings: List[Tuple[BranchPoint, BranchPoint]] = []
    for k in range(abs(end - start)):
        f = _test_function("stability", settings, reference=start + step * (k + 0.5))
        crossings.append(_bisect(problem, a, b, f, True, settings))
    crossings.sort(key=lambda pair: abs(pair[0].param - a.param))

    clusters: List[List[Tuple[BranchPoint, BranchPoint]]] = []
    for pair in crossings:
        if clusters:
            last = clusters[-1][-1][0].param
            if abs(pair[0].param - last) <= settings.cluster_rtol * max(abs(last), 1e-12):
                clusters[-1].append(pair)
                continue
        clusters.append([pair])
    events = []
    for cluster in clusters:
        event = _cluster_event(problem, cluster, (float(start), float(end)))
        if event is not None:
            events.append(event)
    return events


def event_candidates(
    a: BranchPoint, b: BranchPoint, settings: ContinuationSettings
) -> List[str]:
    """Tests whose data change between consecutive points a and b.

    Two real unstable eigenvalues merging into a complex pair (or splitting from one)
    keep the unstable count and trigger neither a branch point nor a Hopf test.
    """
    tests: List[str] = []
    jump = b.n_unstable - a.n_unstable
    complex_jump = b.n_unstable_complex - a.n_unstable_complex
    collision = complex_jump != 0 and jump == 0
    real_jump = 0 if collision else _real_unstable(b) - _real_unstable(a)
    if settings.detect.branch:
        if abs(real_jump) > 1:
            tests.append("stability")
        elif a.det_sign * b.det_sign < 0:
            tests.append("branch_point")
    if settings.detect.fold and a.tangent[-1] * b.tangent[-1] < 0:
        tests.append("fold")
    if settings.detect.hopf and complex_jump != 0 and not collision:
        tests.append("hopf")
    return tests


def _detect_events(
    problem: ContinuationProblem,
    a: BranchPoint,
    b: BranchPoint,
    settings: ContinuationSettings,
) -> List[EventRecord]:
    events: List[EventRecord] = []
    for test in event_candidates(a, b, settings):
        if test == "stability":
            events.extend(locate_crossings(problem, a, b, settings))
            continue
        try:
            events.append(locate_event(problem, (a, b), test, settings))
        except InvalidBracketException as exc:
            logger.debug(f"skipping {test}: {exc.message}")
    return events


def _on_homogeneous(state: State, tol: float) -> bool:
    return inhomogeneity(state) < tol * max(1.0, float(np.max(np.abs(state.fields))))


def continue_branch(
    problem: ContinuationProblem,
    start: BranchPoint,
    settings: ContinuationSettings,
    label: str = "hom",
    origin: str = "trivial",
    stop_on_homogeneous: bool = False,
    origin_value: Optional[float] = None,
) -> Branch:
    """March from ``start`` until the parameter leaves param_range or a stop condition.

    With ``stop_on_homogeneous`` a branch point whose state is spatially constant ends
    the branch with status returned_to_homogeneous. A step whose tangent turns by more
    than arccos(min_tangent_cos) is retried with half the step, and after a branch
    point on a switched branch the step shrinks by event_ds_factor, so the path does
    not jump onto a crossing branch.
    """
    branch = Branch([start], origin=origin, label=label, origin_value=origin_value)
    lo, hi = settings.param_range
    ds_cap = settings.step_cap(origin)
    xi = weight(settings, problem.size)
    ds = settings.ds0
    prev = start
    logger.info(f"branch {label}: start at {problem.param_name}={start.param:.6g}")
    for step in range(1, settings.max_steps + 1):
        res = corrector(problem, prev.y + ds * prev.tangent, prev.y, prev.tangent, ds, settings)
        if not res.converged:
            ds *= 0.5
            logger.debug(f"branch {label}: corrector failed, ds -> {ds:.3e}")
            if ds < settings.ds_min:
                branch.status = BranchStatus.DS_UNDERFLOW
                break
            continue
        try:
            point = _make_point(problem, res.x, res.lam, prev.tangent, settings, step,
                                res.iterations)
        except DegeneratePointException as exc:
            logger.warning(f"branch {label}: {exc.message}")
            branch.status = BranchStatus.DEGENERATE
            break
        turn = inner(prev.tangent, point.tangent, xi)
        if turn < settings.min_tangent_cos and 0.5 * ds >= settings.ds_min:
            ds *= 0.5
            logger.debug(f"branch {label}: tangent turned (cos {turn:.3f}), ds -> {ds:.3e}")
            continue

        events = _detect_events(problem, prev, point, settings)
        if origin != "trivial" and any(ev.kind is EventKind.BRANCH_POINT for ev in events):
            ds = max(settings.ds_min, ds * settings.event_ds_factor)
        for event in events:
            event = EventRecord(event.kind, event.param_value, event.point, event.test_values,
                                event.multiplicity, f"{label}:{len(branch.events)}",
                                event.imag_part)
            branch.events.append(event)
            if (stop_on_homogeneous and event.kind is EventKind.BRANCH_POINT
                    and _on_homogeneous(event.state, settings.homogeneity_tol)):
                branch.landing_value = event.param_value
                branch.status = BranchStatus.RETURNED
        branch.points.append(point)
        if branch.status is BranchStatus.RETURNED:
            break
        if not lo <= point.param <= hi:
            branch.status = BranchStatus.LEFT_RANGE
            break
        if res.iterations <= settings.fast_iterations:
            ds = min(ds * settings.grow, ds_cap)
        prev = point
    logger.info(
        f"branch {label}: {branch.status.value} after {len(branch.points)} points, "
        f"{len(branch.events)} events"
    )
    return branch


def _distance_from_parent(bp: BranchPoint, res: CorrectorResult) -> float:
    t = bp.tangent
    if abs(t[-1]) > 1e-12:
        x_parent = bp.x + (res.lam - bp.param) / t[-1] * t[:-1]
    else:
        x_parent = bp.x
    return float(np.max(np.abs(res.x - x_parent)))


def switch_branch(
    problem: ContinuationProblem,
    event: EventRecord,
    direction: int,
    settings: ContinuationSettings,
    kernel_mix: Optional[Sequence[float]] = None,
    label: Optional[str] = None,
    stop_on_homogeneous: bool = False,
) -> Branch:
    """Leave a branch point along ±ψ, ψ spanning ker J, and continue the new branch.

    The first point is corrected on the hyperplane through the branch point normal to
    (ψ, 0), so the parameter is free to move off the parent branch. Multiplicity-2
    points need ``kernel_mix`` weights for the two kernel vectors.
    """
    if event.kind is not EventKind.BRANCH_POINT:
        raise InvalidArgumentException(f"cannot switch at a {event.kind.value} event")
    if direction not in (-1, 1):
        raise InvalidArgumentException(f"direction must be +1 or -1, got {direction}")
    if event.multiplicity > 1 and kernel_mix is None:
        raise SwitchFailureException(
            "branch point has a multi-dimensional kernel; supply kernel_mix",
            details={"param_value": event.param_value, "multiplicity": event.multiplicity},
        )
    bp = event.point
    xi = weight(settings, problem.size)
    J = problem.jacobian(bp.x, bp.param)
    count = len(kernel_mix) if kernel_mix is not None else 1
    basis = kernel_vectors(J, problem.mass_block, count)
    psi = combine_kernel(basis, kernel_mix) if kernel_mix is not None else basis[:, 0]

    t0 = np.append(psi, 0.0)
    t0 = direction * t0 / weighted_norm(t0, xi)
    scale = max(float(np.max(np.abs(bp.x))), 1.0)
    delta = settings.switch_delta
    label = label or f"{event.event_id}{'+' if direction > 0 else '-'}"
    for attempt in range(settings.switch_retries + 1):
        ds = weighted_norm(np.append(delta * scale * psi, 0.0), xi)
        res = corrector(problem, bp.y + ds * t0, bp.y, t0, ds, settings)
        if res.converged and _distance_from_parent(bp, res) > 0.1 * delta * scale:
            break
        logger.info(f"switch {label}: attempt {attempt + 1} returned to parent, retrying")
        delta *= 4
    else:
        raise SwitchFailureException(
            "corrector fell back onto the parent branch",
            details={"param_value": event.param_value, "direction": direction},
        )
    first = _make_point(problem, res.x, res.lam, t0, settings, step_index=0,
                        iterations=res.iterations)
    return continue_branch(problem, first, settings, label=label,
                           origin=f"switched-from:{event.event_id}",
                           stop_on_homogeneous=stop_on_homogeneous,
                           origin_value=event.param_value)


class SwitchingSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    depth: int = Field(1, ge=0)
    max_events_per_branch: int = Field(3, ge=0)
    directions: Tuple[int, ...] = (1, -1)


def full_diagram(
    mesh: Mesh,
    p: Params,
    model: ModelTag,
    param_name: str,
    start_value: float,
    settings: ContinuationSettings,
    switching: Optional[SwitchingSettings] = None,
) -> Diagram:
    """Homogeneous branch plus branches switched at simple branch points, breadth first."""
    switching = switching or SwitchingSettings()
    problem = ContinuationProblem(mesh, p, ModelTag(model), param_name)
    start = init_from_homogeneous(mesh, p, model, param_name, start_value, settings)
    hom = continue_branch(problem, start, settings, label="hom")
    diagram = Diagram(problem, [hom])
    queue: List[Tuple[Branch, int]] = [(hom, 1)]
    while queue:
        parent, depth = queue.pop(0)
        if depth > switching.depth:
            continue
        candidates = [
            ev for ev in parent.events
            if ev.kind is EventKind.BRANCH_POINT and ev.multiplicity == 1
            and ev.param_value != parent.landing_value
        ][: switching.max_events_per_branch]
        for ev in candidates:
            for direction in switching.directions:
                try:
                    child = switch_branch(
                        problem, ev, direction, settings,
                        stop_on_homogeneous=parent.origin == "trivial",
                    )
                except SwitchFailureException as exc:
                    diagram.switch_failures[f"{ev.event_id}:{direction}"] = exc.message
                    logger.warning(f"switching at {ev.event_id} ({direction:+d}) failed: "
                                   f"{exc.message}")
                    continue
                diagram.branches.append(child)
                queue.append((child, depth + 1))
    return diagram
