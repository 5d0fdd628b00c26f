"""
Steady-state residuals of the SKT cross-diffusion system and of its
three-component fast-reaction relaxation, in the weak (mass-weighted) P1 form

    G(x) = A(x) x - Mmass f(x)

where A(x) holds the diffusion operators and f the nodal reaction terms.
Zeros of G are steady states; -J is the linearization of the time derivative.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, NamedTuple, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from .mesh_fem import (
    Mesh,
    assemble,
    coefficient_derivative,
    point_to_center,
    stiffness_matrix,
)
from .utils.error_handlers import (
    DivergenceException,
    InvalidArgumentException,
    SingularParametersException,
)

logger = logging.getLogger(__name__)

PARAM_NAMES = ("d", "d1", "d2", "d12", "r1", "r2", "a1", "a2", "b1", "b2", "M", "eps")

DIVERGENCE_LIMIT = 1e8


class ModelTag(str, Enum):
    CROSS = "cross"
    FAST = "fast"

    @property
    def n_components(self) -> int:
        return 2 if self is ModelTag.CROSS else 3

    @property
    def component_names(self) -> Tuple[str, ...]:
        return ("u", "v") if self is ModelTag.CROSS else ("u1", "u2", "v")


class Params(BaseModel):
    """Model coefficients plus the designated continuation parameter ``active``.

    With ``tie`` set, the name ``d`` addresses d1 = d2 together.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    d1: float = Field(0.04, gt=0)
    d2: float = Field(0.04, gt=0)
    d12: float = Field(3.0, ge=0)
    r1: float = Field(5.0, gt=0)
    r2: float = Field(2.0, gt=0)
    a1: float = Field(3.0, gt=0)
    a2: float = Field(3.0, gt=0)
    b1: float = Field(1.0, gt=0)
    b2: float = Field(1.0, gt=0)
    M: float = Field(1.0, gt=0)
    eps: float = Field(1e-3, gt=0)
    tie: bool = True
    active: str = "d"

    @model_validator(mode="before")
    @classmethod
    def _expand_tied_diffusion(cls, data: Any) -> Any:
        if isinstance(data, dict) and "d" in data:
            data = dict(data)
            d = data.pop("d")
            data.setdefault("d1", d)
            data.setdefault("d2", d)
        return data

    @field_validator("active")
    @classmethod
    def _known_parameter(cls, value: str) -> str:
        if value not in PARAM_NAMES:
            raise ValueError(f"unknown parameter {value!r}; expected one of {PARAM_NAMES}")
        return value

    @model_validator(mode="after")
    def _check_tie(self) -> "Params":
        if self.tie and self.d1 != self.d2:
            raise ValueError("tie requires d1 == d2")
        if self.active == "d" and not self.tie:
            raise ValueError("parameter 'd' requires tie = true")
        return self

    @property
    def weak_competition(self) -> bool:
        return self.a1 * self.a2 - self.b1 * self.b2 > 0

    def value(self, name: str) -> float:
        if name not in PARAM_NAMES:
            raise InvalidArgumentException(f"unknown parameter {name!r}")
        return float(self.d1 if name == "d" else getattr(self, name))

    def with_value(self, name: str, value: float) -> "Params":
        """Validated copy with ``name`` set; tied d1/d2 move only through ``d``."""
        if name not in PARAM_NAMES:
            raise InvalidArgumentException(f"unknown parameter {name!r}")
        if self.tie and name in ("d1", "d2"):
            raise InvalidArgumentException(
                f"{name} is tied to the other diffusion; use 'd' or set tie = false"
            )
        value = float(value)
        update = {"d1": value, "d2": value} if name == "d" else {name: value}
        try:
            return Params.model_validate({**self.model_dump(), **update})
        except ValidationError as exc:
            raise InvalidArgumentException(
                f"invalid value {value!r} for {name}",
                details={"parameter": name, "value": value,
                         "errors": [err["msg"] for err in exc.errors()]},
            ) from exc


@dataclass(frozen=True, eq=False)
class State:
    """Concatenated nodal fields, component-major: (u, v) or (u1, u2, v)."""

    fields: np.ndarray
    param_value: float
    model_tag: ModelTag
    param_name: str = "d"

    def components(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(self.fields, self.model_tag.n_components))

    def with_fields(self, fields: np.ndarray, param_value: float) -> "State":
        return replace(self, fields=np.asarray(fields, dtype=float), param_value=float(param_value))


class Measures(NamedTuple):
    v_at_origin: float
    u_L1: float
    u_L2: float


class CrossEquilibrium(NamedTuple):
    u: float
    v: float
    admissible: bool


class FastEquilibrium(NamedTuple):
    u1: float
    u2: float
    v: float
    admissible: bool


class RelaxationResult(NamedTuple):
    state: State
    converged: bool
    steps: int
    residual_norm: float


def effective_params(p: Params, s: State) -> Params:
    """Params with the state's parameter value written into its active slot."""
    return p.with_value(s.param_name, s.param_value)


def _check_size(mesh: Mesh, s: State) -> None:
    expected = s.model_tag.n_components * mesh.node_count
    if s.fields.shape != (expected,):
        raise InvalidArgumentException(
            f"{s.model_tag.value} state has shape {s.fields.shape}, expected ({expected},)"
        )


def equilibrium_cross(p: Params) -> CrossEquilibrium:
    det = p.a1 * p.a2 - p.b1 * p.b2
    scale = max(abs(p.a1 * p.a2), abs(p.b1 * p.b2))
    if abs(det) <= 1e-14 * scale:
        raise SingularParametersException(
            "a1*a2 - b1*b2 vanishes; no coexistence equilibrium",
            details={"a1": p.a1, "a2": p.a2, "b1": p.b1, "b2": p.b2},
        )
    u = (p.r1 * p.a2 - p.r2 * p.b1) / det
    v = (p.r2 * p.a1 - p.r1 * p.b2) / det
    return CrossEquilibrium(u, v, u > 0 and v > 0)


def equilibrium_fast(p: Params) -> FastEquilibrium:
    u, v, admissible = equilibrium_cross(p)
    return FastEquilibrium(u * (1 - v / p.M), u * v / p.M, v, admissible)


def homogeneous_state(mesh: Mesh, p: Params, model: ModelTag, param_name: str) -> State:
    model = ModelTag(model)
    if model is ModelTag.CROSS:
        eq: Tuple[float, ...] = equilibrium_cross(p)[:2]
    else:
        eq = equilibrium_fast(p)[:3]
    fields = np.concatenate([np.full(mesh.node_count, c) for c in eq])
    return State(fields, p.value(param_name), model, param_name)


def block_mass(mesh: Mesh, n_components: int) -> sp.csr_matrix:
    return sp.kron(sp.identity(n_components), mesh.workspace.mass, format="csr")


def _mass_diag(mesh: Mesh, g: np.ndarray) -> sp.csr_matrix:
    """Mmass · diag(g): the load derivative for a nodal reaction coefficient g."""
    return (mesh.workspace.mass @ sp.diags(g)).tocsr()


def negative_coefficient(mesh: Mesh, p: Params, s: State) -> bool:
    """True when c(v) = d1 + d12 v is negative on some element (cross model)."""
    if s.model_tag is not ModelTag.CROSS:
        return False
    q = effective_params(p, s)
    v = s.components()[1]
    return bool(np.any(q.d1 + q.d12 * point_to_center(mesh, v) < 0))


def residual_cross(mesh: Mesh, p: Params, s: State) -> np.ndarray:
    if s.model_tag is not ModelTag.CROSS:
        raise InvalidArgumentException("residual_cross needs a cross state")
    _check_size(mesh, s)
    q = effective_params(p, s)
    u, v = s.components()

    c = q.d1 + q.d12 * point_to_center(mesh, v)
    if np.any(c < 0):
        logger.debug("negative cross-diffusion coefficient c(v) on some elements")
    c_tilde = q.d12 * point_to_center(mesh, u)

    f1 = (q.r1 - q.a1 * u - q.b1 * v) * u
    f2 = (q.r2 - q.b2 * u - q.a2 * v) * v
    ops21 = assemble(mesh, c, 1.0, f1)
    K12 = stiffness_matrix(mesh, c_tilde)
    ops2 = assemble(mesh, 1.0, 1.0, f2)

    G1 = ops21.K @ u + K12 @ v - ops21.F
    G2 = q.d2 * (ops2.K @ v) - ops2.F
    return np.concatenate([G1, G2])


def jacobian_cross(mesh: Mesh, p: Params, s: State) -> sp.csr_matrix:
    if s.model_tag is not ModelTag.CROSS:
        raise InvalidArgumentException("jacobian_cross needs a cross state")
    _check_size(mesh, s)
    q = effective_params(p, s)
    u, v = s.components()
    K = mesh.workspace.stiffness

    K21 = stiffness_matrix(mesh, q.d1 + q.d12 * point_to_center(mesh, v))
    K12 = stiffness_matrix(mesh, q.d12 * point_to_center(mesh, u))
    dK12v_du = coefficient_derivative(mesh, v, q.d12)
    dK21u_dv = coefficient_derivative(mesh, u, q.d12)

    df1_du = q.r1 - 2 * q.a1 * u - q.b1 * v
    df1_dv = -q.b1 * u
    df2_du = -q.b2 * v
    df2_dv = q.r2 - q.b2 * u - 2 * q.a2 * v

    return sp.bmat(
        [
            [K21 + dK12v_du - _mass_diag(mesh, df1_du), dK21u_dv + K12 - _mass_diag(mesh, df1_dv)],
            [-_mass_diag(mesh, df2_du), q.d2 * K - _mass_diag(mesh, df2_dv)],
        ],
        format="csr",
    )


def _exchange(q: Params, u1: np.ndarray, u2: np.ndarray, v: np.ndarray) -> np.ndarray:
    """q(u1, u2, v) = u2 (1 - v/M) - u1 v/M."""
    return u2 * (1 - v / q.M) - u1 * v / q.M


def _fast_diffusions(q: Params) -> Tuple[float, float, float]:
    return q.d1, q.d1 + q.d12 * q.M, q.d2


def residual_fast(mesh: Mesh, p: Params, s: State) -> np.ndarray:
    if s.model_tag is not ModelTag.FAST:
        raise InvalidArgumentException("residual_fast needs a fast state")
    _check_size(mesh, s)
    q = effective_params(p, s)
    if not q.eps > 0:
        raise InvalidArgumentException(f"eps must be positive, got {q.eps}")
    u1, u2, v = s.components()
    u = u1 + u2
    g = q.r1 - q.a1 * u - q.b1 * v
    ex = _exchange(q, u1, u2, v) / q.eps
    loads = (g * u1 + ex, g * u2 - ex, (q.r2 - q.b2 * u - q.a2 * v) * v)

    K, M = mesh.workspace.stiffness, mesh.workspace.mass
    parts = [
        dk * (K @ w) - M @ f for dk, w, f in zip(_fast_diffusions(q), (u1, u2, v), loads)
    ]
    return np.concatenate(parts)


def jacobian_fast(mesh: Mesh, p: Params, s: State) -> sp.csr_matrix:
    if s.model_tag is not ModelTag.FAST:
        raise InvalidArgumentException("jacobian_fast needs a fast state")
    _check_size(mesh, s)
    q = effective_params(p, s)
    if not q.eps > 0:
        raise InvalidArgumentException(f"eps must be positive, got {q.eps}")
    u1, u2, v = s.components()
    u = u1 + u2
    g = q.r1 - q.a1 * u - q.b1 * v
    h = q.r2 - q.b2 * u - q.a2 * v
    k = 1.0 / (q.M * q.eps)

    # rows: d f_i / d (u1, u2, v)
    partials = [
        [g - q.a1 * u1 - v * k, -q.a1 * u1 + (1 - v / q.M) / q.eps, -q.b1 * u1 - u * k],
        [-q.a1 * u2 + v * k, g - q.a1 * u2 - (1 - v / q.M) / q.eps, -q.b1 * u2 + u * k],
        [-q.b2 * v, -q.b2 * v, h - q.a2 * v],
    ]
    K = mesh.workspace.stiffness
    blocks = []
    for i, dk in enumerate(_fast_diffusions(q)):
        row = []
        for j in range(3):
            block = -_mass_diag(mesh, partials[i][j])
            if i == j:
                block = block + dk * K
            row.append(block)
        blocks.append(row)
    return sp.bmat(blocks, format="csr")


def residual(mesh: Mesh, p: Params, s: State) -> np.ndarray:
    if s.model_tag is ModelTag.CROSS:
        return residual_cross(mesh, p, s)
    return residual_fast(mesh, p, s)


def jacobian(mesh: Mesh, p: Params, s: State) -> sp.csr_matrix:
    if s.model_tag is ModelTag.CROSS:
        return jacobian_cross(mesh, p, s)
    return jacobian_fast(mesh, p, s)


def total_u(s: State) -> np.ndarray:
    parts = s.components()
    return parts[0] if s.model_tag is ModelTag.CROSS else parts[0] + parts[1]


def measures(mesh: Mesh, s: State) -> Measures:
    _check_size(mesh, s)
    M = mesh.workspace.mass
    u = total_u(s)
    v = s.components()[-1]
    u_L1 = float(np.sum(M @ np.abs(u)))
    u_L2 = math.sqrt(max(float(u @ (M @ u)), 0.0))
    return Measures(float(v[0]), u_L1, u_L2)


def qss_defect(p: Params, s: State) -> float:
    """max |u2 (1 - v/M) - u1 v/M| over the nodes of a fast-model state."""
    if s.model_tag is not ModelTag.FAST:
        raise InvalidArgumentException("qss_defect needs a fast state")
    q = effective_params(p, s)
    u1, u2, v = s.components()
    return float(np.max(np.abs(_exchange(q, u1, u2, v))))


def reduce_fast_state(s: State) -> State:
    """Map (u1, u2, v) to the cross-diffusion state (u1 + u2, v)."""
    if s.model_tag is not ModelTag.FAST:
        raise InvalidArgumentException("reduce_fast_state needs a fast state")
    u1, u2, v = s.components()
    return State(np.concatenate([u1 + u2, v]), s.param_value, ModelTag.CROSS, s.param_name)


def inhomogeneity(s: State) -> float:
    """Largest spatial spread (max - min) over the components."""
    return float(max(np.ptp(c) for c in s.components()))


def within_bounds(p: Params, s: State) -> bool:
    """Nonnegativity, and 0 <= u2 <= M for the fast model."""
    if np.any(s.fields < 0):
        return False
    if s.model_tag is ModelTag.FAST:
        q = effective_params(p, s)
        return bool(np.all(s.components()[1] <= q.M))
    return True


def admissibility(p: Params) -> Dict[str, bool]:
    eq = equilibrium_cross(p)
    return {"weak_competition": p.weak_competition, "admissible": eq.admissible}


def _implicit_operator(mesh: Mesh, q: Params, s: State) -> sp.csr_matrix:
    """Linear part treated implicitly: diffusion (frozen coefficients) and, for the
    fast model, the exchange term with v frozen."""
    K = mesh.workspace.stiffness
    if s.model_tag is ModelTag.CROSS:
        u, v = s.components()
        K21 = stiffness_matrix(mesh, q.d1 + q.d12 * point_to_center(mesh, v))
        K12 = stiffness_matrix(mesh, q.d12 * point_to_center(mesh, u))
        return sp.bmat([[K21, K12], [None, q.d2 * K]], format="csr")

    v = s.components()[2]
    w = v / q.M
    d1, d2u, dv = _fast_diffusions(q)
    out = _mass_diag(mesh, w / q.eps)
    back = _mass_diag(mesh, (1 - w) / q.eps)
    return sp.bmat(
        [[d1 * K + out, -back, None], [-out, d2u * K + back, None], [None, None, dv * K]],
        format="csr",
    )


def _explicit_load(q: Params, s: State) -> np.ndarray:
    if s.model_tag is ModelTag.CROSS:
        u, v = s.components()
        return np.concatenate(
            [(q.r1 - q.a1 * u - q.b1 * v) * u, (q.r2 - q.b2 * u - q.a2 * v) * v]
        )
    u1, u2, v = s.components()
    u = u1 + u2
    g = q.r1 - q.a1 * u - q.b1 * v
    return np.concatenate([g * u1, g * u2, (q.r2 - q.b2 * u - q.a2 * v) * v])


def time_relax(
    mesh: Mesh, p: Params, s0: State, dt: float, T: float, tol: float = 1e-8
) -> RelaxationResult:
    """First-order IMEX integration of Mmass x' = -G(x) up to time T.

    Each step solves (Mmass + dt A(x_n)) x_{n+1} = Mmass x_n + dt Mmass f(x_n)
    with A assembled at x_n.
    """
    if not dt > 0:
        raise InvalidArgumentException(f"dt must be positive, got {dt}")
    _check_size(mesh, s0)
    q = effective_params(p, s0)
    Mb = block_mass(mesh, s0.model_tag.n_components)
    steps = max(int(math.ceil(T / dt - 1e-12)), 0)

    s = s0
    for step in range(steps):
        A = _implicit_operator(mesh, q, s)
        rhs = Mb @ (s.fields + dt * _explicit_load(q, s))
        x = spla.spsolve((Mb + dt * A).tocsc(), rhs)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise DivergenceException(
                "time relaxation diverged",
                details={"step": step, "dt": dt, "param_value": s.param_value},
            )
        s = s.with_fields(x, s.param_value)

    norm = float(np.max(np.abs(residual(mesh, p, s))))
    logger.debug(f"time_relax finished {steps} steps, residual {norm:.3e}")
    return RelaxationResult(s, norm < tol, steps, norm)


def jacobian_defect(
    mesh: Mesh, p: Params, s: State, rng: np.random.Generator, directions: int = 20
) -> float:
    """Largest relative gap between J·z and a central difference of G along random z."""
    _check_size(mesh, s)
    J = jacobian(mesh, p, s)
    scale = max(1.0, float(np.max(np.abs(s.fields))))
    worst = 0.0
    for _ in range(directions):
        z = rng.standard_normal(s.fields.size)
        h = 1e-6 * scale / float(np.max(np.abs(z)))
        plus = residual(mesh, p, s.with_fields(s.fields + h * z, s.param_value))
        minus = residual(mesh, p, s.with_fields(s.fields - h * z, s.param_value))
        fd = (plus - minus) / (2 * h)
        exact = J @ z
        worst = max(worst, float(np.max(np.abs(fd - exact)) / max(np.max(np.abs(exact)), 1e-14)))
    return worst
