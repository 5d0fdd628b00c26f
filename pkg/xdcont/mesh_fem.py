"""
Uniform P1 meshes on intervals and rectangles, and finite element assembly
of coefficient-weighted stiffness, mass and load operators with homogeneous
Neumann boundary conditions.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .utils.error_handlers import InvalidArgumentException

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Above this many nodes the discrete Laplacian spectrum is computed with ARPACK.
DENSE_EIG_LIMIT = 2000


class DomainKind(str, Enum):
    INTERVAL = "interval"
    RECTANGLE = "rectangle"


@dataclass(frozen=True)
class DomainSpec:
    """Interval (0, Lx) + offset or axis-aligned rectangle Lx x Ly.

    The rectangle defaults to the centered box [-Lx/2, Lx/2] x [-Ly/2, Ly/2].
    """

    kind: DomainKind
    Lx: float
    Ly: Optional[float] = None
    offset: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DomainKind(self.kind))
        if not self.Lx > 0:
            raise InvalidArgumentException(f"Lx must be positive, got {self.Lx}")
        if self.kind is DomainKind.RECTANGLE:
            if self.Ly is None or not self.Ly > 0:
                raise InvalidArgumentException(f"Ly must be positive, got {self.Ly}")
            if self.offset is None:
                object.__setattr__(self, "offset", (-self.Lx / 2, -self.Ly / 2))
        elif self.offset is None:
            object.__setattr__(self, "offset", (0.0,))
        object.__setattr__(self, "offset", tuple(float(o) for o in self.offset))
        if len(self.offset) != self.dim:
            raise InvalidArgumentException(
                f"offset needs {self.dim} coordinates, got {len(self.offset)}"
            )

    @property
    def dim(self) -> int:
        return 1 if self.kind is DomainKind.INTERVAL else 2

    @property
    def area(self) -> float:
        """|Ω|: length of the interval or area of the rectangle."""
        if self.kind is DomainKind.INTERVAL:
            return float(self.Lx)
        return float(self.Lx) * float(self.Ly)  # type: ignore[arg-type]


@dataclass(frozen=True)
class FemWorkspace:
    """Per-mesh assembly scratch: unit-coefficient local matrices and COO index maps."""

    local_stiffness: np.ndarray
    local_mass: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix


@dataclass(frozen=True, eq=False)
class Mesh:
    """P1 triangulation. Node ordering is x-fastest; node 0 is the lower-left corner."""

    nodes: np.ndarray
    elements: np.ndarray
    element_measures: np.ndarray
    domain: DomainSpec
    shape: Tuple[int, ...] = field(default=())

    @property
    def node_count(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def element_count(self) -> int:
        return int(self.elements.shape[0])

    @property
    def dim(self) -> int:
        return int(self.nodes.shape[1])

    @cached_property
    def workspace(self) -> FemWorkspace:
        return _build_workspace(self)


@dataclass(frozen=True)
class AssembledOperators:
    K: sp.csr_matrix
    Mmass: sp.csr_matrix
    F: np.ndarray


def build_interval_mesh(L: float, n: int, offset: float = 0.0) -> Mesh:
    """Uniform mesh of n nodes and n-1 segments on (offset, offset + L)."""
    if int(n) != n or n < 2:
        raise InvalidArgumentException(f"interval mesh needs n >= 2 nodes, got {n}")
    if not L > 0:
        raise InvalidArgumentException(f"interval length must be positive, got {L}")
    n = int(n)
    spec = DomainSpec(DomainKind.INTERVAL, float(L), offset=(offset,))
    x = offset + np.linspace(0.0, L, n)
    elements = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    measures = np.full(n - 1, L / (n - 1))
    return Mesh(x[:, None], elements, measures, spec, (n,))


def build_rectangle_mesh(spec: DomainSpec, nx: int, ny: int) -> Mesh:
    """Structured nx x ny grid, each cell split along its lower-left/upper-right diagonal."""
    if spec.kind is not DomainKind.RECTANGLE:
        raise InvalidArgumentException("build_rectangle_mesh needs a rectangle domain")
    for name, count in (("nx", nx), ("ny", ny)):
        if int(count) != count or count < 2:
            raise InvalidArgumentException(f"{name} must be an integer >= 2, got {count}")
    nx, ny = int(nx), int(ny)
    ox, oy = spec.offset  # type: ignore[misc]
    x = ox + np.linspace(0.0, spec.Lx, nx)
    y = oy + np.linspace(0.0, spec.Ly, ny)  # type: ignore[arg-type]
    X, Y = np.meshgrid(x, y)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    n00 = (j * nx + i).ravel()
    n10 = n00 + 1
    n01 = n00 + nx
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)

    cell_area = (spec.Lx / (nx - 1)) * (spec.Ly / (ny - 1))  # type: ignore[operator]
    measures = np.full(elements.shape[0], cell_area / 2)
    return Mesh(nodes, elements, measures, spec, (nx, ny))


def build_mesh(spec: DomainSpec, nx: int, ny: Optional[int] = None) -> Mesh:
    if spec.kind is DomainKind.INTERVAL:
        return build_interval_mesh(spec.Lx, nx, offset=spec.offset[0])  # type: ignore[index]
    if ny is None:
        raise InvalidArgumentException("rectangle meshes need ny")
    return build_rectangle_mesh(spec, nx, ny)


def point_to_center(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    """Interpolate nodal values to element centers (mean of the vertex values)."""
    nodal = np.asarray(nodal, dtype=float)
    if nodal.shape != (mesh.node_count,):
        raise InvalidArgumentException(
            f"nodal vector has shape {nodal.shape}, expected ({mesh.node_count},)"
        )
    return nodal[mesh.elements].mean(axis=1)


def _build_workspace(mesh: Mesh) -> FemWorkspace:
    nv = mesh.dim + 1
    coords = mesh.nodes[mesh.elements]  # (ne, nv, dim)
    B = np.concatenate([np.ones((mesh.element_count, nv, 1)), coords], axis=2)
    grads = np.linalg.inv(B)[:, 1:, :]  # (ne, dim, nv)
    measures = mesh.element_measures
    local_stiffness = measures[:, None, None] * np.einsum("eki,ekj->eij", grads, grads)

    template = (np.ones((nv, nv)) + np.eye(nv)) / ((mesh.dim + 1) * (mesh.dim + 2))
    local_mass = measures[:, None, None] * template[None, :, :]

    rows = np.repeat(mesh.elements, nv, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nv)).ravel()
    shape = (mesh.node_count, mesh.node_count)
    stiffness = sp.coo_matrix((local_stiffness.ravel(), (rows, cols)), shape=shape).tocsr()
    mass = sp.coo_matrix((local_mass.ravel(), (rows, cols)), shape=shape).tocsr()
    return FemWorkspace(local_stiffness, local_mass, rows, cols, stiffness, mass)


def _element_values(mesh: Mesh, values: ArrayLike, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.element_count, float(arr))
    if arr.shape != (mesh.element_count,):
        raise InvalidArgumentException(
            f"{name} has shape {arr.shape}, expected scalar or ({mesh.element_count},)"
        )
    return arr


def stiffness_matrix(mesh: Mesh, c: ArrayLike) -> sp.csr_matrix:
    """K_ij = ∫ c ∇φ_i·∇φ_j for an element-wise constant coefficient c."""
    ws = mesh.workspace
    ce = _element_values(mesh, c, "c")
    data = (ce[:, None, None] * ws.local_stiffness).ravel()
    shape = (mesh.node_count, mesh.node_count)
    return sp.coo_matrix((data, (ws.rows, ws.cols)), shape=shape).tocsr()


def mass_matrix(mesh: Mesh, a: ArrayLike = 1.0) -> sp.csr_matrix:
    """M_ij = ∫ a φ_i φ_j for an element-wise constant coefficient a."""
    ws = mesh.workspace
    ae = _element_values(mesh, a, "a")
    data = (ae[:, None, None] * ws.local_mass).ravel()
    shape = (mesh.node_count, mesh.node_count)
    return sp.coo_matrix((data, (ws.rows, ws.cols)), shape=shape).tocsr()


def assemble(mesh: Mesh, c: ArrayLike, a: ArrayLike, f: ArrayLike) -> AssembledOperators:
    """Assemble stiffness, mass and load for -∇·(c∇w) + a w = f with Neumann data.

    The load integrates the P1 interpolant of the nodal source f exactly.
    """
    fn = np.asarray(f, dtype=float)
    if fn.ndim == 0:
        fn = np.full(mesh.node_count, float(fn))
    if fn.shape != (mesh.node_count,):
        raise InvalidArgumentException(
            f"f has shape {fn.shape}, expected scalar or ({mesh.node_count},)"
        )
    K = stiffness_matrix(mesh, c)
    Mmass = mass_matrix(mesh, a)
    F = mesh.workspace.mass @ fn
    return AssembledOperators(K, Mmass, F)


def coefficient_derivative(mesh: Mesh, w: np.ndarray, scale: float) -> sp.csr_matrix:
    """Derivative of z ↦ K(c(z)) w for c = const + scale * point_to_center(z).

    Entry (i, j) sums scale / (dim + 1) * (S_e w_e)_i over elements e containing node j,
    where S_e is the unit-coefficient local stiffness.
    """
    ws = mesh.workspace
    nv = mesh.dim + 1
    local = np.einsum("eij,ej->ei", ws.local_stiffness, w[mesh.elements])
    data = np.repeat(local * (scale / nv), nv, axis=1).ravel()
    shape = (mesh.node_count, mesh.node_count)
    return sp.coo_matrix((data, (ws.rows, ws.cols)), shape=shape).tocsr()


def laplacian_eigenvalues(mesh: Mesh, count: int) -> np.ndarray:
    """Smallest ``count`` eigenvalues of K x = λ M x (Neumann), ascending; λ_0 ≈ 0."""
    if count < 1:
        raise InvalidArgumentException(f"count must be positive, got {count}")
    ws = mesh.workspace
    count = min(count, mesh.node_count)
    if mesh.node_count <= DENSE_EIG_LIMIT:
        values = sla.eigh(
            ws.stiffness.toarray(),
            ws.mass.toarray(),
            eigvals_only=True,
            subset_by_index=[0, count - 1],
        )
    else:
        v0 = np.ones(mesh.node_count) / np.sqrt(mesh.node_count)
        values = spla.eigsh(
            ws.stiffness.tocsc(), k=count, M=ws.mass.tocsc(), sigma=-1.0, which="LM", v0=v0
        )[0]
    values = np.sort(np.real(values))
    values[np.abs(values) < 1e-10] = 0.0
    return values
