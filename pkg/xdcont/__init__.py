"""
xdcont
Bifurcation diagrams of the SKT cross-diffusion system and its fast-reaction relaxation
"""

__version__ = "0.1.0"

from .continuation import (
    Branch,
    BranchPoint,
    ContinuationProblem,
    ContinuationSettings,
    EventKind,
    EventRecord,
    continue_branch,
    full_diagram,
    init_from_homogeneous,
    locate_event,
    switch_branch,
)
from .mesh_fem import DomainKind, DomainSpec, Mesh, build_mesh
from .models import ModelTag, Params, State
from .turing import critical_d, predict_bifurcations

__all__ = [
    "Branch",
    "BranchPoint",
    "ContinuationProblem",
    "ContinuationSettings",
    "DomainKind",
    "DomainSpec",
    "EventKind",
    "EventRecord",
    "Mesh",
    "ModelTag",
    "Params",
    "State",
    "build_mesh",
    "continue_branch",
    "critical_d",
    "full_diagram",
    "init_from_homogeneous",
    "locate_event",
    "predict_bifurcations",
    "switch_branch",
]
