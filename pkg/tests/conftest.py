"""Pytest configuration and fixtures for xdcont tests."""
import logging
import math
from typing import Dict, Sequence

import numpy as np
import pytest

from xdcont.config import settings
from xdcont.continuation import (
    Branch,
    BranchPoint,
    BranchStatus,
    ContinuationProblem,
    ContinuationSettings,
    EventKind,
    EventRecord,
)
from xdcont.mesh_fem import DomainKind, DomainSpec, build_interval_mesh, build_rectangle_mesh
from xdcont.models import Measures, ModelTag, Params, State

# Parameters of the reference weak-competition study: u* = 13/8, v* = 1/8.
REFERENCE = dict(d=0.04, d12=3.0, r1=5.0, r2=2.0, a1=3.0, a2=3.0, b1=1.0, b2=1.0, M=1.0, eps=1e-3)

U_STAR = 13 / 8
V_STAR = 1 / 8


def discrete_eigenvalue(n: int, nodes: int, length: float = 1.0) -> float:
    """n-th Neumann eigenvalue of the consistent-mass P1 discretization on a uniform grid."""
    h = length / (nodes - 1)
    c = math.cos(n * math.pi * h / length)
    return 6.0 / h**2 * (1 - c) / (2 + c)


# Test data factories
class TestDataFactory:
    """Factory for creating test data."""

    @staticmethod
    def create_params(**kwargs) -> Params:
        """Create reference parameters with overrides."""
        data: Dict = dict(REFERENCE)
        data.update(kwargs)
        return Params(**data)

    @staticmethod
    def create_settings(**kwargs) -> ContinuationSettings:
        """Create continuation settings with overrides."""
        defaults: Dict = {"param_range": (0.003, 0.04)}
        defaults.update(kwargs)
        return ContinuationSettings(**defaults)

    @staticmethod
    def create_branch_point(param: float, n_unstable: int = 0, size: int = 4) -> BranchPoint:
        """Create a placeholder branch point at ``param``."""
        state = State(np.ones(size), param, ModelTag.CROSS, "r1")
        tangent = np.zeros(size + 1)
        tangent[-1] = 1.0
        return BranchPoint(state, Measures(0.0, 1.0, 1.0), n_unstable, tangent, step_index=0)

    @staticmethod
    def create_branch(
        bp_values: Sequence[float] = (),
        origin: str = "trivial",
        origin_value=None,
        status: BranchStatus = BranchStatus.LEFT_RANGE,
        landing_value=None,
        label: str = "hom",
    ) -> Branch:
        """Create a branch whose events are branch points at ``bp_values``."""
        events = [
            EventRecord(
                EventKind.BRANCH_POINT,
                value,
                TestDataFactory.create_branch_point(value),
                (1.0, -1.0),
                event_id=f"{label}:{i}",
            )
            for i, value in enumerate(bp_values)
        ]
        points = [TestDataFactory.create_branch_point(v) for v in (bp_values or (1.0,))]
        return Branch(points, events, origin, label, status, landing_value, origin_value)


@pytest.fixture
def test_data_factory():
    """Test data factory fixture."""
    return TestDataFactory


@pytest.fixture
def reference_params() -> Params:
    return TestDataFactory.create_params()


@pytest.fixture
def interval_mesh():
    """26-node mesh of the unit interval."""
    return build_interval_mesh(1.0, 26)


@pytest.fixture
def small_interval_mesh():
    return build_interval_mesh(1.0, 11)


@pytest.fixture
def rectangle_spec() -> DomainSpec:
    return DomainSpec(DomainKind.RECTANGLE, 1.0, 4.0)


@pytest.fixture
def small_rectangle_mesh(rectangle_spec):
    """Coarse 1 x 4 rectangle with equal spacing in x and y."""
    return build_rectangle_mesh(rectangle_spec, 5, 17)


@pytest.fixture
def cross_problem(interval_mesh, reference_params) -> ContinuationProblem:
    return ContinuationProblem(interval_mesh, reference_params, ModelTag.CROSS, "d")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# Parametrized fixtures for different test scenarios
@pytest.fixture(params=[ModelTag.CROSS, ModelTag.FAST])
def model_tag(request):
    """Parametrized fixture for both model variants."""
    return request.param


@pytest.fixture(params=["interval", "rectangle"])
def any_mesh(request, small_interval_mesh, small_rectangle_mesh):
    """Parametrized fixture for 1D and 2D meshes."""
    return small_interval_mesh if request.param == "interval" else small_rectangle_mesh


# Configuration override for testing
@pytest.fixture(autouse=True)
def override_settings_for_tests(monkeypatch, tmp_path):
    """Keep outputs inside the test's temporary directory."""
    monkeypatch.setattr(settings, "output_dir", str(tmp_path / "output"))
    monkeypatch.setattr(settings, "threads", 1)
    root = logging.getLogger()
    handlers = list(root.handlers)
    yield
    root.handlers[:] = handlers
    root.setLevel(logging.WARNING)
