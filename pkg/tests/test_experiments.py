"""
Tests for epsilon sweeps, convergence fits and ring counting
"""

from pathlib import Path

import numpy as np
import pytest

from xdcont.config import load_config
from xdcont.continuation import (
    BranchStatus,
    ContinuationProblem,
    ContinuationSettings,
    DetectFlags,
    switch_branch,
)
from xdcont.experiments import (
    SweepResult,
    SweepRow,
    branch_point_values,
    fit_line,
    fit_order,
    homogeneous_branch,
    reference_values,
    ring_report,
    ring_sequence,
    sweep_epsilon,
)
from xdcont.mesh_fem import laplacian_eigenvalues
from xdcont.models import ModelTag, inhomogeneity, qss_defect, reduce_fast_state, residual
from xdcont.turing import critical_d
from xdcont.utils import InsufficientDataException, InvalidArgumentException


def _result(diffs_by_event):
    rows = []
    reference = {}
    for i, (label, pairs) in enumerate(diffs_by_event.items()):
        reference[label] = 1.0
        for eps, diff in pairs:
            value = None if diff is None else 1.0 - diff
            rows.append(SweepRow(eps, label, "branch_point", value, 1.0, i + 1))
    return SweepResult("d", rows, reference)


class TestFits:
    """Log-log least squares"""

    def test_first_order_line(self):
        """|diff| = 2 eps has slope 1 and a perfect fit"""
        eps = [1e-1, 1e-2, 1e-3]
        fit = fit_line(eps, [2 * e for e in eps])
        assert fit.slope == pytest.approx(1.0)
        assert fit.intercept == pytest.approx(np.log(2.0))
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.n_rows == 3

    def test_insufficient_rows_raise(self):
        """Fewer than three usable rows cannot be fitted"""
        result = _result({"B1": [(1e-2, 1e-2), (1e-3, None), (1e-4, 1e-4)]})
        with pytest.raises(InsufficientDataException):
            fit_order(result)

    def test_insufficient_rows_skipped(self):
        """With skipping, events with enough rows are still fitted"""
        result = _result({
            "B1": [(1e-2, 1e-2), (1e-3, None)],
            "B2": [(1e-2, 3e-4), (1e-3, 3e-6), (1e-4, 3e-8)],
        })
        fits = fit_order(result, skip_insufficient=True)
        assert list(fits) == ["B2"]
        assert fits["B2"].slope == pytest.approx(2.0)

    def test_non_monotone_count(self):
        """A growing distance between consecutive eps is counted"""
        result = _result({"B1": [(1e-1, 1e-2), (1e-2, 2e-2), (1e-3, 1e-3)]})
        assert result.non_monotone("B1") == 1
        assert [r.eps for r in result.rows_for("B1")] == [1e-1, 1e-2, 1e-3]

    def test_event_order(self):
        """Labels sort numerically"""
        result = _result({"B10": [], "B2": [], "B1": []})
        assert result.events() == ["B1", "B2", "B10"]


class TestRingReport:
    """Loop counting on synthetic diagrams"""

    def test_closed_and_open(self, test_data_factory):
        """Two halves of one ring count once; an open branch is a segment"""
        hom = test_data_factory.create_branch([0.032, 0.02, 0.011])
        ring_a = test_data_factory.create_branch(
            origin="switched-from:hom:0", origin_value=0.032,
            status=BranchStatus.RETURNED, landing_value=0.0201, label="hom:0+",
        )
        ring_b = test_data_factory.create_branch(
            origin="switched-from:hom:1", origin_value=0.02,
            status=BranchStatus.RETURNED, landing_value=0.0319, label="hom:1-",
        )
        open_branch = test_data_factory.create_branch(
            origin="switched-from:hom:2", origin_value=0.011, label="hom:2+",
        )
        report = ring_report([hom, ring_a, ring_b, open_branch])
        assert report.closed_loops == 1
        assert report.open_segments == 1
        assert report.loop_pairs == ((0, 1),)

    def test_return_to_origin_closes_a_ring(self, test_data_factory):
        """Both halves landing back at their own branch point form one ring there"""
        hom = test_data_factory.create_branch([0.032, 0.02])
        plus = test_data_factory.create_branch(
            origin="switched-from:hom:0", origin_value=0.032,
            status=BranchStatus.RETURNED, landing_value=0.0321, label="hom:0+",
        )
        minus = test_data_factory.create_branch(
            origin="switched-from:hom:0", origin_value=0.032,
            status=BranchStatus.RETURNED, landing_value=0.0319, label="hom:0-",
        )
        assert ring_report([hom, plus, minus]) == (1, 0, ((0, 0),))

    def test_no_trivial_branch(self, test_data_factory):
        """Without the homogeneous branch there is nothing to count"""
        child = test_data_factory.create_branch(origin="switched-from:x", origin_value=0.03)
        assert ring_report([child]) == (0, 0, ())


class TestSweep:
    """Epsilon sweeps of the fast model"""

    def test_reference_uses_discrete_eigenvalues(self, interval_mesh, reference_params):
        """For d the references are d_B at the mesh's own eigenvalues, descending"""
        settings = ContinuationSettings(param_range=(0.003, 0.04))
        reference = reference_values(interval_mesh, reference_params, "d", 0.04, settings, 3)
        lams = laplacian_eigenvalues(interval_mesh, 4)[1:]
        assert list(reference) == ["B1", "B2", "B3"]
        for value, lam in zip(reference.values(), lams):
            assert value == pytest.approx(critical_d(reference_params, lam), rel=1e-12)

    def test_rows_and_missing_events(self, mocker, interval_mesh, reference_params):
        """Each eps contributes one row per reference event; absent events have no value"""
        mocker.patch("xdcont.experiments.reference_values",
                     return_value={"B1": 0.03, "B2": 0.02})

        def located(mesh, p, param_name, eps, start_value, settings):
            values = [0.03 - 0.1 * eps]
            if eps > 1e-3:
                values.append(0.02 - 0.2 * eps)
            return values

        run = mocker.patch("xdcont.experiments._run_eps", side_effect=located)
        settings = ContinuationSettings()
        result = sweep_epsilon(interval_mesh, reference_params, "d", [1e-4, 1e-2, 1e-3],
                               0.04, settings)
        assert run.call_count == 3
        assert len(result.rows) == 6
        assert [r.eps for r in result.rows_for("B1")] == [1e-2, 1e-3, 1e-4]
        missing = [r for r in result.rows_for("B2") if r.value is None]
        assert [r.eps for r in missing] == [1e-3, 1e-4]
        assert fit_order(result, skip_insufficient=True)["B1"].slope == pytest.approx(1.0)

    @pytest.mark.parametrize("eps", [[], [1e-2, -1e-3], [0.0]])
    def test_invalid_eps(self, interval_mesh, reference_params, eps):
        """Empty or non-positive eps lists raise"""
        with pytest.raises(InvalidArgumentException):
            sweep_epsilon(interval_mesh, reference_params, "d", eps, 0.04, ContinuationSettings())

    @pytest.mark.slow
    def test_first_order_convergence_in_d(self, small_interval_mesh, reference_params):
        """Fast-model thresholds approach the cross-diffusion ones at first order in eps"""
        settings = ContinuationSettings(
            param_range=(0.02, 0.04), detect=DetectFlags(fold=False, hopf=False)
        )
        result = sweep_epsilon(small_interval_mesh, reference_params, "d", [1e-2, 5e-3, 2.5e-3],
                               0.04, settings, n_events=1)
        fit = fit_order(result)["B1"]
        assert 0.7 <= fit.slope <= 1.3


@pytest.mark.slow
class TestFastLimit:
    """Fast-reaction diagrams against their cross-diffusion limit"""

    @pytest.fixture
    def bp_settings(self):
        return ContinuationSettings(param_range=(0.003, 0.04),
                                    detect=DetectFlags(fold=False, hopf=False))

    def test_large_eps_has_no_branch_points(self, interval_mesh, reference_params, bp_settings):
        """At eps = 0.1 the homogeneous branch stays stable down to d = 0.003"""
        p = reference_params.with_value("eps", 0.1)
        branch = homogeneous_branch(interval_mesh, p, ModelTag.FAST, "d", 0.04, bp_settings)
        assert branch_point_values(branch) == []

    def test_first_threshold_appears_low_at_eps_005(self, interval_mesh, reference_params,
                                                   bp_settings):
        """At eps = 0.05 the first branch point sits far below its cross-diffusion value"""
        p = reference_params.with_value("eps", 0.05)
        branch = homogeneous_branch(interval_mesh, p, ModelTag.FAST, "d", 0.04, bp_settings)
        values = branch_point_values(branch)
        assert values
        assert values[0] < 0.015

    def test_non_homogeneous_states_approach_the_cross_model(self, interval_mesh,
                                                             reference_params):
        """Along switched fast branches the exchange term is O(eps) and the reduced state
        solves the cross-diffusion problem better as eps shrinks"""
        settings = ContinuationSettings(param_range=(0.02, 0.04),
                                        detect=DetectFlags(fold=False, hopf=False))
        short = settings.model_copy(update={"max_steps": 10})
        defects = []
        for eps in (1e-2, 1e-3, 1e-4):
            p = reference_params.with_value("eps", eps)
            problem = ContinuationProblem(interval_mesh, p, ModelTag.FAST, "d")
            hom = homogeneous_branch(interval_mesh, p, ModelTag.FAST, "d", 0.04, settings)
            child = switch_branch(problem, hom.events[0], 1, short)
            states = [pt.state for pt in child.points]
            assert all(inhomogeneity(s) > 1e-3 for s in states)
            assert max(qss_defect(p, s) for s in states) <= 10 * eps
            reduced = reduce_fast_state(states[-1])
            defects.append(float(np.max(np.abs(residual(interval_mesh, p, reduced)))))
        assert defects[0] > defects[1] > defects[2]


@pytest.mark.slow
def test_ring_counts_in_r1():
    """Three rings in the cross-diffusion r1 diagram, one at eps = 0.01"""
    config = load_config(Path(__file__).resolve().parents[1] / "configs" / "competition_r1.json")
    sequence = ring_sequence(config.build_mesh(), config.params, "r1", [None, 0.01],
                             config.start_value, config.continuation, config.switching)
    assert sequence.reports[0.0].closed_loops == 3
    assert sequence.reports[0.01].closed_loops == 1
