"""
Tests for on-disk formats and SVG rendering
"""

import dataclasses
import json

import numpy as np
import pandas as pd
import pytest
from conftest import U_STAR, V_STAR

from xdcont import artifacts, plotting
from xdcont.continuation import Branch, Diagram, EventKind, EventRecord
from xdcont.experiments import OrderFit, SweepResult, SweepRow, TopologyReport
from xdcont.models import ModelTag, homogeneous_state
from xdcont.turing import predict_bifurcations
from xdcont.utils.error_handlers import InvalidArgumentException


@pytest.fixture
def flagged_branch(test_data_factory):
    """Five points with a simple branch point at step 2 and a double one at step 4."""
    params = [0.04, 0.035, 0.1 + 0.2, 0.025, 0.02]
    points = [
        dataclasses.replace(test_data_factory.create_branch_point(v, n_unstable=i // 2),
                            step_index=i)
        for i, v in enumerate(params)
    ]
    events = [
        EventRecord(EventKind.BRANCH_POINT, points[2].param, points[2], (1.0, -1.0), 1, "hom:0"),
        EventRecord(EventKind.BRANCH_POINT, points[4].param, points[4], (0.0, 2.0), 2, "hom:1"),
    ]
    return Branch(points, events, label="hom")


class TestBranchCsv:
    """Branch tables"""

    def test_columns_and_flags(self, flagged_branch, tmp_path):
        """Event rows carry their codes; other rows are blank"""
        path = artifacts.write_branch_csv(flagged_branch, tmp_path / "hom.csv")
        frame = artifacts.read_branch_csv(path)
        assert list(frame.columns) == artifacts.BRANCH_COLUMNS
        assert list(frame["event_flag"]) == ["", "", "BP", "", "BP2"]
        assert list(frame["step"]) == [0, 1, 2, 3, 4]
        assert list(frame["in_bounds"]) == [True] * 5

    def test_out_of_bounds_points_are_flagged(self, flagged_branch, tmp_path):
        """Points outside the biological bounds keep in_bounds False in the table"""
        points = list(flagged_branch.points)
        points[3] = dataclasses.replace(points[3], in_bounds=False)
        branch = dataclasses.replace(flagged_branch, points=points)
        frame = artifacts.read_branch_csv(artifacts.write_branch_csv(branch, tmp_path / "b.csv"))
        assert list(frame["in_bounds"]) == [True, True, True, False, True]

    def test_floats_round_trip(self, flagged_branch, tmp_path):
        """17 significant digits reproduce every double"""
        path = artifacts.write_branch_csv(flagged_branch, tmp_path / "hom.csv")
        frame = artifacts.read_branch_csv(path)
        assert frame["param"][2] == 0.1 + 0.2

    def test_reruns_are_byte_identical(self, flagged_branch, tmp_path):
        """Writing the same branch twice gives the same bytes"""
        a = artifacts.write_branch_csv(flagged_branch, tmp_path / "a.csv")
        b = artifacts.write_branch_csv(flagged_branch, tmp_path / "b.csv")
        assert a.read_bytes() == b.read_bytes()
        assert b"\r" not in a.read_bytes()


class TestSnapshots:
    """Plain-text states and meshes; npz branch archives"""

    def test_state_round_trip(self, interval_mesh, reference_params, tmp_path):
        """Fields, parameter, model and name survive"""
        s = homogeneous_state(interval_mesh, reference_params, ModelTag.FAST, "d")
        back = artifacts.read_state(artifacts.write_state(s, tmp_path / "s.txt"))
        np.testing.assert_array_equal(back.fields, s.fields)
        assert (back.param_value, back.model_tag, back.param_name) == (0.04, ModelTag.FAST, "d")

    def test_state_text_layout(self, interval_mesh, reference_params, tmp_path):
        """A commented header, then one row per node with one column per component"""
        s = homogeneous_state(interval_mesh, reference_params, ModelTag.CROSS, "d")
        lines = artifacts.write_state(s, tmp_path / "s.txt").read_text().splitlines()
        header = [line for line in lines if line.startswith("#")]
        rows = [line for line in lines if not line.startswith("#")]
        assert "# model: cross" in header
        assert "# columns: u v" in header
        assert "# nodes: 26" in header
        assert len(rows) == 26
        assert [float(x) for x in rows[0].split()] == pytest.approx([U_STAR, V_STAR])

    def test_not_a_state(self, tmp_path):
        """Files without a state header are rejected"""
        path = tmp_path / "junk.txt"
        path.write_text("1 2\n3 4\n")
        with pytest.raises(InvalidArgumentException):
            artifacts.read_state(path)

    def test_event_snapshot(self, flagged_branch, tmp_path):
        """Event snapshots keep kind, multiplicity, tangent and id"""
        ev = flagged_branch.events[1]
        path = artifacts.write_event_snapshot(ev, tmp_path / "ev.txt")
        snap = artifacts.read_event_snapshot(path)
        assert snap["kind"] is EventKind.BRANCH_POINT
        assert snap["multiplicity"] == 2
        assert snap["event_id"] == "hom:1"
        np.testing.assert_array_equal(snap["tangent"], ev.point.tangent)
        np.testing.assert_array_equal(artifacts.read_state(path).fields, ev.state.fields)

    def test_branch_states(self, flagged_branch, tmp_path):
        """One state per branch point, in order"""
        path = artifacts.write_branch_states(flagged_branch, tmp_path / "states.npz")
        states = artifacts.read_branch_states(path)
        assert [s.param_value for s in states] == list(flagged_branch.params)

    @pytest.mark.parametrize("which", ["interval", "rectangle"])
    def test_mesh_round_trip(self, which, interval_mesh, small_rectangle_mesh, tmp_path):
        """Nodes, elements and the domain survive"""
        mesh = interval_mesh if which == "interval" else small_rectangle_mesh
        back = artifacts.read_mesh(artifacts.write_mesh(mesh, tmp_path / "mesh.txt"))
        np.testing.assert_array_equal(back.nodes, mesh.nodes)
        np.testing.assert_array_equal(back.elements, mesh.elements)
        np.testing.assert_array_equal(back.element_measures, mesh.element_measures)
        assert back.domain == mesh.domain
        assert back.shape == mesh.shape
        assert artifacts.mesh_summary(back)["total_measure"] == pytest.approx(mesh.domain.area)

    def test_truncated_mesh(self, small_rectangle_mesh, tmp_path):
        """A mesh file missing rows is rejected"""
        path = artifacts.write_mesh(small_rectangle_mesh, tmp_path / "mesh.txt")
        path.write_text("\n".join(path.read_text().splitlines()[:-3]) + "\n")
        with pytest.raises(InvalidArgumentException):
            artifacts.read_mesh(path)


class TestDiagram:
    """Whole-diagram output"""

    def test_write_diagram(self, flagged_branch, tmp_path):
        """Branch tables, snapshots, events.json and the manifest are consistent"""
        manifest = artifacts.write_diagram(Diagram(None, [flagged_branch]), tmp_path)
        assert manifest["events"] == 2
        assert manifest["branches"][0]["csv"] == "branches/hom.csv"
        events = artifacts.load_events(tmp_path / "events.json")
        record = artifacts.find_event(events, "hom:1")
        assert record["multiplicity"] == 2
        assert record["in_bounds"] is True
        assert record["snapshot"].endswith(".txt")
        assert (tmp_path / record["snapshot"]).exists()
        assert artifacts.find_event(events, "hom:9") is None
        assert json.loads((tmp_path / "manifest.json").read_text())["switch_failures"] == {}


class TestStudyTables:
    """Sweep, fit, topology and Turing outputs"""

    def test_sweep_csv(self, tmp_path):
        """Missing values are written as NaN, rows ordered by descending eps"""
        rows = [
            SweepRow(1e-3, "B1", "branch_point", 0.0327, 0.0328, 1),
            SweepRow(1e-2, "B1", "branch_point", None, 0.0328, 1),
        ]
        path = artifacts.write_sweep_csv(SweepResult("d", rows, {"B1": 0.0328}),
                                         tmp_path / "sweep.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["eps", "event", "value", "ref", "abs_diff"]
        assert list(frame["eps"]) == [1e-2, 1e-3]
        assert np.isnan(frame["value"][0])
        assert frame["abs_diff"][1] == pytest.approx(1e-4)

    def test_fit_and_topology_json(self, tmp_path):
        """Fits and loop counts are plain JSON"""
        artifacts.write_fit_json({"B1": OrderFit(1.0, 0.5, 0.99, 4)}, tmp_path / "fit.json")
        artifacts.write_topology_json(
            {0.0: TopologyReport(2, 0, ((0, 1), (2, 3))), 1e-3: TopologyReport(1, 2, ((0, 1),))},
            tmp_path / "topology.json",
        )
        fit = json.loads((tmp_path / "fit.json").read_text())
        assert fit == {"B1": {"intercept": 0.5, "r_squared": 0.99, "rows": 4, "slope": 1.0}}
        topology = json.loads((tmp_path / "topology.json").read_text())
        assert [t["eps"] for t in topology] == [1e-3, 0.0]
        assert topology[1]["loop_pairs"] == [[0, 1], [2, 3]]

    def test_turing_csv(self, reference_params, rectangle_spec, tmp_path):
        """Degenerate modes list every index pair"""
        predictions = predict_bifurcations(
            reference_params, rectangle_spec, "d", (0.02, 0.04), 50.0
        )
        frame = pd.read_csv(artifacts.write_turing_csv(predictions, tmp_path / "turing.csv"))
        assert frame["modes"][1] == "0 4;1 0"
        assert frame["multiplicity"][1] == 2
        assert list(frame["critical_value"]) == sorted(frame["critical_value"], reverse=True)


class TestPlots:
    """SVG rendering"""

    def test_diagram_svg_is_deterministic(self, flagged_branch, tmp_path):
        """Repeated renders give identical files"""
        a = plotting.plot_diagram([flagged_branch], tmp_path / "a.svg")
        b = plotting.plot_diagram([flagged_branch], tmp_path / "b.svg")
        assert a.read_bytes().lstrip().startswith(b"<?xml")
        assert a.read_bytes() == b.read_bytes()

    def test_profiles(self, any_mesh, reference_params, tmp_path):
        """Profiles render in one and two dimensions"""
        s = homogeneous_state(any_mesh, reference_params, ModelTag.CROSS, "d")
        n = any_mesh.node_count
        s = s.with_fields(s.fields + 0.01 * np.tile(np.linspace(0, 1, n), 2), s.param_value)
        path = plotting.plot_profile(any_mesh, s, tmp_path / "profile.svg")
        assert path.stat().st_size > 0

    def test_d_b_curve(self, tmp_path):
        """NaN gaps are allowed"""
        lams = np.linspace(1.0, 50.0, 20)
        values = np.where(lams > 25, np.nan, 0.03)
        assert plotting.plot_d_b_curve(lams, values, tmp_path / "curve.svg").exists()
