import numpy as np
import pytest

from deskrover import coverage


class TestNestedLoopPlan:
    def test_center_loop_corners_with_half_meter_inset(self):
        plan = coverage.nested_loop_plan(inset=0.5, edge_midpoints=False)
        wp = plan.waypoints
        for corner in [(-4.0, -4.0), (4.0, -4.0), (4.0, 4.0), (-4.0, 4.0)]:
            assert np.any(np.all(np.isclose(wp, corner), axis=1)), corner

    def test_all_nine_cells_present_once(self):
        plan = coverage.nested_loop_plan(edge_midpoints=False)
        wp = plan.waypoints
        for cx in (-9.0, 0.0, 9.0):
            for cy in (-9.0, 0.0, 9.0):
                corner = (cx - 4.1, cy - 4.1)
                hits = np.sum(np.all(np.isclose(wp, corner), axis=1))
                # each loop visits its start corner twice (open + close)
                assert hits in (1, 2), (corner, hits)

    def test_waypoints_inside_mapping_square(self):
        plan = coverage.nested_loop_plan()
        assert np.all(np.abs(plan.waypoints) <= 13.5)

    def test_consecutive_waypoints_distinct(self):
        plan = coverage.nested_loop_plan()
        diffs = np.linalg.norm(np.diff(plan.waypoints, axis=0), axis=1)
        assert np.all(diffs > 1e-9)

    def test_deterministic(self):
        a = coverage.nested_loop_plan()
        b = coverage.nested_loop_plan()
        np.testing.assert_array_equal(a.waypoints, b.waypoints)

    def test_geometry_validation(self):
        with pytest.raises(ValueError):
            coverage.nested_loop_plan(cell_size=10.0)  # 3 cells > 27 m
        with pytest.raises(ValueError):
            coverage.nested_loop_plan(inset=5.0)

    def test_coverage_proxy(self):
        plan = coverage.nested_loop_plan()
        assert coverage.polyline_covers(plan, sensing_radius=3.0) >= 0.95

    def test_revisit_density(self):
        plan = coverage.nested_loop_plan()
        assert coverage.revisit_fraction(plan, radius=1.0) >= 0.30


class TestSpiralPlan:
    def test_starts_at_r0_on_x_axis(self):
        plan = coverage.spiral_plan(r0=2.0, dr=2.5)
        np.testing.assert_allclose(plan.waypoints[0], [2.0, 0.0], atol=1e-12)

    def test_one_revolution_grows_by_dr(self):
        plan = coverage.spiral_plan(r0=2.0, dr=2.5, points_per_rev=16)
        p = plan.waypoints[16]
        assert np.linalg.norm(p) == pytest.approx(4.5, abs=1e-9)
        assert np.arctan2(p[1], p[0]) == pytest.approx(0.0, abs=1e-9)

    def test_ring_spacing_matches_dr(self):
        plan = coverage.spiral_plan(r0=2.0, dr=2.5, r_max=12.0, points_per_rev=32)
        wp = plan.waypoints
        n = 32
        spacings = []
        for k in range(len(wp) - n - 1):
            # distance from a waypoint to the next ring's nearest segment
            seg_d = [
                coverage._segment_distances(wp[k:k + 1], wp[m], wp[m + 1])[0]
                for m in range(k + n - 2, min(k + n + 2, len(wp) - 1))
            ]
            spacings.append(min(seg_d))
        assert min(spacings) == pytest.approx(2.5, abs=0.1)
        assert np.median(spacings) == pytest.approx(2.5, abs=0.1)

    def test_clipped_to_square(self):
        plan = coverage.spiral_plan(r0=2.0, dr=2.5, r_max=18.0, clip_margin=0.5)
        assert np.all(np.abs(plan.waypoints) <= 13.0 + 1e-12)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            coverage.spiral_plan(r0=0.0)
        with pytest.raises(ValueError):
            coverage.spiral_plan(dr=-1.0)
        with pytest.raises(ValueError):
            coverage.spiral_plan(r_max=25.0)


class TestCursor:
    def test_advances_on_arrival(self):
        plan = coverage.WaypointPlan(np.array([[0.0, 0.0], [5.0, 0.0]]), 1.0)
        cursor = coverage.PlanCursor(plan)
        wp = cursor.next_waypoint([0.5, 0.0])  # within the arrival radius
        np.testing.assert_allclose(wp, [5.0, 0.0])

    def test_far_position_keeps_waypoint(self):
        plan = coverage.WaypointPlan(np.array([[0.0, 0.0], [5.0, 0.0]]), 0.5)
        cursor = coverage.PlanCursor(plan)
        np.testing.assert_allclose(cursor.next_waypoint([3.0, 3.0]), [0.0, 0.0])
        np.testing.assert_allclose(cursor.next_waypoint([3.0, 3.0]), [0.0, 0.0])

    def test_exhaustion_returns_none(self):
        plan = coverage.WaypointPlan(np.array([[0.0, 0.0]]), 1.0)
        cursor = coverage.PlanCursor(plan)
        assert cursor.next_waypoint([0.1, 0.0]) is None
        assert cursor.exhausted

    def test_skip(self):
        plan = coverage.WaypointPlan(np.array([[0.0, 0.0], [5.0, 0.0]]), 0.5)
        cursor = coverage.PlanCursor(plan)
        cursor.next_waypoint([9.0, 9.0])
        cursor.skip()
        np.testing.assert_allclose(cursor.next_waypoint([9.0, 9.0]), [5.0, 0.0])


class TestPlanFiles:
    def test_roundtrip(self, tmp_path):
        plan = coverage.nested_loop_plan()
        path = tmp_path / "plan.txt"
        coverage.write_plan(path, plan)
        back = coverage.read_plan(path)
        np.testing.assert_array_equal(back.waypoints, plan.waypoints)

    def test_empty_plan_rejected(self):
        with pytest.raises(ValueError):
            coverage.WaypointPlan(np.zeros((0, 2)))

    def test_duplicate_consecutive_rejected(self):
        with pytest.raises(ValueError):
            coverage.WaypointPlan(np.array([[1.0, 1.0], [1.0, 1.0]]))
