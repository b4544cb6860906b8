import math

import numpy as np
import pytest

from drivesim import kernels
from drivesim.scenarios import (build_scenario, compose_path, free_space_cells,
                                generate_seamless, preset_scenarios,
                                sample_free_cells, sample_traffic)
from drivesim.vehicle import DEFAULT_PARAMS, VehicleState, check_collision

CHI2_Q999_9DOF = 27.877164871256568  # 0.999 quantile of chi-squared, 9 dof


def polyline_min_circumradius(line: np.ndarray) -> float:
    """Smallest circumradius over consecutive point triples (inf for straights)."""
    best = math.inf
    for i in range(len(line) - 2):
        a, b, c = line[i], line[i + 1], line[i + 2]
        ab = np.hypot(*(b - a))
        bc = np.hypot(*(c - b))
        ca = np.hypot(*(a - c))
        area2 = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area2 < 1e-12:
            continue
        best = min(best, ab * bc * ca / (2.0 * area2))
    return best


class TestBuildScenario:
    def test_straight_is_straight(self):
        sc = build_scenario("straight_highway", seed=4)
        line = sc.track.centerline
        assert len(line) == 2
        assert line[0][1] == line[1][1] == 0.0
        # the two side walls are parallel to the centerline
        left, right = sc.track.wall_segments[0], sc.track.wall_segments[1]
        assert left[1] == left[3] == sc.track.width / 2
        assert right[1] == right[3] == -sc.track.width / 2

    def test_deterministic_in_seed(self):
        a = build_scenario("curved_road", seed=7)
        b = build_scenario("curved_road", seed=7)
        assert np.array_equal(a.track.centerline, b.track.centerline)
        assert np.array_equal(a.track.wall_segments, b.track.wall_segments)
        c = build_scenario("curved_road", seed=8)
        assert not np.array_equal(a.track.centerline, c.track.centerline)

    def test_inner_city_turns_are_right_angles(self):
        sc = build_scenario("inner_city", seed=3)
        line = sc.track.centerline
        for i in range(1, len(line) - 1):
            v1 = line[i] - line[i - 1]
            v2 = line[i + 1] - line[i]
            ang = math.degrees(
                kernels.normalize_heading(math.atan2(v2[1], v2[0])
                                          - math.atan2(v1[1], v1[0])))
            assert ang == pytest.approx(90.0, abs=1e-9) or \
                ang == pytest.approx(-90.0, abs=1e-9)

    def test_rejects_tight_curvature(self):
        with pytest.raises(ValueError):
            build_scenario("curved_road", seed=1, radius_range=(3.0, 10.0))
        with pytest.raises(ValueError):
            build_scenario("seamless_generated", seed=1, radius_range=(4.0, 10.0))

    def test_rejects_unknown_kind_and_params(self):
        with pytest.raises(ValueError):
            build_scenario("mountain_pass", seed=1)
        with pytest.raises(ValueError):
            build_scenario("straight_highway", seed=1, slope=0.1)

    def test_start_pose_collision_free(self):
        for sc in preset_scenarios(traffic_count=0):
            assert not check_collision(sc.track.start_pose, DEFAULT_PARAMS,
                                       sc.track.wall_segments)

    def test_walls_enclose_corridor(self):
        # a lateral probe segment from the centerline must cross a wall
        for sc in preset_scenarios(traffic_count=0):
            track = sc.track
            for s in np.linspace(track.start_station, track.finish_station, 9):
                point, tangent = track.point_at(float(s))
                normal = np.array([-tangent[1], tangent[0]])
                for side in (+1.0, -1.0):
                    probe_end = point + side * (track.width / 2 + 5.0) * normal
                    crossed = any(
                        kernels.segments_intersect(point[0], point[1],
                                                   probe_end[0], probe_end[1],
                                                   w[0], w[1], w[2], w[3])
                        for w in track.wall_segments)
                    assert crossed, (sc.scenario_id, s, side)


class TestSeamless:
    def test_single_straight_equals_highway(self):
        # force the straight branch by trying seeds until the first segment is one
        sc = None
        for seed in range(30):
            try:
                cand = generate_seamless(seed, 1)
            except ValueError:  # a single short arc can violate the length margin
                continue
            if np.all(cand.track.centerline[:, 1] == 0.0):
                sc = cand
                break
        assert sc is not None, "no straight single-segment draw in 30 seeds"
        # degenerate composition: same shape as a straight highway track
        ref = build_scenario("straight_highway", seed=0,
                             length=sc.track.total_length,
                             width=sc.track.width)
        assert sc.track.total_length == pytest.approx(ref.track.total_length)
        assert sc.track.finish_arc_length == pytest.approx(ref.track.finish_arc_length)
        assert np.all(sc.track.centerline[:, 1] == ref.track.centerline[0, 1])

    def test_c1_joints(self):
        sc = generate_seamless(11, 20)
        line = sc.track.centerline
        seg = np.diff(line, axis=0)
        ang = np.arctan2(seg[:, 1], seg[:, 0])
        kinks = np.abs(np.vectorize(kernels.normalize_heading)(np.diff(ang)))
        # polyline discretization of arcs turns a little every sample; a C1
        # break would show up as a step much larger than one arc increment
        assert kinks.max() < 0.2

    def test_curvature_radius_bound(self):
        sc = generate_seamless(11, 20)
        r = polyline_min_circumradius(sc.track.centerline)
        assert r >= 2.0 * DEFAULT_PARAMS.wheelbase

    def test_compose_path_tangent_continuity(self):
        line = compose_path([("straight", 20.0), ("arc", 15.0, 0.8),
                             ("arc", 20.0, -0.5), ("straight", 10.0)], step=0.5)
        seg = np.diff(line, axis=0)
        ang = np.arctan2(seg[:, 1], seg[:, 0])
        steps = np.abs(np.vectorize(kernels.normalize_heading)(np.diff(ang)))
        assert steps.max() < 0.06  # max arc increment at step=0.5, r=15


class TestTraffic:
    def test_zero_count(self, straight_scenario):
        sample = sample_traffic(straight_scenario)
        assert sample.cars == [] and not sample.shortfall

    def test_spawns_disjoint_and_collision_free(self):
        sc = build_scenario("straight_highway", seed=5, traffic_count=5)
        sample = sample_traffic(sc)
        assert len(sample.cars) == 5 and not sample.shortfall
        rects = [kernels.body_corners(c.state.x, c.state.y, c.state.heading,
                                      DEFAULT_PARAMS.wheelbase,
                                      DEFAULT_PARAMS.body_length,
                                      DEFAULT_PARAMS.body_width)
                 for c in sample.cars]
        for i in range(len(rects)):
            assert not check_collision(sample.cars[i].state, DEFAULT_PARAMS,
                                       sc.track.wall_segments)
            for j in range(i + 1, len(rects)):
                assert not kernels.rects_overlap(rects[i], rects[j])

    def test_shortfall_flag_when_track_is_full(self):
        sc = build_scenario("straight_highway", seed=5, length=60.0,
                            traffic_count=40)
        sample = sample_traffic(sc)
        assert sample.shortfall
        assert len(sample.cars) < 40

    def test_speed_within_range(self):
        sc = build_scenario("straight_highway", seed=6, traffic_count=4,
                            traffic_speed_range=(2.0, 4.0))
        for car in sample_traffic(sc).cars:
            assert 2.0 <= car.speed <= 4.0

    def test_waypoints_inside_track(self):
        sc = build_scenario("straight_highway", seed=7, traffic_count=4)
        track = sc.track
        for car in sample_traffic(sc).cars:
            for wx, wy in car.waypoints:
                s = track.station_of(wx, wy)
                point, tangent = track.point_at(s)
                lat = abs(-tangent[1] * (wx - point[0]) + tangent[0] * (wy - point[1]))
                assert lat <= track.width / 2

    def test_waypoint_uniformity_chi2(self):
        # a short narrow strip laid out to expose exactly 10 lattice cells
        sc = build_scenario("straight_highway", seed=1, length=63.0, width=5.0)
        cells = free_space_cells(sc.track)
        assert len(cells) == 10
        rng = np.random.default_rng(123)
        picks = sample_free_cells(sc.track, rng, 10_000)
        counts = np.bincount(picks, minlength=10)
        expected = 10_000 / 10
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < CHI2_Q999_9DOF


class TestScenarioValidation:
    def test_too_short_track_rejected(self):
        with pytest.raises(ValueError):
            build_scenario("straight_highway", seed=1, length=10.0)
