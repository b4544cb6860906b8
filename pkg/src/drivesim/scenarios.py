"""Track geometry families, procedural road composition, traffic sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .vehicle import DEFAULT_PARAMS, VehicleParams, VehicleState

KINDS = ("straight_highway", "curved_road", "inner_city", "seamless_generated")

# margin kept between the start/finish and the centerline endpoints
END_MARGIN = 6.0
# lattice cell edge for free-space discretization (one body length)
FREE_CELL = 4.0


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(k) for k in key]))


def compose_path(segments, step: float = 2.0) -> np.ndarray:
    """March a C1-continuous polyline from (kind, ...) road segments.

    Segments are ("straight", length) or ("arc", radius, signed_angle);
    positive angles turn left. Consecutive segments share position and
    tangent by construction.
    """
    pts = [(0.0, 0.0)]
    px, py, theta = 0.0, 0.0, 0.0
    for seg in segments:
        if seg[0] == "straight":
            length = float(seg[1])
            n = max(1, int(math.ceil(length / step)))
            for k in range(1, n + 1):
                t = length * k / n
                pts.append((px + t * math.cos(theta), py + t * math.sin(theta)))
            px, py = pts[-1]
        elif seg[0] == "arc":
            radius = float(seg[1])
            angle = float(seg[2])
            if radius <= 0.0 or angle == 0.0:
                raise ValueError("arc needs positive radius and nonzero angle")
            sign = 1.0 if angle > 0.0 else -1.0
            cx = px + radius * math.cos(theta + sign * 0.5 * math.pi)
            cy = py + radius * math.sin(theta + sign * 0.5 * math.pi)
            beta0 = theta - sign * 0.5 * math.pi
            sweep = abs(angle)
            n = max(2, int(math.ceil(radius * sweep / step)))
            for k in range(1, n + 1):
                b = beta0 + sign * sweep * k / n
                pts.append((cx + radius * math.cos(b), cy + radius * math.sin(b)))
            theta = kernels.normalize_heading(theta + angle)
            px, py = pts[-1]
        else:
            raise ValueError(f"unknown segment kind {seg[0]!r}")
    return np.asarray(pts, dtype=np.float64)


def _cumulative_lengths(line: np.ndarray) -> np.ndarray:
    d = np.hypot(np.diff(line[:, 0]), np.diff(line[:, 1]))
    return np.concatenate([[0.0], np.cumsum(d)])


def _offset_polyline(line: np.ndarray, offset: float) -> np.ndarray:
    """Offset to the left of travel by `offset` (negative = right), mitered."""
    seg = np.diff(line, axis=0)
    seg_norm = seg / np.hypot(seg[:, 0], seg[:, 1])[:, None]
    normals = np.stack([-seg_norm[:, 1], seg_norm[:, 0]], axis=1)
    out = np.empty_like(line)
    out[0] = line[0] + offset * normals[0]
    out[-1] = line[-1] + offset * normals[-1]
    for i in range(1, len(line) - 1):
        m = normals[i - 1] + normals[i]
        norm = math.hypot(m[0], m[1])
        if norm < 1e-12:  # 180-degree fold; fall back to one side's normal
            out[i] = line[i] + offset * normals[i]
            continue
        m = m / norm
        scale = offset / float(m @ normals[i])
        out[i] = line[i] + scale * m
    return out


def _polyline_segments(line: np.ndarray) -> np.ndarray:
    return np.concatenate([line[:-1], line[1:]], axis=1)


@dataclass(frozen=True)
class TrackGeometry:
    kind: str
    centerline: np.ndarray
    width: float
    wall_segments: np.ndarray
    start_pose: VehicleState
    start_station: float
    finish_station: float
    cum_lengths: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.centerline.shape[0] < 2:
            raise ValueError("centerline needs at least 2 points")
        if self.width <= DEFAULT_PARAMS.body_width:
            raise ValueError("track narrower than the vehicle body")
        if self.cum_lengths is None:
            object.__setattr__(self, "cum_lengths", _cumulative_lengths(self.centerline))

    @property
    def finish_arc_length(self) -> float:
        return self.finish_station - self.start_station

    @property
    def total_length(self) -> float:
        return float(self.cum_lengths[-1])

    def station_of(self, x: float, y: float) -> float:
        return kernels.project_station(x, y, self.centerline, self.cum_lengths)

    def point_at(self, station: float) -> tuple[np.ndarray, np.ndarray]:
        """Centerline point and unit tangent at an arc-length station."""
        return _point_at(self.centerline, self.cum_lengths, station)


def _point_at(centerline: np.ndarray, cum: np.ndarray, station: float):
    s = min(max(station, 0.0), float(cum[-1]))
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(max(i, 0), len(centerline) - 2)
    seg = centerline[i + 1] - centerline[i]
    seg_len = math.hypot(seg[0], seg[1])
    t = 0.0 if seg_len == 0.0 else (s - cum[i]) / seg_len
    point = centerline[i] + t * seg
    tangent = seg / seg_len if seg_len > 0.0 else np.array([1.0, 0.0])
    return point, tangent


def _build_track(kind: str, centerline: np.ndarray, width: float) -> TrackGeometry:
    left = _offset_polyline(centerline, +0.5 * width)
    right = _offset_polyline(centerline, -0.5 * width)
    walls = [_polyline_segments(left), _polyline_segments(right)]
    # cap behind the start so the corridor is closed at the rear
    walls.append(np.array([[left[0, 0], left[0, 1], right[0, 0], right[0, 1]]]))
    wall_segments = np.ascontiguousarray(np.concatenate(walls, axis=0))

    cum = _cumulative_lengths(centerline)
    total = float(cum[-1])
    if total <= 3.0 * END_MARGIN:
        raise ValueError("track too short for start/finish margins")
    point, tangent = _point_at(centerline, cum, END_MARGIN)
    pose = VehicleState(x=float(point[0]), y=float(point[1]),
                        heading=float(math.atan2(tangent[1], tangent[0])))
    return TrackGeometry(kind=kind, centerline=centerline, width=width,
                         wall_segments=wall_segments,
                         start_pose=pose,
                         start_station=END_MARGIN,
                         finish_station=total - END_MARGIN,
                         cum_lengths=cum)


@dataclass(frozen=True)
class TrafficCar:
    waypoints: np.ndarray
    speed: float
    state: VehicleState


@dataclass(frozen=True)
class Scenario:
    kind: str
    seed: int
    track: TrackGeometry
    traffic_count: int = 0
    traffic_speed_range: tuple[float, float] = (3.0, 8.0)
    name: Optional[str] = None
    params: dict = field(default_factory=dict)

    @property
    def scenario_id(self) -> str:
        return self.name or self.kind


def build_scenario(kind: str, seed: int, *, traffic_count: int = 0,
                   traffic_speed_range: tuple[float, float] = (3.0, 8.0),
                   wheelbase: float = DEFAULT_PARAMS.wheelbase,
                   name: Optional[str] = None,
                   **difficulty) -> Scenario:
    """Deterministically construct a track of the requested family.

    difficulty keywords by kind:
      straight_highway: length, width
      curved_road:      width, arc_count, radius_range, angle_range, straight_range
      inner_city:       width, block, turn_count
      seamless_generated: width, segment_count, straight_range, radius_range,
                          angle_range
    Curvature radii below twice the wheelbase are rejected.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}")
    min_radius = 2.0 * wheelbase
    rng = _rng(seed, 1)

    if kind == "straight_highway":
        length = float(difficulty.pop("length", 300.0))
        width = float(difficulty.pop("width", 12.0))
        _reject_extras(difficulty)
        used = {"length": length, "width": width}
        centerline = compose_path([("straight", length)], step=length)
    elif kind == "curved_road":
        width = float(difficulty.pop("width", 12.0))
        arc_count = int(difficulty.pop("arc_count", 4))
        radius_range = tuple(difficulty.pop("radius_range", (40.0, 90.0)))
        angle_range = tuple(difficulty.pop("angle_range", (0.35, 1.0)))
        straight_range = tuple(difficulty.pop("straight_range", (20.0, 50.0)))
        _reject_extras(difficulty)
        _check_radius(radius_range[0], min_radius, width)
        used = {"width": width, "arc_count": arc_count,
                "radius_range": list(radius_range),
                "angle_range": list(angle_range),
                "straight_range": list(straight_range)}
        segs = [("straight", rng.uniform(*straight_range))]
        sign = 1.0 if rng.random() < 0.5 else -1.0
        for _ in range(arc_count):
            segs.append(("arc", rng.uniform(*radius_range),
                         sign * rng.uniform(*angle_range)))
            segs.append(("straight", rng.uniform(*straight_range)))
            sign = -sign if rng.random() < 0.8 else sign
        centerline = compose_path(segs)
    elif kind == "inner_city":
        width = float(difficulty.pop("width", 10.0))
        block = float(difficulty.pop("block", 60.0))
        turn_count = int(difficulty.pop("turn_count", 6))
        _reject_extras(difficulty)
        if block <= 2.0 * width:
            raise ValueError("inner_city blocks must be well above the street width")
        used = {"width": width, "block": block, "turn_count": turn_count}
        centerline = _city_walk(rng, block, turn_count)
    else:  # seamless_generated
        width = float(difficulty.pop("width", 10.0))
        segment_count = int(difficulty.pop("segment_count", 8))
        straight_range = tuple(difficulty.pop("straight_range", (30.0, 80.0)))
        radius_range = tuple(difficulty.pop("radius_range", (15.0, 60.0)))
        angle_range = tuple(difficulty.pop("angle_range", (0.26, 1.57)))
        _reject_extras(difficulty)
        if segment_count < 1:
            raise ValueError("segment_count must be at least 1")
        _check_radius(radius_range[0], min_radius, width)
        used = {"width": width, "segment_count": segment_count,
                "straight_range": list(straight_range),
                "radius_range": list(radius_range),
                "angle_range": list(angle_range)}
        segs = []
        for _ in range(segment_count):
            choice = rng.integers(3)
            if choice == 0:
                segs.append(("straight", rng.uniform(*straight_range)))
            else:
                sign = 1.0 if choice == 1 else -1.0
                segs.append(("arc", rng.uniform(*radius_range),
                             sign * rng.uniform(*angle_range)))
        centerline = compose_path(segs)

    track = _build_track(kind, centerline, width)
    return Scenario(kind=kind, seed=int(seed), track=track,
                    traffic_count=int(traffic_count),
                    traffic_speed_range=(float(traffic_speed_range[0]),
                                         float(traffic_speed_range[1])),
                    name=name, params=used)


def generate_seamless(seed: int, segment_count: int, **kwargs) -> Scenario:
    """Procedurally composed road of C1-joined straights and arcs."""
    return build_scenario("seamless_generated", seed,
                          segment_count=segment_count, **kwargs)


def _check_radius(radius: float, min_radius: float, width: float) -> None:
    if radius < min_radius:
        raise ValueError(f"curvature radius {radius} below minimum {min_radius}")
    if radius <= 0.5 * width + 1.0:
        raise ValueError("curvature radius too tight for the corridor width")


def _reject_extras(difficulty: dict) -> None:
    if difficulty:
        raise ValueError(f"unknown difficulty parameters: {sorted(difficulty)}")


def _city_walk(rng: np.random.Generator, block: float, turn_count: int) -> np.ndarray:
    """Self-avoiding rectilinear route; interior vertices are 90-degree turns."""
    for _ in range(200):
        heading = 0
        node = (0, 0)
        visited = {node}
        corners = [np.array([0.0, 0.0])]
        pos = np.array([0.0, 0.0])
        ok = True
        turns_done = 0
        while turns_done < turn_count:
            run = int(rng.integers(1, 4))  # blocks before the next corner
            step_vec = _CITY_DIRS[heading]
            nxt = node
            path = []
            for _ in range(run):
                nxt = (nxt[0] + step_vec[0], nxt[1] + step_vec[1])
                path.append(nxt)
            if any(p in visited for p in path):
                ok = False
                break
            visited.update(path)
            node = nxt
            pos = pos + block * run * np.array(step_vec, dtype=np.float64)
            corners.append(pos.copy())
            turn = 1 if rng.random() < 0.5 else -1
            heading = (heading + turn) % 4
            turns_done += 1
        if not ok:
            continue
        # closing straight after the last turn
        run = int(rng.integers(1, 4))
        step_vec = _CITY_DIRS[heading]
        path = [(node[0] + step_vec[0] * k, node[1] + step_vec[1] * k)
                for k in range(1, run + 1)]
        if any(p in visited for p in path):
            continue
        pos = pos + block * run * np.array(step_vec, dtype=np.float64)
        corners.append(pos.copy())
        return np.asarray(corners, dtype=np.float64)
    raise RuntimeError("could not generate a self-avoiding city route")


_CITY_DIRS = {0: (1, 0), 1: (0, 1), 2: (-1, 0), 3: (0, -1)}


@dataclass(frozen=True)
class TrafficSample:
    cars: list
    shortfall: bool  # set when free space could not fit the requested count


def free_space_cells(track: TrackGeometry, cell: float = FREE_CELL,
                     margin: float = 12.0) -> np.ndarray:
    """Centers of the free-space lattice: (station, lateral, x, y, tangent)."""
    lats = []
    n_lat = int(track.width // cell)
    for j in range(n_lat):
        lat = (j + 0.5) * cell - 0.5 * n_lat * cell
        if abs(lat) <= 0.5 * track.width - 0.5 * cell:
            lats.append(lat)
    rows = []
    s = track.start_station + margin
    while s <= track.finish_station - 0.5 * cell:
        point, tangent = track.point_at(s)
        normal = np.array([-tangent[1], tangent[0]])
        for lat in lats:
            p = point + lat * normal
            rows.append((s, lat, p[0], p[1], math.atan2(tangent[1], tangent[0])))
        s += cell
    return np.asarray(rows, dtype=np.float64)


def sample_traffic(scenario: Scenario,
                   params: VehicleParams = DEFAULT_PARAMS,
                   waypoints_per_car: int = 4,
                   max_attempts: int = 1000) -> TrafficSample:
    """Spawn traffic uniformly over the free-space cell lattice.

    Spawn rectangles never overlap each other; waypoints are drawn uniformly
    from the cells not covered by an already-claimed spawn rectangle. Fewer
    cars (and a shortfall flag) are returned when space runs out.
    """
    rng = _rng(scenario.seed, 2)
    cells = free_space_cells(scenario.track)
    cars: list[TrafficCar] = []
    if scenario.traffic_count == 0 or len(cells) == 0:
        return TrafficSample(cars=cars, shortfall=scenario.traffic_count > 0 and len(cells) == 0)

    claimed: list[np.ndarray] = []
    ego_rect = kernels.body_corners(scenario.track.start_pose.x,
                                    scenario.track.start_pose.y,
                                    scenario.track.start_pose.heading,
                                    params.wheelbase, params.body_length,
                                    params.body_width)
    claimed.append(ego_rect)

    def free_mask() -> np.ndarray:
        mask = np.ones(len(cells), dtype=bool)
        for rect in claimed:
            for i in range(len(cells)):
                if mask[i] and kernels.point_in_rect(cells[i, 2], cells[i, 3], rect):
                    mask[i] = False
        return mask

    shortfall = False
    for _ in range(scenario.traffic_count):
        spawned = False
        for _ in range(max_attempts):
            idx = int(rng.integers(len(cells)))
            s, lat, cx, cy, tang = cells[idx]
            rect = kernels.body_corners(cx, cy, tang, params.wheelbase,
                                        params.body_length, params.body_width)
            if any(kernels.rects_overlap(rect, other) for other in claimed):
                continue
            if kernels.rect_hits_segments(rect, scenario.track.wall_segments,
                                          scenario.track.wall_segments.shape[0]):
                continue
            claimed.append(rect)
            mask = free_mask()
            free_idx = np.flatnonzero(mask)
            wps = [np.array([cx, cy])]
            for _ in range(waypoints_per_car - 1):
                pick = int(rng.integers(len(free_idx)))
                wps.append(cells[free_idx[pick], 2:4].copy())
            speed = float(rng.uniform(*scenario.traffic_speed_range))
            state = VehicleState(x=float(cx), y=float(cy), heading=float(tang),
                                 v=speed, delta=0.0)
            cars.append(TrafficCar(waypoints=np.asarray(wps), speed=speed, state=state))
            spawned = True
            break
        if not spawned:
            shortfall = True
            break
    return TrafficSample(cars=cars, shortfall=shortfall)


def sample_free_cells(track: TrackGeometry, rng: np.random.Generator,
                      n: int, claimed: list[np.ndarray] | None = None) -> np.ndarray:
    """Draw n cell indices uniformly from the free-space lattice (for tests)."""
    cells = free_space_cells(track)
    mask = np.ones(len(cells), dtype=bool)
    for rect in (claimed or []):
        for i in range(len(cells)):
            if mask[i] and kernels.point_in_rect(cells[i, 2], cells[i, 3], rect):
                mask[i] = False
    free_idx = np.flatnonzero(mask)
    picks = rng.integers(len(free_idx), size=n)
    return free_idx[picks]


# the five preset scenarios used by the comparison report
def preset_scenarios(traffic_count: int = 3) -> list[Scenario]:
    return [
        build_scenario("straight_highway", seed=1, traffic_count=traffic_count,
                       name="straight_highway"),
        build_scenario("curved_road", seed=2, traffic_count=traffic_count,
                       name="curved_road"),
        build_scenario("inner_city", seed=3, traffic_count=traffic_count,
                       name="inner_city"),
        build_scenario("seamless_generated", seed=11, segment_count=8,
                       traffic_count=traffic_count, name="seamless_a"),
        build_scenario("seamless_generated", seed=17, segment_count=10,
                       traffic_count=traffic_count, name="seamless_b"),
    ]


def preset_by_name(name: str, traffic_count: int = 3) -> Scenario:
    for sc in preset_scenarios(traffic_count=traffic_count):
        if sc.scenario_id == name:
            return sc
    raise KeyError(f"unknown preset scenario {name!r}")
