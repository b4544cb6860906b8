"""Ray-cast range sensing over a forward wedge and its occupancy-grid raster."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .vehicle import DEFAULT_PARAMS, VehicleParams, VehicleState

CELL_UNKNOWN = 0
CELL_FREE = 1
CELL_OCCUPIED = 2


@dataclass(frozen=True)
class SensorConfig:
    fov: float = 2.0 * math.pi / 3.0
    ray_count: int = 9
    max_range: float = 50.0
    grid_size: int = 64
    grid_extent: float = 100.0

    def __post_init__(self):
        if not (0.0 < self.fov <= 2.0 * math.pi):
            raise ValueError("fov must be in (0, 2*pi]")
        if self.ray_count < 2:
            raise ValueError("ray_count must be at least 2")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")
        if self.grid_size < 1 or self.grid_extent <= 0.0:
            raise ValueError("grid dimensions must be positive")

    def bearings(self, heading: float = 0.0) -> np.ndarray:
        """Absolute ray bearings for an ego heading, endpoints included."""
        i = np.arange(self.ray_count, dtype=np.float64)
        return heading - 0.5 * self.fov + self.fov * i / (self.ray_count - 1)


DEFAULT_SENSOR = SensorConfig()


@dataclass(frozen=True)
class SensorReading:
    distances: np.ndarray
    max_range: float
    normalized: np.ndarray = field(init=False)

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=np.float64)
        if d.ndim != 1:
            raise ValueError("distances must be a vector")
        if np.any(d < 0.0) or np.any(d > self.max_range):
            raise ValueError("distances outside [0, max_range]")
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "normalized", d / self.max_range)


@dataclass(frozen=True)
class OccupancyGridFrame:
    """Ego-anchored ternary grid; +x of the grid frame is the ego heading."""
    cells: np.ndarray
    extent: float

    @property
    def size(self) -> int:
        return self.cells.shape[0]


def cast_rays(ego: VehicleState, segments: np.ndarray, cfg: SensorConfig,
              params: VehicleParams = DEFAULT_PARAMS) -> SensorReading:
    """Cast the sensor fan from the front-body midpoint against segments.

    Each ray reports the nearest intersection distance, capped at max_range.
    """
    segs = np.ascontiguousarray(segments, dtype=np.float64).reshape(-1, 4)
    ox, oy = kernels.sensor_origin(ego.x, ego.y, ego.heading,
                                   params.wheelbase, params.body_length)
    dist = kernels.cast_rays_kernel(ox, oy, ego.heading, cfg.fov, cfg.max_range,
                                    cfg.ray_count, segs, segs.shape[0])
    return SensorReading(distances=dist, max_range=cfg.max_range)


def min_reading(reading: SensorReading) -> float:
    """Smallest normalized ray value, the sensor term of the reward."""
    return float(reading.normalized.min())


def rasterize_occupancy_grid(reading: SensorReading, ego: VehicleState,
                             cfg: SensorConfig,
                             params: VehicleParams = DEFAULT_PARAMS) -> OccupancyGridFrame:
    """Mark ray paths free and hit points occupied on an ego-anchored grid.

    The grid covers grid_extent x grid_extent length units centered on the
    rear-axle point, rotated so the ego heading is the +x axis; cells never
    touched by a ray stay unknown. Purely instantaneous: no accumulation.
    """
    if reading.distances.shape[0] != cfg.ray_count:
        raise ValueError("reading does not match sensor config")
    g = cfg.grid_size
    cells = np.full((g, g), CELL_UNKNOWN, dtype=np.int8)
    cell_size = cfg.grid_extent / g
    half = 0.5 * cfg.grid_extent
    # sensor origin in the ego frame sits ahead of the rear axle on +x
    ox = 0.5 * params.wheelbase + 0.5 * params.body_length
    step = 0.25 * cell_size

    def cell_of(px: float, py: float):
        ix = int(math.floor((px + half) / cell_size))
        iy = int(math.floor((py + half) / cell_size))
        if 0 <= ix < g and 0 <= iy < g:
            return ix, iy
        return None

    for i in range(cfg.ray_count):
        bearing = -0.5 * cfg.fov + cfg.fov * i / (cfg.ray_count - 1)
        dx = math.cos(bearing)
        dy = math.sin(bearing)
        hit = reading.distances[i]
        t = 0.0
        while t < hit:
            c = cell_of(ox + dx * t, dy * t)
            if c is not None and cells[c[1], c[0]] != CELL_OCCUPIED:
                cells[c[1], c[0]] = CELL_FREE
            t += step
        if hit < cfg.max_range:
            c = cell_of(ox + dx * hit, dy * hit)
            if c is not None:
                cells[c[1], c[0]] = CELL_OCCUPIED
    return OccupancyGridFrame(cells=cells, extent=cfg.grid_extent)
