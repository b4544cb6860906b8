"""Episode world: ego + traffic stepping, collision, progress bookkeeping.

World.step performs exactly the same kernel calls in the same order as the
fused rollout kernel (kernels.rollout_policy_episode), so an interpreted
episode and a fused one produce identical traces.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .scenarios import Scenario, sample_traffic
from .sensing import DEFAULT_SENSOR, SensorConfig, SensorReading
from .vehicle import DEFAULT_PARAMS, ControlInput, VehicleParams, VehicleState


@dataclass(frozen=True)
class TickConfig:
    dt: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class WorldSpec:
    """Flattened scenario arrays consumed by the rollout kernels."""
    wall_segs: np.ndarray
    centerline: np.ndarray
    cum_lengths: np.ndarray
    start_pose: np.ndarray          # x, y, heading, v, delta
    start_station: float
    finish_arc: float
    traffic_states: np.ndarray      # (N, 5), episode-initial
    traffic_speeds: np.ndarray
    traffic_wps: np.ndarray         # (N, W, 2)
    traffic_wp_counts: np.ndarray
    vp: np.ndarray                  # vehicle params array
    fov: float
    max_range: float
    n_rays: int
    dt: float
    scenario_id: str = ""
    seed: int = 0
    traffic_shortfall: bool = False


def compile_world(scenario: Scenario,
                  params: VehicleParams = DEFAULT_PARAMS,
                  sensor: SensorConfig = DEFAULT_SENSOR,
                  tick: TickConfig = TickConfig()) -> WorldSpec:
    """Sample traffic and freeze the scenario into kernel-ready arrays."""
    sample = sample_traffic(scenario, params=params)
    n = len(sample.cars)
    if n:
        wp_counts = np.array([len(c.waypoints) for c in sample.cars], dtype=np.int64)
        max_w = int(wp_counts.max())
        wps = np.zeros((n, max_w, 2), dtype=np.float64)
        states = np.zeros((n, 5), dtype=np.float64)
        speeds = np.zeros(n, dtype=np.float64)
        for i, car in enumerate(sample.cars):
            wps[i, :len(car.waypoints)] = car.waypoints
            states[i] = car.state.as_array()
            speeds[i] = car.speed
    else:
        wp_counts = np.zeros(0, dtype=np.int64)
        wps = np.zeros((0, 1, 2), dtype=np.float64)
        states = np.zeros((0, 5), dtype=np.float64)
        speeds = np.zeros(0, dtype=np.float64)
    track = scenario.track
    return WorldSpec(
        wall_segs=np.ascontiguousarray(track.wall_segments, dtype=np.float64),
        centerline=np.ascontiguousarray(track.centerline, dtype=np.float64),
        cum_lengths=np.ascontiguousarray(track.cum_lengths, dtype=np.float64),
        start_pose=track.start_pose.as_array(),
        start_station=float(track.start_station),
        finish_arc=float(track.finish_arc_length),
        traffic_states=states, traffic_speeds=speeds, traffic_wps=wps,
        traffic_wp_counts=wp_counts,
        vp=params.as_array(), fov=sensor.fov, max_range=sensor.max_range,
        n_rays=sensor.ray_count, dt=tick.dt,
        scenario_id=scenario.scenario_id, seed=scenario.seed,
        traffic_shortfall=sample.shortfall)


@dataclass
class StepResult:
    tick: int
    state: VehicleState
    control: ControlInput
    odometry_increment: float
    progress: float
    progress_delta: float
    collided: bool
    finished: bool

    @property
    def terminal(self) -> bool:
        return self.collided or self.finished


class World:
    """Mutable single-episode simulation; never shared across threads."""

    def __init__(self, spec: WorldSpec, params: VehicleParams = DEFAULT_PARAMS,
                 sensor: SensorConfig = DEFAULT_SENSOR):
        self.spec = spec
        self.params = params
        self.sensor = sensor
        self.reset()

    @classmethod
    def from_scenario(cls, scenario: Scenario,
                      params: VehicleParams = DEFAULT_PARAMS,
                      sensor: SensorConfig = DEFAULT_SENSOR,
                      tick: TickConfig = TickConfig()) -> "World":
        return cls(compile_world(scenario, params=params, sensor=sensor, tick=tick),
                   params=params, sensor=sensor)

    def reset(self) -> None:
        spec = self.spec
        self.x, self.y, self.heading, self.v, self.delta = (float(c) for c in spec.start_pose)
        self.traffic_states = spec.traffic_states.copy()
        self.traffic_wp_index = np.ones(len(spec.traffic_states), dtype=np.int64)
        # single-waypoint cars keep aiming at their spawn cell
        for i, c in enumerate(spec.traffic_wp_counts):
            if c < 2:
                self.traffic_wp_index[i] = 0
        self.n_walls = spec.wall_segs.shape[0]
        self.segs = np.empty((self.n_walls + 4 * len(spec.traffic_states), 4),
                             dtype=np.float64)
        self.segs[:self.n_walls] = spec.wall_segs
        self.tick = 0
        self.terminal_code = kernels.TERM_RUNNING
        self.progress = 0.0
        self.odometer = 0.0
        self._reading_tick = -1
        self._reading: SensorReading | None = None

    @property
    def terminal(self) -> bool:
        return self.terminal_code != kernels.TERM_RUNNING

    @property
    def ego(self) -> VehicleState:
        return VehicleState(self.x, self.y, self.heading, self.v, self.delta)

    def obstacle_segments(self) -> np.ndarray:
        """Walls plus current traffic body rectangles, as segment rows."""
        kernels.write_traffic_segments(self.segs, self.n_walls,
                                       self.traffic_states, self.params.wheelbase,
                                       self.params.body_length, self.params.body_width)
        return self.segs

    def sense(self) -> SensorReading:
        if self._reading_tick != self.tick:
            segs = self.obstacle_segments()
            ox, oy = kernels.sensor_origin(self.x, self.y, self.heading,
                                           self.params.wheelbase,
                                           self.params.body_length)
            dist = kernels.cast_rays_kernel(ox, oy, self.heading, self.sensor.fov,
                                            self.sensor.max_range,
                                            self.sensor.ray_count,
                                            segs, segs.shape[0])
            self._reading = SensorReading(distances=dist,
                                          max_range=self.sensor.max_range)
            self._reading_tick = self.tick
        return self._reading

    def observe(self) -> np.ndarray:
        """Agent observation: normalized rays, then v and steering angle."""
        reading = self.sense()
        obs = np.empty(self.sensor.ray_count + 2, dtype=np.float64)
        obs[:self.sensor.ray_count] = reading.normalized
        obs[self.sensor.ray_count] = self.v / self.params.max_speed
        obs[self.sensor.ray_count + 1] = self.delta / self.params.max_steer
        return obs

    def step(self, control: ControlInput) -> StepResult:
        """Advance the world one tick; raises if already terminal."""
        if self.terminal:
            raise RuntimeError("cannot step a terminal world")
        spec = self.spec
        p = self.params
        dt = spec.dt
        v, delta = kernels.apply_control_kernel(
            self.v, self.delta, int(control.steer), int(control.accel),
            p.max_speed, p.max_steer, p.accel_rate, p.brake_rate, p.steer_rate, dt)
        x, y, heading = kernels.bicycle_step_kernel(
            self.x, self.y, self.heading, v, delta, p.wheelbase, dt)
        kernels.traffic_advance_kernel(self.traffic_states, spec.traffic_speeds,
                                       spec.traffic_wps, spec.traffic_wp_counts,
                                       self.traffic_wp_index, p.wheelbase,
                                       p.max_steer, dt)
        corners = kernels.body_corners(x, y, heading, p.wheelbase,
                                       p.body_length, p.body_width)
        collided = kernels.ego_collision(corners, self.segs, self.n_walls,
                                         self.traffic_states, p.wheelbase,
                                         p.body_length, p.body_width)
        station = kernels.project_station(x, y, spec.centerline, spec.cum_lengths)
        rel = station - spec.start_station
        delta_p = rel - self.progress
        if rel > self.progress:
            self.progress = rel
        else:
            delta_p = 0.0

        self.x, self.y, self.heading, self.v, self.delta = x, y, heading, v, delta
        self.odometer += v * dt
        self.tick += 1
        finished = False
        if collided:
            self.terminal_code = kernels.TERM_COLLISION
        elif self.progress >= spec.finish_arc:
            self.terminal_code = kernels.TERM_FINISHED
            finished = True
        return StepResult(tick=self.tick, state=self.ego, control=control,
                          odometry_increment=v * dt, progress=self.progress,
                          progress_delta=delta_p, collided=bool(collided),
                          finished=finished)


def step_world(world: World, control: ControlInput) -> StepResult:
    """One tick of the composed simulation (actuate, integrate, traffic,
    collision, odometry); rejects worlds already in a terminal state."""
    return world.step(control)
