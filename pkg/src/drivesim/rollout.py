"""Episode rollouts: fused-kernel policy episodes, interpreted control
streams, and a scripted centerline-following driver used as a reference."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .vehicle import AccelCmd, ControlInput, SteerCmd
from .world import World, WorldSpec


@dataclass
class EpisodeTrace:
    """Per-tick record of one episode plus its summary values."""
    ticks: int
    terminal_code: int
    progress: float
    v_sum: float
    rows: np.ndarray  # (ticks, 9): x, y, heading, v, delta, steer, accel, dp, progress

    @property
    def mean_speed(self) -> float:
        return self.v_sum / self.ticks if self.ticks else 0.0

    @property
    def collided(self) -> bool:
        return self.terminal_code == kernels.TERM_COLLISION

    @property
    def finished(self) -> bool:
        return self.terminal_code == kernels.TERM_FINISHED


def initial_wp_index(spec: WorldSpec) -> np.ndarray:
    idx = np.ones(len(spec.traffic_states), dtype=np.int64)
    for i, c in enumerate(spec.traffic_wp_counts):
        if c < 2:
            idx[i] = 0
    return idx


def run_policy_episode(spec: WorldSpec, theta: np.ndarray, sizes: np.ndarray,
                       max_ticks: int, record: bool = False) -> EpisodeTrace:
    """Closed-loop episode for a continuous-output policy (fused kernel)."""
    ticks, term, progress, v_sum, rows = kernels.rollout_policy_episode(
        np.ascontiguousarray(theta, dtype=np.float64), sizes,
        spec.wall_segs, spec.centerline, spec.cum_lengths,
        spec.start_station, spec.finish_arc, spec.start_pose,
        spec.traffic_states.copy(), spec.traffic_speeds, spec.traffic_wps,
        spec.traffic_wp_counts, initial_wp_index(spec),
        spec.vp, spec.fov, spec.max_range, spec.n_rays, spec.dt,
        max_ticks, record)
    return EpisodeTrace(ticks=int(ticks), terminal_code=int(term),
                        progress=float(progress), v_sum=float(v_sum), rows=rows)


def run_driver_episode(world: World, driver: Callable[[World], ControlInput],
                       max_ticks: int) -> EpisodeTrace:
    """Interpreted episode loop; `driver` maps the live world to a control."""
    rows = np.empty((max_ticks, 9), dtype=np.float64)
    v_sum = 0.0
    term = kernels.TERM_TICK_CAP
    t = 0
    for t in range(max_ticks):
        control = driver(world)
        res = world.step(control)
        rows[t] = (res.state.x, res.state.y, res.state.heading, res.state.v,
                   res.state.delta, int(control.steer), int(control.accel),
                   res.progress_delta, res.progress)
        v_sum += res.state.v
        if res.collided:
            term = kernels.TERM_COLLISION
            break
        if res.finished:
            term = kernels.TERM_FINISHED
            break
    ticks = min(t + 1, max_ticks) if max_ticks else 0
    return EpisodeTrace(ticks=ticks, terminal_code=term,
                        progress=world.progress, v_sum=v_sum, rows=rows[:ticks])


def policy_driver(theta: np.ndarray, sizes: np.ndarray) -> Callable[[World], ControlInput]:
    """Continuous-output policy as a World driver (mirrors the fused kernel)."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)

    def drive(world: World) -> ControlInput:
        obs = world.observe()
        out = kernels.mlp_forward_kernel(theta, sizes, obs)
        if not (math.isfinite(out[0]) and math.isfinite(out[1])):
            raise FloatingPointError("policy produced a non-finite output")
        steer, accel = kernels.decode_continuous(out[0], out[1], kernels.DEAD_ZONE)
        return ControlInput(SteerCmd(steer), AccelCmd(accel))

    return drive


def control_stream_driver(codes) -> Callable[[World], ControlInput]:
    """Replays a fixed list of two-character control codes tick by tick."""
    controls = [ControlInput.from_code(c) for c in codes]

    def drive(world: World) -> ControlInput:
        if world.tick >= len(controls):
            return ControlInput()
        return controls[world.tick]

    return drive


@dataclass
class ScriptedDriver:
    """Pure-pursuit centerline follower with a target cruise speed.

    Used as the fitness oracle on simple tracks and to record reference
    trajectories standing in for a human driver.
    """
    target_speed: float = 12.0
    lookahead: float = 10.0
    steer_tolerance: float = 0.02

    def __call__(self, world: World) -> ControlInput:
        spec = world.spec
        station = kernels.project_station(world.x, world.y, spec.centerline,
                                          spec.cum_lengths)
        target_station = station + self.lookahead
        # clamp into the polyline range; beyond the end we aim at the last point
        total = float(spec.cum_lengths[-1])
        target_station = min(target_station, total)
        point = _point_on_polyline(spec.centerline, spec.cum_lengths, target_station)
        alpha = kernels.normalize_heading(
            math.atan2(point[1] - world.y, point[0] - world.x) - world.heading)
        wheelbase = spec.vp[kernels.VP_WHEELBASE]
        desired = math.atan2(2.0 * wheelbase * math.sin(alpha), self.lookahead)
        max_steer = spec.vp[kernels.VP_MAX_STEER]
        desired = max(-max_steer, min(max_steer, desired))
        if desired > world.delta + self.steer_tolerance:
            steer = SteerCmd.LEFT
        elif desired < world.delta - self.steer_tolerance:
            steer = SteerCmd.RIGHT
        else:
            steer = SteerCmd.NONE
        if world.v < self.target_speed:
            accel = AccelCmd.ACCELERATE
        elif world.v > self.target_speed + 1.0:
            accel = AccelCmd.BRAKE
        else:
            accel = AccelCmd.COAST
        return ControlInput(steer, accel)


def _point_on_polyline(line: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(max(i, 0), len(line) - 2)
    seg = line[i + 1] - line[i]
    seg_len = math.hypot(seg[0], seg[1])
    t = 0.0 if seg_len == 0.0 else min(max((s - cum[i]) / seg_len, 0.0), 1.0)
    return line[i] + t * seg


STEER_NAMES = {SteerCmd.NONE: "none", SteerCmd.LEFT: "left", SteerCmd.RIGHT: "right"}
ACCEL_NAMES = {AccelCmd.COAST: "coast", AccelCmd.ACCELERATE: "accelerate",
               AccelCmd.BRAKE: "brake"}


def trace_control_codes(trace: EpisodeTrace) -> list[str]:
    codes = []
    for row in trace.rows:
        c = ControlInput(SteerCmd(int(row[5])), AccelCmd(int(row[6])))
        codes.append(c.code())
    return codes
