"""Car-like body: parameters, state, discrete controls, kinematic stepping."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from . import kernels


class SteerCmd(IntEnum):
    NONE = kernels.STEER_NONE
    LEFT = kernels.STEER_LEFT
    RIGHT = kernels.STEER_RIGHT


class AccelCmd(IntEnum):
    COAST = kernels.ACCEL_COAST
    ACCELERATE = kernels.ACCEL_ACCELERATE
    BRAKE = kernels.ACCEL_BRAKE


_STEER_CODES = {"N": SteerCmd.NONE, "L": SteerCmd.LEFT, "R": SteerCmd.RIGHT}
_ACCEL_CODES = {"C": AccelCmd.COAST, "A": AccelCmd.ACCELERATE, "B": AccelCmd.BRAKE}


@dataclass(frozen=True)
class ControlInput:
    """One discrete command per control axis."""
    steer: SteerCmd = SteerCmd.NONE
    accel: AccelCmd = AccelCmd.COAST

    def code(self) -> str:
        """Two-character token used in trajectory logs, e.g. 'LA'."""
        s = {SteerCmd.NONE: "N", SteerCmd.LEFT: "L", SteerCmd.RIGHT: "R"}[self.steer]
        a = {AccelCmd.COAST: "C", AccelCmd.ACCELERATE: "A", AccelCmd.BRAKE: "B"}[self.accel]
        return s + a

    @staticmethod
    def from_code(code: str) -> "ControlInput":
        if len(code) != 2 or code[0] not in _STEER_CODES or code[1] not in _ACCEL_CODES:
            raise ValueError(f"bad control code {code!r}")
        return ControlInput(_STEER_CODES[code[0]], _ACCEL_CODES[code[1]])

    @staticmethod
    def from_names(steer: str, accel: str) -> "ControlInput":
        try:
            return ControlInput(SteerCmd[steer.upper()], AccelCmd[accel.upper()])
        except KeyError as exc:
            raise ValueError(f"bad control name: {exc}") from None


COAST = ControlInput()


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.5
    max_speed: float = 30.0
    max_steer: float = 0.6
    accel_rate: float = 8.0
    brake_rate: float = 12.0
    steer_rate: float = 2.0
    body_length: float = 4.0
    body_width: float = 2.0

    def __post_init__(self):
        vals = (self.wheelbase, self.max_speed, self.max_steer, self.accel_rate,
                self.brake_rate, self.steer_rate, self.body_length, self.body_width)
        if any(v <= 0 for v in vals):
            raise ValueError("all vehicle parameters must be strictly positive")
        if self.max_steer >= math.pi / 2:
            raise ValueError("max_steer must be below pi/2")
        if self.body_length < self.wheelbase:
            raise ValueError("body_length must cover the wheelbase")

    def as_array(self) -> np.ndarray:
        return np.array([self.wheelbase, self.max_speed, self.max_steer,
                         self.accel_rate, self.brake_rate, self.steer_rate,
                         self.body_length, self.body_width], dtype=np.float64)


DEFAULT_PARAMS = VehicleParams()


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    v: float = 0.0
    delta: float = 0.0

    def validate(self, params: VehicleParams) -> None:
        if not (-math.pi < self.heading <= math.pi):
            raise ValueError(f"heading {self.heading} not normalized to (-pi, pi]")
        if not (0.0 <= self.v <= params.max_speed):
            raise ValueError(f"speed {self.v} outside [0, {params.max_speed}]")
        if abs(self.delta) > params.max_steer:
            raise ValueError(f"steering {self.delta} exceeds max_steer")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading, self.v, self.delta],
                        dtype=np.float64)


def apply_control(state: VehicleState, cmd: ControlInput, params: VehicleParams,
                  dt: float) -> VehicleState:
    """Rate-limited actuation: speed and steering move toward the command.

    Pose is untouched; speed clamps to [0, max_speed], steering to
    [-max_steer, max_steer], and a centered steer command decays the wheel
    back toward zero at steer_rate.
    """
    v, delta = kernels.apply_control_kernel(
        state.v, state.delta, int(cmd.steer), int(cmd.accel),
        params.max_speed, params.max_steer, params.accel_rate,
        params.brake_rate, params.steer_rate, dt)
    return replace(state, v=v, delta=delta)


def step_kinematics(state: VehicleState, params: VehicleParams, dt: float) -> VehicleState:
    """Explicit-Euler kinematic bicycle update of the rear-axle pose."""
    x, y, heading = kernels.bicycle_step_kernel(
        state.x, state.y, state.heading, state.v, state.delta,
        params.wheelbase, dt)
    return replace(state, x=x, y=y, heading=heading)


def body_rectangle(state: VehicleState, params: VehicleParams) -> np.ndarray:
    """Corners of the oriented body rectangle (front-left first, clockwise)."""
    return kernels.body_corners(state.x, state.y, state.heading,
                                params.wheelbase, params.body_length,
                                params.body_width)


def check_collision(state: VehicleState, params: VehicleParams,
                    segments: np.ndarray,
                    traffic_states: np.ndarray | None = None) -> bool:
    """True iff the body rectangle touches any obstacle (closed boundaries).

    `segments` is an (N, 4) array of wall segments; `traffic_states` an
    optional (M, 5) array of other vehicles' states sharing this body shape.
    """
    corners = body_rectangle(state, params)
    segs = np.ascontiguousarray(segments, dtype=np.float64).reshape(-1, 4)
    if traffic_states is None:
        traffic_states = np.zeros((0, 5), dtype=np.float64)
    return kernels.ego_collision(corners, segs, segs.shape[0],
                                 np.ascontiguousarray(traffic_states, dtype=np.float64),
                                 params.wheelbase, params.body_length,
                                 params.body_width)
