import math

import numpy as np
import pytest

from drivesim.vehicle import (AccelCmd, ControlInput, SteerCmd, VehicleParams,
                              VehicleState, apply_control, step_kinematics)


def arc_oracle(t, v, delta, wheelbase, x0=0.0, y0=0.0, h0=0.0):
    """Closed-form pose for constant speed and steering (circular arc)."""
    rate = (v / wheelbase) * math.tan(delta)
    if rate == 0.0:
        return x0 + v * t * math.cos(h0), y0 + v * t * math.sin(h0)
    radius = v / rate
    h = h0 + rate * t
    return (x0 + radius * (math.sin(h) - math.sin(h0)),
            y0 - radius * (math.cos(h) - math.cos(h0)))


def integrate(state, params, dt, steps):
    xs = np.empty(steps)
    ys = np.empty(steps)
    for i in range(steps):
        state = step_kinematics(state, params, dt)
        xs[i] = state.x
        ys[i] = state.y
    return xs, ys, state


class TestApplyControl:
    def test_brake_clamps_at_zero(self, params):
        s = VehicleState(v=0.0)
        out = apply_control(s, ControlInput(accel=AccelCmd.BRAKE), params, 0.05)
        assert out.v == 0.0

    def test_centered_steer_is_fixed_point(self, params):
        s = VehicleState(delta=0.0)
        out = apply_control(s, ControlInput(steer=SteerCmd.NONE), params, 0.05)
        assert out.delta == 0.0

    def test_accelerate_arithmetic(self):
        p = VehicleParams(accel_rate=2.0)
        out = apply_control(VehicleState(v=1.0), ControlInput(accel=AccelCmd.ACCELERATE),
                            p, 0.05)
        assert out.v == pytest.approx(1.1, abs=1e-15)

    def test_speed_clamped_to_max(self, params):
        s = VehicleState(v=params.max_speed)
        out = apply_control(s, ControlInput(accel=AccelCmd.ACCELERATE), params, 0.05)
        assert out.v == params.max_speed

    def test_steer_clamped_to_max(self, params):
        s = VehicleState(delta=params.max_steer)
        out = apply_control(s, ControlInput(steer=SteerCmd.LEFT), params, 0.05)
        assert out.delta == params.max_steer

    def test_steer_decay_does_not_overshoot(self, params):
        s = VehicleState(delta=0.01)
        out = apply_control(s, ControlInput(steer=SteerCmd.NONE), params, 0.05)
        assert out.delta == 0.0
        s = VehicleState(delta=-0.01)
        out = apply_control(s, ControlInput(steer=SteerCmd.NONE), params, 0.05)
        assert out.delta == 0.0

    def test_pose_untouched(self, params):
        s = VehicleState(x=3.0, y=-2.0, heading=0.5, v=4.0)
        out = apply_control(s, ControlInput(SteerCmd.LEFT, AccelCmd.BRAKE), params, 0.05)
        assert (out.x, out.y, out.heading) == (3.0, -2.0, 0.5)


class TestStepKinematics:
    def test_zero_speed_keeps_pose(self, params):
        s = VehicleState(x=1.0, y=2.0, heading=0.7, v=0.0, delta=0.3)
        out = step_kinematics(s, params, 0.1)
        assert (out.x, out.y, out.heading) == (1.0, 2.0, 0.7)

    def test_straight_line(self, params):
        s = VehicleState(v=1.0)
        out = step_kinematics(s, params, 0.1)
        assert out.x == pytest.approx(0.1, abs=1e-15)
        assert out.y == 0.0
        assert out.heading == 0.0

    def test_constant_steer_arc(self):
        # v=1, delta=0.3, wheelbase=1 for one second at dt=1e-4
        p = VehicleParams(wheelbase=1.0, body_length=1.0, body_width=0.5)
        dt = 1e-4
        steps = int(round(1.0 / dt))
        s = VehicleState(v=1.0, delta=0.3)
        xs, ys, _ = integrate(s, p, dt, steps)
        t = dt * np.arange(1, steps + 1)
        ox, oy = np.vectorize(lambda tt: arc_oracle(tt, 1.0, 0.3, 1.0))(t)
        err = np.hypot(xs - ox, ys - oy).max()
        assert err < 1e-3

    def test_first_order_convergence(self):
        p = VehicleParams(wheelbase=1.0, body_length=1.0, body_width=0.5)
        errs = []
        for dt in (2e-3, 1e-3):
            steps = int(round(1.0 / dt))
            s = VehicleState(v=1.0, delta=0.3)
            xs, ys, _ = integrate(s, p, dt, steps)
            t = dt * np.arange(1, steps + 1)
            ox, oy = np.vectorize(lambda tt: arc_oracle(tt, 1.0, 0.3, 1.0))(t)
            errs.append(np.hypot(xs - ox, ys - oy).max())
        ratio = errs[0] / errs[1]
        assert 1.8 <= ratio <= 2.2


class TestInvariants:
    def test_non_holonomy(self, params):
        # zero speed means zero displacement for every control
        rng = np.random.default_rng(7)
        for _ in range(200):
            s = VehicleState(x=rng.uniform(-50, 50), y=rng.uniform(-50, 50),
                             heading=rng.uniform(-math.pi * 0.999, math.pi),
                             v=0.0, delta=rng.uniform(-0.6, 0.6))
            cmd = ControlInput(SteerCmd(int(rng.integers(3))),
                               AccelCmd(int(rng.integers(2)) * 2))  # coast or brake
            s2 = apply_control(s, cmd, params, 0.05)
            s3 = step_kinematics(s2, params, 0.05)
            assert (s3.x, s3.y) == (s.x, s.y)

    def test_heading_stays_normalized(self, params):
        rng = np.random.default_rng(11)
        s = VehicleState(v=params.max_speed, delta=params.max_steer)
        for _ in range(5000):
            s = step_kinematics(s, params, 0.05)
            assert -math.pi < s.heading <= math.pi

    def test_speed_and_steer_bounds_after_random_controls(self, params):
        rng = np.random.default_rng(13)
        s = VehicleState()
        for _ in range(2000):
            cmd = ControlInput(SteerCmd(int(rng.integers(3))),
                               AccelCmd(int(rng.integers(3))))
            s = apply_control(s, cmd, params, 0.05)
            s = step_kinematics(s, params, 0.05)
            assert 0.0 <= s.v <= params.max_speed
            assert abs(s.delta) <= params.max_steer


class TestParams:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            VehicleParams(wheelbase=0.0)

    def test_rejects_wide_steer(self):
        with pytest.raises(ValueError):
            VehicleParams(max_steer=math.pi / 2)

    def test_rejects_short_body(self):
        with pytest.raises(ValueError):
            VehicleParams(body_length=2.0, wheelbase=2.5)


class TestControlCodes:
    def test_round_trip(self):
        for s in SteerCmd:
            for a in AccelCmd:
                c = ControlInput(s, a)
                assert ControlInput.from_code(c.code()) == c

    def test_bad_code_rejected(self):
        with pytest.raises(ValueError):
            ControlInput.from_code("XY")
