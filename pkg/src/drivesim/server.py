"""Live session service: steps one world at a fixed tick rate and speaks a
JSON-over-WebSocket protocol with one driver and any number of observers.

Every message is a single JSON object in one text frame. Outbound world
frames are ordered by tick; the latest inbound control before a tick wins.
A manual stepping mode ("set_realtime" false + "step" commands) exists so
scripted clients and tests can drive deterministically.
"""
from __future__ import annotations

import asyncio
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np
import websockets
from websockets.asyncio.server import serve as ws_serve

from . import kernels
from .evaluation import TrajectoryLog
from .persist import write_trajectory_csv
from .rollout import EpisodeTrace
from .sensing import DEFAULT_SENSOR, SensorConfig, rasterize_occupancy_grid
from .vehicle import AccelCmd, ControlInput, DEFAULT_PARAMS, SteerCmd, VehicleParams
from .world import TickConfig, World, compile_world

GRID_CHARS = {0: "?", 1: ".", 2: "#"}  # unknown, free, occupied


class SessionServer:
    """One simulation session shared by websocket clients."""

    def __init__(self, scenario, params: VehicleParams = DEFAULT_PARAMS,
                 sensor: SensorConfig = DEFAULT_SENSOR,
                 tick: TickConfig = TickConfig(),
                 record_dir=None, auto_record: bool = False,
                 realtime: bool = True, policy_theta=None, policy_sizes=None,
                 send_grid: bool = True):
        self.scenario = scenario
        self.params = params
        self.sensor = sensor
        self.tick_cfg = tick
        self.record_dir = Path(record_dir) if record_dir else None
        self.auto_record = auto_record
        self.realtime = realtime
        self.send_grid = send_grid
        self.policy_theta = policy_theta
        self.policy_sizes = policy_sizes
        self.mode = "human"

        self.spec = compile_world(scenario, params=params, sensor=sensor, tick=tick)
        self.world = World(self.spec, params=params, sensor=sensor)
        self.latest_control = ControlInput()
        self.clients: set = set()
        self.driver = None
        self.malformed_count = 0
        self.recording = auto_record
        self.record_rows: list = []
        self.records_written = 0
        self._server = None
        self._tick_task = None
        self._stopping = False

    # ------------------------------------------------------------- lifecycle

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> int:
        self._server = await ws_serve(self._handler, host, port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._tick_task = asyncio.create_task(self._tick_loop())
        return self.port

    async def stop(self) -> None:
        self._stopping = True
        if self._tick_task:
            self._tick_task.cancel()
            try:
                await self._tick_task
            except asyncio.CancelledError:
                pass
        self._server.close()
        await self._server.wait_closed()

    async def run_forever(self, host: str, port: int) -> None:
        await self.start(host, port)
        print(f"session listening on ws://{host}:{self.port} "
              f"(scenario {self.scenario.scenario_id})")
        await asyncio.Future()

    # ------------------------------------------------------------ simulation

    def _reset_world(self) -> None:
        self.world = World(self.spec, params=self.params, sensor=self.sensor)
        self.latest_control = ControlInput()
        self.recording = self.auto_record
        self.record_rows = []

    def _policy_control(self) -> ControlInput:
        obs = self.world.observe()
        theta = self.policy_theta
        out = kernels.mlp_forward_kernel(theta, self.policy_sizes, obs)
        if self.policy_sizes[-1] == 2:
            steer, accel = kernels.decode_continuous(out[0], out[1],
                                                     kernels.DEAD_ZONE)
            return ControlInput(SteerCmd(steer), AccelCmd(accel))
        from .dqn import decode_action
        return decode_action(int(np.argmax(out)))

    def step_once(self) -> dict:
        """Advance one tick and return the frame to broadcast."""
        if self.world.terminal:
            return self._frame()
        if self.mode == "agent" and self.policy_theta is not None:
            control = self._policy_control()
        else:
            control = self.latest_control
        res = self.world.step(control)
        if self.recording:
            self.record_rows.append((res.state.x, res.state.y, res.state.heading,
                                     res.state.v, res.state.delta,
                                     int(control.steer), int(control.accel),
                                     res.progress_delta, res.progress))
        return self._frame()

    def _frame(self) -> dict:
        w = self.world
        reading = w.sense()
        from .dqn import compute_reward
        odom = w.v * self.spec.dt
        reward = compute_reward(odom, w.v, float(reading.normalized.min()),
                                self.params, self.spec.dt).rho
        frame = {
            "type": "frame",
            "tick": w.tick,
            "time": w.tick * self.spec.dt,
            "ego": {"x": w.x, "y": w.y, "heading": w.heading, "v": w.v,
                    "delta": w.delta},
            "traffic": [[float(s[0]), float(s[1]), float(s[2])]
                        for s in w.traffic_states],
            "rays": {
                "origin": list(kernels.sensor_origin(w.x, w.y, w.heading,
                                                     self.params.wheelbase,
                                                     self.params.body_length)),
                "bearings": self.sensor.bearings(w.heading).tolist(),
                "distances": reading.distances.tolist(),
                "normalized": reading.normalized.tolist(),
            },
            "reward": reward,
            "progress": w.progress,
            "terminal": w.terminal,
            "terminal_code": w.terminal_code,
            "recording": self.recording,
            "mode": self.mode,
        }
        if self.send_grid:
            grid = rasterize_occupancy_grid(reading, w.ego, self.sensor, self.params)
            frame["grid"] = {"size": grid.size, "extent": grid.extent,
                             "cells": "".join(GRID_CHARS[int(c)]
                                              for c in grid.cells.ravel())}
        return frame

    def _welcome(self, role: str) -> dict:
        track = self.scenario.track
        return {
            "type": "welcome", "role": role,
            "scenario": self.scenario.scenario_id,
            "seed": self.scenario.seed,
            "dt": self.spec.dt,
            "realtime": self.realtime,
            "vehicle": {"wheelbase": self.params.wheelbase,
                        "body_length": self.params.body_length,
                        "body_width": self.params.body_width,
                        "max_speed": self.params.max_speed,
                        "max_steer": self.params.max_steer},
            "sensor": {"fov": self.sensor.fov, "ray_count": self.sensor.ray_count,
                       "max_range": self.sensor.max_range,
                       "grid_size": self.sensor.grid_size,
                       "grid_extent": self.sensor.grid_extent},
            "track": {"width": track.width,
                      "walls": track.wall_segments.tolist(),
                      "centerline": track.centerline.tolist(),
                      "finish_arc_length": track.finish_arc_length},
        }

    # -------------------------------------------------------------- protocol

    async def _tick_loop(self) -> None:
        while not self._stopping:
            if not self.realtime:
                await asyncio.sleep(0.01)
                continue
            t0 = asyncio.get_event_loop().time()
            frame = self.step_once()
            self._broadcast(frame)
            elapsed = asyncio.get_event_loop().time() - t0
            await asyncio.sleep(max(0.0, self.spec.dt - elapsed))

    def _broadcast(self, message: dict) -> None:
        data = json.dumps(message)
        for ws in list(self.clients):
            asyncio.create_task(self._safe_send(ws, data))

    async def _safe_send(self, ws, data: str) -> None:
        try:
            await ws.send(data)
        except websockets.ConnectionClosed:
            pass

    async def _send(self, ws, message: dict) -> None:
        await self._safe_send(ws, json.dumps(message))

    async def _handler(self, ws) -> None:
        role = "observer"
        self.clients.add(ws)
        try:
            async for raw in ws:
                try:
                    msg = json.loads(raw)
                    if not isinstance(msg, dict) or "type" not in msg:
                        raise ValueError("not a message object")
                except (ValueError, UnicodeDecodeError):
                    self.malformed_count += 1
                    continue
                mtype = msg["type"]
                if mtype == "hello":
                    want = msg.get("role", "observer")
                    if want == "driver":
                        if self.driver is not None and self.driver is not ws:
                            await self._send(ws, {"type": "error",
                                                  "detail": "driver slot taken"})
                            break  # reject the second driver connection
                        self.driver = ws
                        role = "driver"
                        if self.auto_record:
                            self.recording = True
                    await self._send(ws, self._welcome(role))
                    await self._send(ws, self._frame())
                elif mtype == "control":
                    if ws is not self.driver:
                        self.malformed_count += 1
                        continue
                    try:
                        self.latest_control = ControlInput.from_names(
                            msg.get("steer", "none"), msg.get("accel", "coast"))
                    except ValueError:
                        self.malformed_count += 1
                elif mtype == "command":
                    await self._command(ws, msg)
                else:
                    self.malformed_count += 1
        finally:
            self.clients.discard(ws)
            if ws is self.driver:
                self.driver = None

    async def _command(self, ws, msg: dict) -> None:
        cmd = msg.get("cmd")
        if cmd == "reset":
            self._reset_world()
            await self._send(ws, {"type": "ack", "cmd": "reset", "ok": True})
            self._broadcast(self._frame())
        elif cmd == "record_start":
            self.recording = True
            self.record_rows = []
            await self._send(ws, {"type": "ack", "cmd": "record_start", "ok": True})
        elif cmd == "record_stop":
            path = self._write_recording()
            self.recording = False
            await self._send(ws, {"type": "ack", "cmd": "record_stop",
                                  "ok": path is not None,
                                  "path": str(path) if path else None})
        elif cmd == "select_mode":
            mode = msg.get("mode", "human")
            if mode == "agent" and self.policy_theta is None:
                await self._send(ws, {"type": "ack", "cmd": "select_mode",
                                      "ok": False,
                                      "detail": "no agent checkpoint loaded"})
            elif mode in ("agent", "human"):
                self.mode = mode
                await self._send(ws, {"type": "ack", "cmd": "select_mode",
                                      "ok": True, "mode": mode})
            else:
                self.malformed_count += 1
        elif cmd == "set_realtime":
            self.realtime = bool(msg.get("value", True))
            await self._send(ws, {"type": "ack", "cmd": "set_realtime",
                                  "ok": True, "value": self.realtime})
        elif cmd == "step":
            if self.realtime:
                await self._send(ws, {"type": "ack", "cmd": "step", "ok": False,
                                      "detail": "step only works in manual mode"})
                return
            count = int(msg.get("count", 1))
            frame = None
            for _ in range(max(1, count)):
                frame = self.step_once()
                if frame["terminal"]:
                    break
            self._broadcast(frame)
            await self._send(ws, {"type": "ack", "cmd": "step", "ok": True,
                                  "tick": self.world.tick})
        elif cmd == "stats":
            await self._send(ws, {"type": "ack", "cmd": "stats", "ok": True,
                                  "malformed": self.malformed_count,
                                  "observers": len(self.clients)})
        else:
            self.malformed_count += 1

    def _write_recording(self):
        if not self.record_rows or self.record_dir is None:
            return None
        rows = np.asarray(self.record_rows, dtype=np.float64)
        trace = EpisodeTrace(ticks=len(rows), terminal_code=self.world.terminal_code,
                             progress=self.world.progress, v_sum=float(rows[:, 3].sum()),
                             rows=rows)
        from .evaluation import log_from_trace
        agent_id = "human" if self.mode == "human" else "agent"
        log = log_from_trace(trace, self.scenario.scenario_id, self.scenario.seed,
                             agent_id, self.spec.dt)
        self.record_dir.mkdir(parents=True, exist_ok=True)
        path = self.record_dir / f"recording_{self.records_written:03d}.csv"
        write_trajectory_csv(log, path)
        self.records_written += 1
        return path


def serve_session(scenario, host: str = "127.0.0.1", port: int = 8700,
                  **kwargs) -> None:
    """Blocking entry point used by the CLI."""
    server = SessionServer(scenario, **kwargs)
    try:
        asyncio.run(server.run_forever(host, port))
    except KeyboardInterrupt:
        pass
