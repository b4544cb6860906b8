"""Trajectory logs, arc-length alignment against reference runs, and the
velocity/steering error metrics used for agent-vs-human comparison."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .vehicle import DEFAULT_PARAMS

LOG_COLUMNS = ("tick", "time", "x", "y", "heading", "v", "delta", "action",
               "reward", "arc_length")


@dataclass
class TrajectoryLog:
    """Timestamped state/control series for one episode.

    arc_length is progress made good along the track centerline (running
    maximum), measured from the episode start; it is comparable across
    drivers on the same scenario.
    """
    scenario_id: str
    seed: int
    agent_id: str
    dt: float
    tick: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    heading: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    action: list = field(default_factory=list)
    reward: np.ndarray = field(default_factory=lambda: np.zeros(0))
    arc_length: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        n = len(self.tick)
        for name in ("x", "y", "heading", "v", "delta", "reward", "arc_length"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} length mismatch")
        if len(self.action) != n:
            raise ValueError("column action length mismatch")
        if n > 1:
            if np.any(np.diff(self.tick) <= 0):
                raise ValueError("ticks must be strictly increasing")
            if np.any(np.diff(self.arc_length) < 0):
                raise ValueError("arc_length must be non-decreasing")

    @property
    def time(self) -> np.ndarray:
        return self.tick * self.dt

    def __len__(self) -> int:
        return len(self.tick)


def log_from_trace(trace, meta_scenario: str, seed: int, agent_id: str,
                   dt: float) -> TrajectoryLog:
    """Build a log from an EpisodeTrace's rows (policy or driver episodes)."""
    from .vehicle import AccelCmd, ControlInput, SteerCmd
    rows = trace.rows
    n = rows.shape[0]
    actions = [ControlInput(SteerCmd(int(r[5])), AccelCmd(int(r[6]))).code()
               for r in rows]
    return TrajectoryLog(scenario_id=meta_scenario, seed=seed, agent_id=agent_id,
                         dt=dt, tick=np.arange(1, n + 1, dtype=np.int64),
                         x=rows[:, 0].copy(), y=rows[:, 1].copy(),
                         heading=rows[:, 2].copy(), v=rows[:, 3].copy(),
                         delta=rows[:, 4].copy(), action=actions,
                         reward=rows[:, 7].copy(), arc_length=rows[:, 8].copy())


def log_from_dqn_rows(rows: np.ndarray, meta_scenario: str, seed: int,
                      agent_id: str, dt: float) -> TrajectoryLog:
    from .vehicle import AccelCmd, ControlInput, SteerCmd
    n = rows.shape[0]
    actions = [ControlInput(SteerCmd(int(r[5])), AccelCmd(int(r[6]))).code()
               for r in rows]
    arc = np.maximum.accumulate(rows[:, 8]) if n else rows[:, 8]
    return TrajectoryLog(scenario_id=meta_scenario, seed=seed, agent_id=agent_id,
                         dt=dt, tick=np.arange(1, n + 1, dtype=np.int64),
                         x=rows[:, 0].copy(), y=rows[:, 1].copy(),
                         heading=rows[:, 2].copy(), v=rows[:, 3].copy(),
                         delta=rows[:, 4].copy(), action=actions,
                         reward=rows[:, 7].copy(), arc_length=arc)


@dataclass(frozen=True)
class AlignedPairs:
    stations: np.ndarray
    v_agent: np.ndarray
    v_ref: np.ndarray
    delta_agent: np.ndarray
    delta_ref: np.ndarray


def _first_occurrence_interp(stations, xs, ys):
    """Linear interpolation keeping the first sample at duplicated stations."""
    keep = np.concatenate([[True], np.diff(xs) > 0])
    return np.interp(stations, xs[keep], ys[keep])


def align_by_arc_length(agent: TrajectoryLog, reference: TrajectoryLog,
                        step: float = DEFAULT_PARAMS.body_length) -> AlignedPairs:
    """Resample both logs at shared arc-length stations over their overlap.

    Arc-length alignment (rather than time) makes drivers of different
    speeds comparable at the same road positions.
    """
    if len(agent) == 0 or len(reference) == 0:
        raise ValueError("cannot align an empty log")
    lo = max(agent.arc_length[0], reference.arc_length[0])
    hi = min(agent.arc_length[-1], reference.arc_length[-1])
    if hi < lo:
        raise ValueError("logs have no overlapping arc range")
    count = int(math.floor((hi - lo) / step)) + 1
    stations = lo + step * np.arange(count)
    return AlignedPairs(
        stations=stations,
        v_agent=_first_occurrence_interp(stations, agent.arc_length, agent.v),
        v_ref=_first_occurrence_interp(stations, reference.arc_length, reference.v),
        delta_agent=_first_occurrence_interp(stations, agent.arc_length, agent.delta),
        delta_ref=_first_occurrence_interp(stations, reference.arc_length, reference.delta))


@dataclass(frozen=True)
class ErrorMetrics:
    """Velocity errors in distance-units per tick (v * dt), steering in degrees."""
    e_vf_mean: float
    e_vf_max: float
    e_delta_mean: float
    e_delta_max: float
    velocity_error_pct: float

    def as_dict(self) -> dict:
        return {"e_vf_mean": self.e_vf_mean, "e_vf_max": self.e_vf_max,
                "e_delta_mean": self.e_delta_mean, "e_delta_max": self.e_delta_max,
                "velocity_error_pct": self.velocity_error_pct}


def velocity_and_steering_errors(pairs: AlignedPairs, dt: float,
                                 max_speed: float = DEFAULT_PARAMS.max_speed) -> ErrorMetrics:
    if len(pairs.stations) == 0:
        raise ValueError("no aligned stations")
    ev = np.abs(pairs.v_agent - pairs.v_ref)
    ed = np.degrees(np.abs(pairs.delta_agent - pairs.delta_ref))
    return ErrorMetrics(e_vf_mean=float(ev.mean() * dt),
                        e_vf_max=float(ev.max() * dt),
                        e_delta_mean=float(ed.mean()),
                        e_delta_max=float(ed.max()),
                        velocity_error_pct=float(100.0 * ev.mean() / max_speed))


@dataclass(frozen=True)
class RunRecord:
    agent_id: str
    scenario_id: str
    velocity_error_pct: Optional[float]
    training_time_s: Optional[float]
    episodes_to_best: Optional[int]
    present: bool = True


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple

    def to_csv_lines(self) -> list[str]:
        lines = ["agent,scenario,velocity_error_pct,training_time_s,episodes_to_best,present"]
        for r in self.rows:
            lines.append(",".join([
                r.agent_id, r.scenario_id,
                "" if r.velocity_error_pct is None else repr(r.velocity_error_pct),
                "" if r.training_time_s is None else repr(r.training_time_s),
                "" if r.episodes_to_best is None else str(r.episodes_to_best),
                "1" if r.present else "0"]))
        return lines

    def to_table(self) -> str:
        head = f"{'agent':<12} {'scenario':<20} {'vel err %':>10} {'train time s':>13} {'to best':>8}"
        out = [head, "-" * len(head)]
        for r in self.rows:
            vel = "absent" if not r.present else (
                "-" if r.velocity_error_pct is None else f"{r.velocity_error_pct:.3f}")
            tt = "-" if r.training_time_s is None else f"{r.training_time_s:.2f}"
            tb = "-" if r.episodes_to_best is None else str(r.episodes_to_best)
            out.append(f"{r.agent_id:<12} {r.scenario_id:<20} {vel:>10} {tt:>13} {tb:>8}")
        return "\n".join(out)


def build_comparison_report(records, agents=None, scenarios=None) -> ComparisonReport:
    """Assemble the agent-by-scenario comparison table.

    When expected agent/scenario lists are given, pairs without a record are
    emitted as absent rows rather than invented.
    """
    have = {(r.agent_id, r.scenario_id): r for r in records}
    if agents is None:
        agents = sorted({r.agent_id for r in records})
    if scenarios is None:
        scenarios = sorted({r.scenario_id for r in records})
    rows = []
    for sc in scenarios:
        for ag in agents:
            rec = have.get((ag, sc))
            if rec is None:
                rows.append(RunRecord(agent_id=ag, scenario_id=sc,
                                      velocity_error_pct=None, training_time_s=None,
                                      episodes_to_best=None, present=False))
            else:
                rows.append(rec)
    return ComparisonReport(rows=tuple(rows))
