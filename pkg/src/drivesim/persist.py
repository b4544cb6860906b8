"""File formats: trajectory CSV, scenario/config JSON, binary checkpoints.

Trajectory logs are comma-separated with a fixed column order
(tick,time,x,y,heading,v,delta,action,reward,arc_length) preceded by two
comment lines of metadata. Checkpoints are a little-endian binary layout:
magic, version, agent kind, a JSON metadata blob (config snapshot, RNG
state, counters, topology) and raw float64 parameter sections.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .dqn import DqnConfig, DqnRun, ReplayBuffer
from .evolution import (EvolutionConfig, EvolutionRun, FitnessReport, Individual,
                        Population)
from .evaluation import LOG_COLUMNS, TrajectoryLog
from .network import Network, NetworkTopology, unflatten, flatten
from .scenarios import Scenario, build_scenario

MAGIC = b"DSIMCKPT"
VERSION = 1
AGENT_EVO = 0
AGENT_DQN = 1

SCHEMA_VERSION = 1


class FormatError(Exception):
    """Raised for malformed or mismatched persisted data."""


# ---------------------------------------------------------------- trajectories

def write_trajectory_csv(log: TrajectoryLog, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# drivesim-trajectory schema={SCHEMA_VERSION}\n")
        fh.write(f"# scenario={log.scenario_id} seed={log.seed} "
                 f"agent={log.agent_id} dt={log.dt!r}\n")
        fh.write(",".join(LOG_COLUMNS) + "\n")
        time = log.time
        for i in range(len(log)):
            fh.write(f"{int(log.tick[i])},{float(time[i])!r},{float(log.x[i])!r},"
                     f"{float(log.y[i])!r},{float(log.heading[i])!r},"
                     f"{float(log.v[i])!r},{float(log.delta[i])!r},"
                     f"{log.action[i]},{float(log.reward[i])!r},"
                     f"{float(log.arc_length[i])!r}\n")


def read_trajectory_csv(path) -> TrajectoryLog:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 3 or not lines[0].startswith("# drivesim-trajectory"):
        raise FormatError(f"{path}: not a trajectory log")
    meta = {}
    for token in lines[1].lstrip("# ").split():
        if "=" in token:
            k, v = token.split("=", 1)
            meta[k] = v
    if lines[2] != ",".join(LOG_COLUMNS):
        raise FormatError(f"{path}: unexpected column header")
    cols = {name: [] for name in LOG_COLUMNS}
    for line in lines[3:]:
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(LOG_COLUMNS):
            raise FormatError(f"{path}: bad row {line!r}")
        for name, val in zip(LOG_COLUMNS, parts):
            cols[name].append(val)
    try:
        return TrajectoryLog(
            scenario_id=meta["scenario"], seed=int(meta["seed"]),
            agent_id=meta["agent"], dt=float(meta["dt"]),
            tick=np.array([int(t) for t in cols["tick"]], dtype=np.int64),
            x=np.array([float(v) for v in cols["x"]]),
            y=np.array([float(v) for v in cols["y"]]),
            heading=np.array([float(v) for v in cols["heading"]]),
            v=np.array([float(v) for v in cols["v"]]),
            delta=np.array([float(v) for v in cols["delta"]]),
            action=list(cols["action"]),
            reward=np.array([float(v) for v in cols["reward"]]),
            arc_length=np.array([float(v) for v in cols["arc_length"]]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ------------------------------------------------------------------- scenarios

def scenario_to_dict(scenario: Scenario) -> dict:
    return {"schema": SCHEMA_VERSION, "kind": scenario.kind, "seed": scenario.seed,
            "name": scenario.name, "traffic_count": scenario.traffic_count,
            "traffic_speed_range": list(scenario.traffic_speed_range),
            "params": scenario.params}


def scenario_from_dict(data: dict) -> Scenario:
    if data.get("schema") != SCHEMA_VERSION:
        raise FormatError(f"scenario schema {data.get('schema')!r} unsupported")
    try:
        return build_scenario(data["kind"], int(data["seed"]),
                              traffic_count=int(data.get("traffic_count", 0)),
                              traffic_speed_range=tuple(data.get("traffic_speed_range",
                                                                 (3.0, 8.0))),
                              name=data.get("name"),
                              **data.get("params", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad scenario data: {exc}") from exc


def write_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2,
                                     sort_keys=True) + "\n", encoding="utf-8")


def read_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    return scenario_from_dict(data)


# ----------------------------------------------------------------- checkpoints

def _pack_array(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return struct.pack("<Q", a.size) + a.tobytes()


def _unpack_array(buf: io.BytesIO) -> np.ndarray:
    (n,) = struct.unpack("<Q", buf.read(8))
    data = buf.read(8 * n)
    if len(data) != 8 * n:
        raise FormatError("truncated checkpoint array")
    return np.frombuffer(data, dtype="<f8").astype(np.float64)


def _rng_state_to_json(state: dict) -> dict:
    # PCG64 state carries big ints; store them as strings
    return {"bit_generator": state["bit_generator"],
            "state": {k: str(v) for k, v in state["state"].items()},
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"]}


def _rng_state_from_json(data: dict) -> dict:
    return {"bit_generator": data["bit_generator"],
            "state": {k: int(v) for k, v in data["state"].items()},
            "has_uint32": int(data["has_uint32"]),
            "uinteger": int(data["uinteger"])}


def save_evo_checkpoint(path, run: EvolutionRun, config: EvolutionConfig,
                        scenario: Scenario) -> None:
    meta = {
        "config": asdict(config),
        "scenario": scenario_to_dict(scenario),
        "generation": run.population.generation,
        "rng_state": _rng_state_to_json(run.rng_state),
        "topology": list(config.topology(run.spec.n_rays).layer_sizes),
    }
    meta_json = json.dumps(meta, sort_keys=True).encode("utf-8")
    pop = run.population
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IB", VERSION, AGENT_EVO))
        fh.write(struct.pack("<Q", len(meta_json)))
        fh.write(meta_json)
        fh.write(struct.pack("<Q", len(pop.individuals)))
        for ind in pop.individuals:
            fh.write(_pack_array(ind.genome))
            f = ind.fitness
            fh.write(struct.pack("<5d", f.distance, f.mean_speed, f.scalar,
                                 f.distance_ratio, float(f.ticks)))
            fh.write(struct.pack("<i", f.terminal_code))


def save_dqn_checkpoint(path, run: DqnRun, config: DqnConfig,
                        scenario: Scenario) -> None:
    meta = {
        "config": asdict(config),
        "scenario": scenario_to_dict(scenario),
        "episodes_done": run.episodes_done,
        "grad_steps": run.grad_steps,
        "convergence_streak": run.convergence_streak,
        "rng_state": _rng_state_to_json(run.rng_state),
        "topology": list(run.online.topology.layer_sizes),
        "buffer": {"capacity": run.buffer.capacity, "size": run.buffer.size,
                   "pos": run.buffer.pos,
                   "obs_dim": run.buffer.states.shape[1]},
    }
    meta_json = json.dumps(meta, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IB", VERSION, AGENT_DQN))
        fh.write(struct.pack("<Q", len(meta_json)))
        fh.write(meta_json)
        fh.write(_pack_array(flatten(run.online)))
        fh.write(_pack_array(flatten(run.target)))
        buf = run.buffer
        n = buf.size
        fh.write(_pack_array(buf.states[:n].ravel()))
        fh.write(_pack_array(buf.actions[:n].astype(np.float64)))
        fh.write(_pack_array(buf.rewards[:n]))
        fh.write(_pack_array(buf.next_states[:n].ravel()))
        fh.write(_pack_array(buf.terminals[:n].astype(np.float64)))
        fh.write(_pack_array(run.probe_states.ravel()))
        if run.probe_prev is not None:
            fh.write(_pack_array(run.probe_prev.ravel()))
        else:
            fh.write(_pack_array(np.zeros(0)))


class Checkpoint:
    """Loaded checkpoint contents; kind decides which fields are set."""

    def __init__(self, kind: int, meta: dict):
        self.kind = kind
        self.meta = meta
        self.population: Optional[Population] = None
        self.online: Optional[Network] = None
        self.target: Optional[Network] = None
        self.buffer: Optional[ReplayBuffer] = None
        self.probe_states: Optional[np.ndarray] = None
        self.probe_prev: Optional[np.ndarray] = None

    @property
    def agent_id(self) -> str:
        return "evo" if self.kind == AGENT_EVO else "dqn"

    def scenario(self) -> Scenario:
        return scenario_from_dict(self.meta["scenario"])

    def rng_state(self) -> dict:
        return _rng_state_from_json(self.meta["rng_state"])

    def evo_config(self) -> EvolutionConfig:
        cfg = dict(self.meta["config"])
        cfg["speed_bounds"] = tuple(cfg["speed_bounds"])
        cfg["hidden_sizes"] = tuple(cfg["hidden_sizes"])
        return EvolutionConfig(**cfg)

    def dqn_config(self) -> DqnConfig:
        cfg = dict(self.meta["config"])
        cfg["hidden_sizes"] = tuple(cfg["hidden_sizes"])
        return DqnConfig(**cfg)

    def policy_theta(self) -> np.ndarray:
        """Flat parameters of the checkpoint's driving policy."""
        if self.kind == AGENT_EVO:
            return self.population.best().genome
        return flatten(self.online)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    buf = io.BytesIO(raw)
    if buf.read(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    version, kind = struct.unpack("<IB", buf.read(5))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<Q", buf.read(8))
    meta = json.loads(buf.read(meta_len).decode("utf-8"))
    ckpt = Checkpoint(kind, meta)
    topology = NetworkTopology(tuple(meta["topology"]))
    if kind == AGENT_EVO:
        (k,) = struct.unpack("<Q", buf.read(8))
        individuals = []
        for _ in range(k):
            genome = _unpack_array(buf)
            distance, mean_speed, scalar, ratio, ticks = struct.unpack("<5d", buf.read(40))
            (term,) = struct.unpack("<i", buf.read(4))
            individuals.append(Individual(
                genome=genome,
                fitness=FitnessReport(distance=distance, mean_speed=mean_speed,
                                      scalar=scalar, distance_ratio=ratio,
                                      ticks=int(ticks), terminal_code=term)))
        ckpt.population = Population(individuals=individuals,
                                     generation=int(meta["generation"]))
    elif kind == AGENT_DQN:
        ckpt.online = unflatten(topology, _unpack_array(buf))
        ckpt.target = unflatten(topology, _unpack_array(buf))
        b = meta["buffer"]
        buffer = ReplayBuffer(int(b["capacity"]), int(b["obs_dim"]))
        n = int(b["size"])
        obs_dim = int(b["obs_dim"])
        buffer.states[:n] = _unpack_array(buf).reshape(n, obs_dim)
        buffer.actions[:n] = _unpack_array(buf).astype(np.int64)
        buffer.rewards[:n] = _unpack_array(buf)
        buffer.next_states[:n] = _unpack_array(buf).reshape(n, obs_dim)
        buffer.terminals[:n] = _unpack_array(buf).astype(bool)
        buffer.size = n
        buffer.pos = int(b["pos"])
        ckpt.buffer = buffer
        probes = _unpack_array(buf)
        ckpt.probe_states = probes.reshape(-1, obs_dim)
        prev = _unpack_array(buf)
        ckpt.probe_prev = prev.reshape(-1, topology.layer_sizes[-1]) if prev.size else None
    else:
        raise FormatError(f"{path}: unknown agent kind {kind}")
    return ckpt


# --------------------------------------------------------------------- configs

_CONFIG_SECTIONS = {
    "vehicle": {"wheelbase": float, "max_speed": float, "max_steer": float,
                "accel_rate": float, "brake_rate": float, "steer_rate": float,
                "body_length": float, "body_width": float},
    "sensor": {"fov": float, "ray_count": int, "max_range": float,
               "grid_size": int, "grid_extent": float},
    "simulation": {"dt": float},
    "evolution": {"pop_size": int, "tournament_size": int, "elite_count": int,
                  "mutation_sigma": float, "mutation_rate": float,
                  "crossover_rate": float, "max_episode_ticks": int,
                  "generations": int, "seed": int, "speed_bounds": list,
                  "fitness_weight": float, "hidden_sizes": list,
                  "stop_distance_ratio": (float, type(None))},
    "dqn": {"gamma": float, "eps_start": float, "eps_end": float,
            "eps_fraction": float, "learning_rate": float,
            "replay_capacity": int, "batch_size": int, "target_sync": int,
            "max_episodes": int, "max_episode_ticks": int,
            "min_episode_len": int, "seed": int, "hidden_sizes": list,
            "convergence_threshold": float, "convergence_window": int,
            "probe_size": int, "traffic_per_episode": bool},
    "evaluation": {"episodes": int, "align_step": float},
}


class ConfigError(Exception):
    """Invalid configuration; message carries the offending field path."""


def validate_config_dict(data: dict) -> dict:
    """Check a raw config dict against the schema, returning it unchanged."""
    if not isinstance(data, dict):
        raise ConfigError("config root: expected an object")
    schema = data.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"schema: unsupported value {schema!r}")
    for section, value in data.items():
        if section == "schema":
            continue
        if section not in _CONFIG_SECTIONS:
            raise ConfigError(f"{section}: unknown section")
        if not isinstance(value, dict):
            raise ConfigError(f"{section}: expected an object")
        fields = _CONFIG_SECTIONS[section]
        for key, val in value.items():
            if key not in fields:
                raise ConfigError(f"{section}.{key}: unknown field")
            expected = fields[key]
            if expected is float:
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise ConfigError(f"{section}.{key}: expected number, "
                                      f"got {type(val).__name__}")
            elif expected is int:
                if isinstance(val, bool) or not isinstance(val, int):
                    raise ConfigError(f"{section}.{key}: expected integer, "
                                      f"got {type(val).__name__}")
            elif expected is bool:
                if not isinstance(val, bool):
                    raise ConfigError(f"{section}.{key}: expected boolean, "
                                      f"got {type(val).__name__}")
            elif expected is list:
                if not isinstance(val, list):
                    raise ConfigError(f"{section}.{key}: expected list, "
                                      f"got {type(val).__name__}")
            elif isinstance(expected, tuple):
                if val is not None and (isinstance(val, bool)
                                        or not isinstance(val, (int, float))):
                    raise ConfigError(f"{section}.{key}: expected number or null")
    return data


def read_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    return validate_config_dict(data)


def config_snapshot(vehicle, sensor, dt: float, evo: Optional[EvolutionConfig],
                    dqn_cfg: Optional[DqnConfig], evaluation: dict) -> dict:
    """Every effective value, defaults included, for the output snapshot."""
    snap = {"schema": SCHEMA_VERSION,
            "vehicle": asdict(vehicle), "sensor": asdict(sensor),
            "simulation": {"dt": dt}, "evaluation": dict(evaluation)}
    if evo is not None:
        d = asdict(evo)
        d["speed_bounds"] = list(d["speed_bounds"])
        d["hidden_sizes"] = list(d["hidden_sizes"])
        snap["evolution"] = d
    if dqn_cfg is not None:
        d = asdict(dqn_cfg)
        d["hidden_sizes"] = list(d["hidden_sizes"])
        snap["dqn"] = d
    return snap


def write_json(data: dict, path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
