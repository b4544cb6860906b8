"""Command-line entry points: training, evaluation, replay, serving, reports.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import dqn as dqn_mod
from . import evolution as evo_mod
from .evaluation import (RunRecord, align_by_arc_length, build_comparison_report,
                         log_from_dqn_rows, log_from_trace,
                         velocity_and_steering_errors)
from .network import flatten, unflatten
from .persist import (ConfigError, FormatError, load_checkpoint, read_config,
                      read_scenario, read_trajectory_csv, save_dqn_checkpoint,
                      save_evo_checkpoint, config_snapshot, write_json,
                      write_scenario, write_trajectory_csv)
from .rollout import control_stream_driver, run_driver_episode, run_policy_episode
from .scenarios import preset_by_name, preset_scenarios
from .sensing import SensorConfig
from .vehicle import VehicleParams
from .world import TickConfig, World, compile_world

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def resolve_scenario(ref: str, traffic_count=None):
    """A scenario reference is a preset name or a path to a scenario file."""
    if Path(ref).exists():
        sc = read_scenario(ref)
    else:
        try:
            sc = preset_by_name(ref)
        except KeyError:
            raise UsageError(
                f"unknown scenario {ref!r}; expected a preset "
                f"({', '.join(s.scenario_id for s in preset_scenarios())}) or a file")
    if traffic_count is not None:
        sc = dataclasses.replace(sc, traffic_count=traffic_count)
    return sc


def load_app_config(path):
    """Config file sections -> typed config objects with defaults filled in."""
    raw = read_config(path) if path else {}
    vehicle = VehicleParams(**raw.get("vehicle", {}))
    sensor_kwargs = dict(raw.get("sensor", {}))
    sensor = SensorConfig(**sensor_kwargs)
    dt = float(raw.get("simulation", {}).get("dt", 0.05))
    evo_kwargs = dict(raw.get("evolution", {}))
    for key in ("speed_bounds", "hidden_sizes"):
        if key in evo_kwargs:
            evo_kwargs[key] = tuple(evo_kwargs[key])
    dqn_kwargs = dict(raw.get("dqn", {}))
    if "hidden_sizes" in dqn_kwargs:
        dqn_kwargs["hidden_sizes"] = tuple(dqn_kwargs["hidden_sizes"])
    evaluation = {"episodes": 5, "align_step": 4.0}
    evaluation.update(raw.get("evaluation", {}))
    return vehicle, sensor, dt, evo_kwargs, dqn_kwargs, evaluation


EVO_HISTORY_HEADER = ("generation,best_scalar,best_distance,best_distance_ratio,"
                      "best_mean_speed,mean_scalar")
DQN_HISTORY_HEADER = ("episode,epsilon,ticks,total_reward,degenerate,"
                      "buffer_size,grad_steps,probe_delta")


def _evo_history_line(h) -> str:
    return (f"{h.generation},{float(h.best_scalar)!r},{float(h.best_distance)!r},"
            f"{float(h.best_distance_ratio)!r},{float(h.best_mean_speed)!r},"
            f"{float(h.mean_scalar)!r}")


def _dqn_history_line(h) -> str:
    return (f"{h.episode},{float(h.epsilon)!r},{h.ticks},{float(h.total_reward)!r},"
            f"{int(h.degenerate)},{h.buffer_size},{h.grad_steps},"
            f"{float(h.probe_delta)!r}")


def _write_history(path: Path, header: str, lines: list[str]) -> None:
    path.write_text("\n".join([header] + lines) + "\n", encoding="utf-8")


def cmd_train_evo(args) -> int:
    vehicle, sensor, dt, evo_kwargs, _, evaluation = load_app_config(args.config)
    if args.seed is not None:
        evo_kwargs["seed"] = args.seed
    if args.generations is not None:
        evo_kwargs["generations"] = args.generations
    config = evo_mod.EvolutionConfig(**evo_kwargs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    old_lines: list[str] = []
    resume_pop = resume_rng = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if ckpt.agent_id != "evo":
            raise FormatError(f"{args.resume}: not an evolution checkpoint")
        scenario = ckpt.scenario()
        config = ckpt.evo_config()
        resume_pop = ckpt.population
        resume_rng = ckpt.rng_state()
        if args.generations is not None:
            config = dataclasses.replace(config, generations=args.generations)
        hist_path = out / "history.csv"
        if hist_path.exists():
            old_lines = hist_path.read_text(encoding="utf-8").splitlines()[1:]
    else:
        scenario = resolve_scenario(args.scenario, args.traffic)

    run = evo_mod.evolve(scenario, config, params=vehicle, sensor=sensor,
                         tick=TickConfig(dt=dt, seed=config.seed),
                         resume_population=resume_pop,
                         resume_rng_state=resume_rng)

    lines = old_lines + [_evo_history_line(h) for h in run.history]
    _write_history(out / "history.csv", EVO_HISTORY_HEADER, lines)
    save_evo_checkpoint(out / "checkpoint.bin", run, config, scenario)
    write_json(config_snapshot(vehicle, sensor, dt, config, None, evaluation),
               out / "config.json")
    write_json({"agent": "evo", "scenario": scenario.scenario_id,
                "seed": config.seed, "training_time_s": run.wall_time_s,
                "episodes_to_best": run.generations_to_best,
                "generations": run.population.generation,
                "best_scalar": run.population.best().fitness.scalar,
                "best_distance_ratio": run.population.best().fitness.distance_ratio},
               out / "meta.json")
    best = run.population.best().fitness
    print(f"evo: {run.population.generation} generations, best scalar "
          f"{best.scalar:.4f}, distance ratio {best.distance_ratio:.3f}, "
          f"wall {run.wall_time_s:.1f}s -> {out}")
    return EXIT_OK


def cmd_train_dqn(args) -> int:
    vehicle, sensor, dt, _, dqn_kwargs, evaluation = load_app_config(args.config)
    if args.seed is not None:
        dqn_kwargs["seed"] = args.seed
    if args.episodes is not None:
        dqn_kwargs["max_episodes"] = args.episodes
    config = dqn_mod.DqnConfig(**dqn_kwargs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    old_lines: list[str] = []
    resume_run = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if ckpt.agent_id != "dqn":
            raise FormatError(f"{args.resume}: not a DQN checkpoint")
        scenario = ckpt.scenario()
        config = ckpt.dqn_config()
        if args.episodes is not None:
            config = dataclasses.replace(config, max_episodes=args.episodes)
        resume_run = dqn_mod.DqnRun(
            online=ckpt.online, target=ckpt.target, buffer=ckpt.buffer,
            history=[], wall_time_s=0.0,
            episodes_done=int(ckpt.meta["episodes_done"]),
            grad_steps=int(ckpt.meta["grad_steps"]),
            episodes_to_best=0, converged=False, rng_state=ckpt.rng_state(),
            probe_states=ckpt.probe_states, probe_prev=ckpt.probe_prev,
            convergence_streak=int(ckpt.meta["convergence_streak"]))
        hist_path = out / "history.csv"
        if hist_path.exists():
            old_lines = hist_path.read_text(encoding="utf-8").splitlines()[1:]
    else:
        scenario = resolve_scenario(args.scenario, args.traffic)

    run = dqn_mod.train(scenario, config, params=vehicle, sensor=sensor,
                        tick=TickConfig(dt=dt, seed=config.seed),
                        resume=resume_run, stop_after=args.stop_after)

    lines = old_lines + [_dqn_history_line(h) for h in run.history]
    _write_history(out / "history.csv", DQN_HISTORY_HEADER, lines)
    save_dqn_checkpoint(out / "checkpoint.bin", run, config, scenario)
    write_json(config_snapshot(vehicle, sensor, dt, None, config, evaluation),
               out / "config.json")
    rewards = [h.total_reward for h in run.history]
    write_json({"agent": "dqn", "scenario": scenario.scenario_id,
                "seed": config.seed, "training_time_s": run.wall_time_s,
                "episodes_to_best": run.episodes_to_best,
                "episodes": run.episodes_done, "converged": run.converged,
                "best_reward": max(rewards) if rewards else 0.0},
               out / "meta.json")
    print(f"dqn: {run.episodes_done} episodes"
          f"{' (converged)' if run.converged else ''}, best reward "
          f"{max(rewards) if rewards else 0.0:.2f}, wall {run.wall_time_s:.1f}s "
          f"-> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    vehicle, sensor, dt, _, _, evaluation = load_app_config(args.config)
    episodes = args.episodes if args.episodes is not None else evaluation["episodes"]
    ckpt = load_checkpoint(args.checkpoint)
    scenario = resolve_scenario(args.scenario, args.traffic) if args.scenario \
        else ckpt.scenario()
    reference = None
    if args.reference:
        reference = read_trajectory_csv(args.reference)
        if reference.scenario_id != scenario.scenario_id:
            raise FormatError(
                f"reference log is from {reference.scenario_id!r}, "
                f"but evaluating on {scenario.scenario_id!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    seed = args.seed if args.seed is not None else int(ckpt.meta["config"]["seed"])
    theta = np.ascontiguousarray(ckpt.policy_theta())
    if ckpt.agent_id == "evo":
        cfg = ckpt.evo_config()
        sizes = cfg.topology(sensor.ray_count).sizes_array()
        max_ticks = cfg.max_episode_ticks
    else:
        cfg = ckpt.dqn_config()
        sizes = cfg.topology(sensor.ray_count).sizes_array()
        max_ticks = cfg.max_episode_ticks

    logs = []
    for i in range(episodes):
        ep_seed = int(np.random.SeedSequence([seed, 777, i]).generate_state(1)[0])
        sc = dataclasses.replace(scenario, seed=ep_seed)
        spec = compile_world(sc, params=vehicle, sensor=sensor,
                             tick=TickConfig(dt=dt, seed=ep_seed))
        if ckpt.agent_id == "evo":
            trace = run_policy_episode(spec, theta, sizes, max_ticks, record=True)
            log = log_from_trace(trace, scenario.scenario_id, ep_seed, "evo", dt)
        else:
            world = World(spec, params=vehicle, sensor=sensor)
            net = unflatten(cfg.topology(sensor.ray_count), theta)
            result = dqn_mod.run_episode(world, dqn_mod.greedy_policy(net), cfg)
            log = log_from_dqn_rows(result.rows, scenario.scenario_id, ep_seed,
                                    "dqn", dt)
        path = out / f"episode_{i:03d}.csv"
        write_trajectory_csv(log, path)
        logs.append(log)

    metrics = {"agent": ckpt.agent_id, "scenario": scenario.scenario_id,
               "episodes": episodes,
               "mean_progress": float(np.mean([log.arc_length[-1] if len(log) else 0.0
                                               for log in logs]))}
    if reference is not None:
        per_ep = []
        for log in logs:
            pairs = align_by_arc_length(log, reference,
                                        step=evaluation["align_step"])
            m = velocity_and_steering_errors(pairs, dt=dt,
                                             max_speed=vehicle.max_speed)
            per_ep.append(m.as_dict())
        metrics["per_episode"] = per_ep
        metrics["velocity_error_pct"] = float(
            np.mean([m["velocity_error_pct"] for m in per_ep]))
        metrics["e_vf_mean"] = float(np.mean([m["e_vf_mean"] for m in per_ep]))
        metrics["e_delta_mean"] = float(np.mean([m["e_delta_mean"] for m in per_ep]))
    write_json(metrics, out / "metrics.json")
    msg = f"eval: {episodes} episodes of {ckpt.agent_id} on {scenario.scenario_id}"
    if "velocity_error_pct" in metrics:
        msg += f", velocity error {metrics['velocity_error_pct']:.3f}%"
    print(msg + f" -> {out}")
    return EXIT_OK


def replay_log(log, scenario, vehicle, sensor):
    """Re-simulate a log's control stream; rewards follow the log's agent kind."""
    from .dqn import compute_reward
    from .vehicle import ControlInput
    from .rollout import EpisodeTrace
    spec = compile_world(scenario, params=vehicle, sensor=sensor,
                         tick=TickConfig(dt=log.dt, seed=log.seed))
    world = World(spec, params=vehicle, sensor=sensor)
    rows = np.empty((len(log.action), 9), dtype=np.float64)
    ticks = 0
    v_sum = 0.0
    for code in log.action:
        ctl = ControlInput.from_code(code)
        res = world.step(ctl)
        if log.agent_id == "dqn":
            sensor_min = float(world.sense().normalized.min())
            reward = compute_reward(res.odometry_increment, res.state.v,
                                    sensor_min, vehicle, log.dt).rho
        else:
            reward = res.progress_delta
        rows[ticks] = (res.state.x, res.state.y, res.state.heading, res.state.v,
                       res.state.delta, int(ctl.steer), int(ctl.accel),
                       reward, res.progress)
        v_sum += res.state.v
        ticks += 1
        if res.terminal:
            break
    trace = EpisodeTrace(ticks=ticks, terminal_code=world.terminal_code,
                         progress=world.progress, v_sum=v_sum, rows=rows[:ticks])
    return log_from_trace(trace, log.scenario_id, log.seed, log.agent_id, log.dt)


def cmd_replay(args) -> int:
    log = read_trajectory_csv(args.log)
    scenario = resolve_scenario(args.scenario) if args.scenario else None
    if scenario is None:
        scenario = resolve_scenario(log.scenario_id)
    scenario = dataclasses.replace(scenario, seed=log.seed)
    vehicle, sensor, dt, _, _, _ = load_app_config(args.config)
    replayed = replay_log(log, scenario, vehicle, sensor)
    out = Path(args.out) if args.out else Path(args.log).with_suffix(".replay.csv")
    write_trajectory_csv(replayed, out)
    if args.check:
        original = Path(args.log).read_bytes()
        ours = Path(out).read_bytes()
        if original != ours:
            print("replay DIFFERS from the recorded log")
            return EXIT_RUNTIME
        print("replay matches the recorded log byte for byte")
    print(f"replay -> {out}")
    return EXIT_OK


def cmd_serve(args, auto_record: bool = False) -> int:
    from .server import serve_session
    scenario = resolve_scenario(args.scenario, args.traffic)
    vehicle, sensor, dt, _, _, _ = load_app_config(args.config)
    policy_theta = policy_sizes = None
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        policy_theta = np.ascontiguousarray(ckpt.policy_theta())
        cfg = ckpt.evo_config() if ckpt.agent_id == "evo" else ckpt.dqn_config()
        policy_sizes = cfg.topology(sensor.ray_count).sizes_array()
    serve_session(scenario, host=args.host, port=args.port,
                  params=vehicle, sensor=sensor,
                  tick=TickConfig(dt=dt, seed=scenario.seed),
                  record_dir=args.out, auto_record=auto_record or args.record,
                  realtime=not args.manual, policy_theta=policy_theta,
                  policy_sizes=policy_sizes)
    return EXIT_OK


def cmd_record(args) -> int:
    return cmd_serve(args, auto_record=True)


def cmd_report(args) -> int:
    records = []
    for run_dir in args.runs:
        run_dir = Path(run_dir)
        meta_path = run_dir / "meta.json"
        if not meta_path.exists():
            raise FormatError(f"{run_dir}: missing meta.json")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        vel = None
        metrics_path = run_dir / "metrics.json"
        if metrics_path.exists():
            metrics = json.loads(metrics_path.read_text(encoding="utf-8"))
            vel = metrics.get("velocity_error_pct")
        records.append(RunRecord(agent_id=meta["agent"],
                                 scenario_id=meta["scenario"],
                                 velocity_error_pct=vel,
                                 training_time_s=meta.get("training_time_s"),
                                 episodes_to_best=meta.get("episodes_to_best")))
    agents = sorted({r.agent_id for r in records})
    scenarios = args.scenarios.split(",") if args.scenarios else None
    report = build_comparison_report(records, agents=agents, scenarios=scenarios)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text("\n".join(report.to_csv_lines()) + "\n",
                                    encoding="utf-8")
    table = report.to_table()
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_scenario(args) -> int:
    sc = resolve_scenario(args.name, args.traffic)
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    write_scenario(sc, args.out)
    print(f"scenario {sc.scenario_id} -> {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="drivesim",
                     description="2D driving simulator with GA and DQN agents")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(out_default="runs/out"):
        # a fresh parent per subcommand: argparse shares parent actions, so a
        # set_defaults on one subparser would otherwise leak into the others
        c = argparse.ArgumentParser(add_help=False)
        c.add_argument("--seed", type=int, default=None,
                       help="override the configured master seed")
        c.add_argument("--config", default=None, help="config JSON file")
        c.add_argument("--out", default=out_default, help="output directory")
        c.add_argument("--traffic", type=int, default=None,
                       help="override the scenario's traffic car count")
        return [c]

    p = sub.add_parser("train-evo", parents=common(),
                       help="evolve network weights on a scenario")
    p.add_argument("scenario", nargs="?", default="straight_highway")
    p.add_argument("--generations", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train_evo)

    p = sub.add_parser("train-dqn", parents=common(),
                       help="train the Q-learning agent on a scenario")
    p.add_argument("scenario", nargs="?", default="straight_highway")
    p.add_argument("--episodes", type=int, default=None,
                   help="total episode budget (epsilon schedule horizon)")
    p.add_argument("--stop-after", type=int, default=None,
                   help="interrupt after this many episodes, leaving a "
                        "resumable checkpoint")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train_dqn)

    p = sub.add_parser("eval", parents=common(),
                       help="run seeded evaluation episodes from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--scenario", default=None)
    p.add_argument("--reference", default=None,
                   help="reference trajectory log for error metrics")
    p.add_argument("--episodes", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", parents=common(out_default=None),
                       help="re-simulate a recorded control stream offline")
    p.add_argument("log")
    p.add_argument("--scenario", default=None)
    p.add_argument("--check", action="store_true",
                   help="verify the replay matches the log byte for byte")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", parents=common(),
                       help="serve a live session over websockets")
    p.add_argument("scenario", nargs="?", default="straight_highway")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--checkpoint", default=None, help="agent that can drive")
    p.add_argument("--record", action="store_true",
                   help="record from the first tick")
    p.add_argument("--manual", action="store_true",
                   help="advance only on step commands (for scripted clients)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("record", parents=common(),
                       help="serve a session with recording enabled")
    p.add_argument("scenario", nargs="?", default="straight_highway")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--record", action="store_true")
    p.add_argument("--manual", action="store_true")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("report", parents=common(),
                       help="build the agent-vs-scenario comparison table")
    p.add_argument("runs", nargs="+", help="run output directories")
    p.add_argument("--scenarios", default=None,
                   help="comma-separated expected scenario list")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("scenario", parents=common(out_default="scenario.json"),
                       help="write a preset scenario to a file")
    p.add_argument("name")
    p.set_defaults(func=cmd_scenario)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ConfigError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT if isinstance(exc, ValueError) else EXIT_RUNTIME
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
