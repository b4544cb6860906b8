"""Discrete-action Q-learning agent: reward policy, replay, training loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import Network, NetworkTopology
from .sensing import DEFAULT_SENSOR, SensorConfig, min_reading
from .scenarios import Scenario
from .vehicle import AccelCmd, ControlInput, DEFAULT_PARAMS, SteerCmd, VehicleParams
from .world import TickConfig, World, compile_world

# reward weights: distance, velocity, sensor terms (they sum to one)
W_DIST = 0.15
W_VEL = 0.15
W_SENSOR = 0.7

# episodes shorter than this many actions are degenerate and never replayed
MIN_EPISODE_LEN = 15

# the eight-entry decision table: (accel axis, steer axis)
ACTION_TABLE = (
    ControlInput(SteerCmd.NONE, AccelCmd.ACCELERATE),
    ControlInput(SteerCmd.NONE, AccelCmd.BRAKE),
    ControlInput(SteerCmd.LEFT, AccelCmd.COAST),
    ControlInput(SteerCmd.RIGHT, AccelCmd.COAST),
    ControlInput(SteerCmd.LEFT, AccelCmd.ACCELERATE),
    ControlInput(SteerCmd.RIGHT, AccelCmd.ACCELERATE),
    ControlInput(SteerCmd.LEFT, AccelCmd.BRAKE),
    ControlInput(SteerCmd.RIGHT, AccelCmd.BRAKE),
)
N_ACTIONS = len(ACTION_TABLE)


def decode_action(index: int) -> ControlInput:
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index {index} out of range [0, {N_ACTIONS})")
    return ACTION_TABLE[index]


@dataclass(frozen=True)
class RewardBreakdown:
    f_dist: float
    f_vel: float
    f_sensor: float

    @property
    def rho(self) -> float:
        return W_DIST * self.f_dist + W_VEL * self.f_vel + W_SENSOR * self.f_sensor


def compute_reward(odometry_increment: float, v: float, sensor_min: float,
                   params: VehicleParams, dt: float) -> RewardBreakdown:
    """Normalized per-tick reward from distance, speed and clearance terms.

    The distance term is the distance actually covered this tick over the
    maximum coverable distance; the sensor term is the minimum normalized
    ray reading of the state reached.
    """
    f_dist = odometry_increment / (params.max_speed * dt)
    f_vel = v / params.max_speed
    return RewardBreakdown(f_dist=min(max(f_dist, 0.0), 1.0),
                           f_vel=min(max(f_vel, 0.0), 1.0),
                           f_sensor=min(max(sensor_min, 0.0), 1.0))


@dataclass(frozen=True)
class DqnConfig:
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5          # share of episodes spent annealing
    learning_rate: float = 1e-3
    replay_capacity: int = 50_000
    batch_size: int = 64
    target_sync: int = 500             # gradient steps between target copies
    max_episodes: int = 1000
    max_episode_ticks: int = 500
    min_episode_len: int = MIN_EPISODE_LEN
    seed: int = 0
    hidden_sizes: tuple[int, ...] = (16, 16)
    convergence_threshold: float = 1e-3
    convergence_window: int = 50
    probe_size: int = 32
    traffic_per_episode: bool = True   # resample traffic per training episode

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        for e in (self.eps_start, self.eps_end):
            if not (0.0 <= e <= 1.0):
                raise ValueError("epsilon must lie in [0, 1]")
        if self.min_episode_len < 1:
            raise ValueError("min_episode_len must be positive")

    def topology(self, n_rays: int = DEFAULT_SENSOR.ray_count) -> NetworkTopology:
        return NetworkTopology((n_rays + 2,) + tuple(self.hidden_sizes) + (N_ACTIONS,))

    def epsilon(self, episode: int) -> float:
        if self.max_episodes <= 0:
            return self.eps_end
        horizon = max(1.0, self.eps_fraction * self.max_episodes)
        frac = min(1.0, episode / horizon)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


def select_action(q_values: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the action table; greedy ties go to lowest index."""
    if rng.random() < eps:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(q_values))


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions in flat numpy arrays."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim), dtype=np.float64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_states = np.zeros((capacity, obs_dim), dtype=np.float64)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def push(self, state, action, reward, next_state, terminal) -> None:
        i = self.pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = terminal
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(self.size, size=batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])


def q_update(batch, online: Network, target: Network, gamma: float,
             lr: float) -> Network:
    """One SGD step regressing Q(s, a) toward r + gamma * max_a' Q_target(s')."""
    states, actions, rewards, next_states, terminals = batch
    n = len(actions)
    q = online.forward_batch(states)
    q_next = target.forward_batch(next_states).max(axis=1)
    targets = rewards + gamma * q_next * (~terminals)
    out_grad = np.zeros_like(q)
    rows = np.arange(n)
    out_grad[rows, actions] = 2.0 * (q[rows, actions] - targets) / n
    w_grads, b_grads = online._backward_layers(states, out_grad)
    online.apply_gradient(w_grads, b_grads, -lr)
    return online


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class EpisodeResult:
    transitions: list
    total_reward: float
    ticks: int
    degenerate: bool
    collided: bool
    finished: bool
    rows: np.ndarray  # (ticks, 10): x,y,heading,v,delta,steer,accel,reward,progress,action


def run_episode(world: World, policy, config: DqnConfig,
                after_step=None) -> EpisodeResult:
    """One closed-loop episode; `policy` maps an observation to an action index.

    Episodes shorter than min_episode_len actions are flagged degenerate;
    the training loop drops their transitions instead of replaying them.
    """
    transitions = []
    total = 0.0
    rows = np.empty((config.max_episode_ticks, 10), dtype=np.float64)
    collided = finished = False
    t = 0
    for t in range(config.max_episode_ticks):
        obs = world.observe()
        action = int(policy(obs))
        res = world.step(decode_action(action))
        next_obs = world.observe()
        sensor_min = float(world.sense().normalized.min())
        r = compute_reward(res.odometry_increment, res.state.v, sensor_min,
                           world.params, world.spec.dt)
        terminal = res.collided or res.finished
        transitions.append(Transition(obs, action, r.rho, next_obs, terminal))
        total += r.rho
        rows[t] = (res.state.x, res.state.y, res.state.heading, res.state.v,
                   res.state.delta, int(res.control.steer), int(res.control.accel),
                   r.rho, res.progress, action)
        if after_step is not None:
            after_step()
        if terminal:
            collided = res.collided
            finished = res.finished
            break
    ticks = t + 1 if config.max_episode_ticks else 0
    return EpisodeResult(transitions=transitions, total_reward=total, ticks=ticks,
                         degenerate=ticks < config.min_episode_len,
                         collided=collided, finished=finished, rows=rows[:ticks])


@dataclass
class EpisodeStats:
    episode: int
    epsilon: float
    ticks: int
    total_reward: float
    degenerate: bool
    buffer_size: int
    grad_steps: int
    probe_delta: float


@dataclass
class DqnRun:
    online: Network
    target: Network
    buffer: ReplayBuffer
    history: list
    wall_time_s: float
    episodes_done: int
    grad_steps: int
    episodes_to_best: int
    converged: bool
    rng_state: dict
    probe_states: np.ndarray
    probe_prev: Optional[np.ndarray]
    convergence_streak: int


def make_probe_states(config: DqnConfig, n_rays: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Fixed observation set used to track Q-value movement across episodes."""
    probes = np.empty((config.probe_size, n_rays + 2), dtype=np.float64)
    probes[:, :n_rays] = rng.random((config.probe_size, n_rays))
    probes[:, n_rays] = rng.random(config.probe_size)
    probes[:, n_rays + 1] = rng.uniform(-1.0, 1.0, config.probe_size)
    return probes


def train(scenario: Scenario, config: DqnConfig,
          params: VehicleParams = DEFAULT_PARAMS,
          sensor: SensorConfig = DEFAULT_SENSOR,
          tick: TickConfig = TickConfig(),
          resume: Optional[DqnRun] = None,
          stop_after: Optional[int] = None,
          on_episode=None) -> DqnRun:
    """Train until max_episodes or until probe Q-values stop moving.

    Traffic is resampled per episode (seeded) so the policy does not overfit
    one layout. Transitions enter replay only when their episode ends and is
    not degenerate; gradient steps sample earlier episodes meanwhile.
    `stop_after` interrupts after that many episodes in this call without
    touching the epsilon schedule, leaving a checkpoint to resume from.
    """
    import dataclasses

    obs_dim = sensor.ray_count + 2
    start = time.perf_counter()
    if resume is not None:
        online, target, buffer = resume.online, resume.target, resume.buffer
        rng = np.random.default_rng(config.seed)
        rng.bit_generator.state = resume.rng_state
        history = list(resume.history)
        grad_steps = resume.grad_steps
        episode0 = resume.episodes_done
        probes = resume.probe_states
        probe_prev = resume.probe_prev
        streak = resume.convergence_streak
    else:
        rng = np.random.default_rng(config.seed)
        topo = config.topology(sensor.ray_count)
        online = Network.random(topo, rng)
        target = online.copy()
        buffer = ReplayBuffer(config.replay_capacity, obs_dim)
        history = []
        grad_steps = 0
        episode0 = 0
        probes = make_probe_states(config, sensor.ray_count, rng)
        probe_prev = online.forward_batch(probes)
        streak = 0

    converged = False
    episode = episode0
    until = config.max_episodes if stop_after is None \
        else min(config.max_episodes, episode0 + stop_after)
    while episode < until:
        if config.traffic_per_episode:
            ep_scenario = dataclasses.replace(scenario,
                                              seed=_episode_seed(config.seed, episode))
        else:
            ep_scenario = scenario
        world = World.from_scenario(ep_scenario, params=params, sensor=sensor,
                                    tick=tick)
        eps = config.epsilon(episode)

        def learn_step():
            nonlocal grad_steps
            if buffer.size >= config.batch_size:
                q_update(buffer.sample(config.batch_size, rng), online, target,
                         config.gamma, config.learning_rate)
                grad_steps += 1
                if grad_steps % config.target_sync == 0:
                    target.weights = [w.copy() for w in online.weights]
                    target.biases = [b.copy() for b in online.biases]

        result = run_episode(world, eps_greedy_policy(online, eps, rng), config,
                             after_step=learn_step)
        if not result.degenerate:
            for tr in result.transitions:
                buffer.push(tr.state, tr.action, tr.reward, tr.next_state, tr.terminal)

        probe_now = online.forward_batch(probes)
        probe_delta = float(np.max(np.abs(probe_now - probe_prev))) if probe_prev is not None else 0.0
        probe_prev = probe_now
        streak = streak + 1 if probe_delta < config.convergence_threshold else 0

        history.append(EpisodeStats(episode=episode, epsilon=eps, ticks=result.ticks,
                                    total_reward=result.total_reward,
                                    degenerate=result.degenerate,
                                    buffer_size=buffer.size, grad_steps=grad_steps,
                                    probe_delta=probe_delta))
        if on_episode:
            on_episode(history[-1])
        episode += 1
        if streak >= config.convergence_window:
            converged = True
            break

    wall = time.perf_counter() - start
    if history:
        best_reward = max(h.total_reward for h in history)
        eps_to_best = min(h.episode for h in history if h.total_reward >= best_reward)
    else:
        eps_to_best = 0
    return DqnRun(online=online, target=target, buffer=buffer, history=history,
                  wall_time_s=wall, episodes_done=episode, grad_steps=grad_steps,
                  episodes_to_best=eps_to_best, converged=converged,
                  rng_state=rng.bit_generator.state, probe_states=probes,
                  probe_prev=probe_prev, convergence_streak=streak)


def _episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, 101, episode]).generate_state(1)[0])


def greedy_policy(online: Network):
    def policy(obs):
        return int(np.argmax(online.forward(obs)))
    return policy


def eps_greedy_policy(online: Network, eps: float, rng: np.random.Generator):
    def policy(obs):
        return select_action(online.forward(obs), eps, rng)
    return policy


def random_policy(rng: np.random.Generator):
    def policy(obs):
        return int(rng.integers(N_ACTIONS))
    return policy


def evaluate_policy(policy, scenario: Scenario, episodes: int, base_seed: int,
                    config: DqnConfig,
                    params: VehicleParams = DEFAULT_PARAMS,
                    sensor: SensorConfig = DEFAULT_SENSOR,
                    tick: TickConfig = TickConfig()):
    """Mean per-episode total reward over seeded evaluation worlds."""
    import dataclasses
    totals = []
    results = []
    for i in range(episodes):
        sc = dataclasses.replace(scenario, seed=_episode_seed(base_seed, 10_000 + i))
        world = World.from_scenario(sc, params=params, sensor=sensor, tick=tick)
        result = run_episode(world, policy, config)
        totals.append(result.total_reward)
        results.append(result)
    return float(np.mean(totals)), results
