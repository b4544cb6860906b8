"""Population-based evolution of policy-network weights.

Selection is tournament-without-replacement with verbatim elite carry-over;
breeding is uniform crossover plus per-gene Gaussian mutation. Fitness has
two elements, distance made good along the track and interval-bounded mean
speed, collapsed to a scalar by a weighted sum.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .network import Network, NetworkTopology, param_count
from .sensing import DEFAULT_SENSOR, SensorConfig
from .scenarios import Scenario
from .vehicle import DEFAULT_PARAMS, VehicleParams
from .world import TickConfig, WorldSpec, compile_world
from .rollout import run_policy_episode


@dataclass(frozen=True)
class EvolutionConfig:
    pop_size: int = 50
    tournament_size: int = 3
    elite_count: int = 2
    mutation_sigma: float = 0.1
    mutation_rate: float = 0.05
    crossover_rate: float = 0.7
    max_episode_ticks: int = 800
    generations: int = 50
    seed: int = 0
    speed_bounds: tuple[float, float] = (0.0, 30.0)
    fitness_weight: float = 0.5           # weight of the distance element
    hidden_sizes: tuple[int, ...] = (16, 16)
    stop_distance_ratio: Optional[float] = None

    def __post_init__(self):
        if not (1 <= self.elite_count < self.pop_size):
            raise ValueError("need 1 <= elite_count < pop_size")
        if not (2 <= self.tournament_size <= self.pop_size):
            raise ValueError("need 2 <= tournament_size <= pop_size")
        for r in (self.mutation_rate, self.crossover_rate):
            if not (0.0 <= r <= 1.0):
                raise ValueError("rates must lie in [0, 1]")
        if self.mutation_sigma <= 0.0:
            raise ValueError("mutation_sigma must be positive")
        if not (self.speed_bounds[0] < self.speed_bounds[1]):
            raise ValueError("speed bounds must satisfy v_lo < v_hi")
        if not (0.0 <= self.fitness_weight <= 1.0):
            raise ValueError("fitness_weight must lie in [0, 1]")

    def topology(self, n_rays: int = DEFAULT_SENSOR.ray_count) -> NetworkTopology:
        return NetworkTopology((n_rays + 2,) + tuple(self.hidden_sizes) + (2,))


@dataclass
class FitnessReport:
    distance: float
    mean_speed: float
    scalar: float
    distance_ratio: float
    ticks: int
    terminal_code: int


@dataclass
class Individual:
    genome: np.ndarray
    fitness: Optional[FitnessReport] = None


@dataclass
class Population:
    individuals: list
    generation: int = 0

    def best_index(self) -> int:
        scalars = [ind.fitness.scalar for ind in self.individuals]
        return int(np.argmax(scalars))

    def best(self) -> Individual:
        return self.individuals[self.best_index()]


def scalarize_fitness(distance_ratio: float, mean_speed: float,
                      config: EvolutionConfig) -> float:
    """Weighted sum of the clamped distance ratio and the speed interval term."""
    v_lo, v_hi = config.speed_bounds
    d = min(max(distance_ratio, 0.0), 1.0)
    s = (min(max(mean_speed, v_lo), v_hi) - v_lo) / (v_hi - v_lo)
    a = config.fitness_weight
    return a * d + (1.0 - a) * s


def evaluate_fitness(genome: np.ndarray, spec: WorldSpec,
                     config: EvolutionConfig) -> FitnessReport:
    """Roll one closed-loop episode and score it.

    Distance is arc length made good along the centerline (capped at the
    course length, credited up to the tick of a NaN output or collision);
    mean speed is the per-tick average clamped into the configured interval.
    """
    sizes = config.topology(spec.n_rays).sizes_array()
    trace = run_policy_episode(spec, genome, sizes, config.max_episode_ticks)
    distance = min(trace.progress, spec.finish_arc)
    ratio = distance / spec.finish_arc if spec.finish_arc > 0 else 0.0
    v_lo, v_hi = config.speed_bounds
    mean_speed = min(max(trace.mean_speed, v_lo), v_hi)
    return FitnessReport(distance=distance, mean_speed=mean_speed,
                         scalar=scalarize_fitness(ratio, mean_speed, config),
                         distance_ratio=min(ratio, 1.0), ticks=trace.ticks,
                         terminal_code=trace.terminal_code)


def tournament_select(population: Population, t: int,
                      rng: np.random.Generator) -> Individual:
    """Best-of-t selection, sampled without replacement, ties to lower index."""
    k = len(population.individuals)
    if t > k:
        raise ValueError("tournament size exceeds population size")
    picks = rng.choice(k, size=t, replace=False)
    best = None
    for i in sorted(int(p) for p in picks):
        ind = population.individuals[i]
        if best is None or ind.fitness.scalar > best.fitness.scalar:
            best = ind
    return best


def crossover(parent_a: np.ndarray, parent_b: np.ndarray,
              rng: np.random.Generator, crossover_rate: float = 0.7) -> np.ndarray:
    """Uniform crossover with probability crossover_rate, else a copy of a."""
    if parent_a.shape != parent_b.shape:
        raise ValueError("parent genomes differ in length")
    child = parent_a.copy()
    if rng.random() < crossover_rate:
        take_b = rng.random(parent_a.shape[0]) < 0.5
        child[take_b] = parent_b[take_b]
    return child


def mutate(genome: np.ndarray, sigma: float, rate: float,
           rng: np.random.Generator) -> np.ndarray:
    """Adds Gaussian(0, sigma^2) noise independently per gene with prob rate."""
    out = genome.copy()
    mask = rng.random(genome.shape[0]) < rate
    if mask.any():
        out[mask] += rng.normal(0.0, sigma, int(mask.sum()))
    return out


def evolve_generation(population: Population, config: EvolutionConfig,
                      spec: WorldSpec, rng: np.random.Generator) -> Population:
    """Elites carry over verbatim (fitness included); the rest are bred."""
    order = sorted(range(len(population.individuals)),
                   key=lambda i: (-population.individuals[i].fitness.scalar, i))
    next_inds = []
    for i in order[:config.elite_count]:
        src = population.individuals[i]
        next_inds.append(Individual(genome=src.genome.copy(), fitness=src.fitness))
    while len(next_inds) < config.pop_size:
        pa = tournament_select(population, config.tournament_size, rng)
        pb = tournament_select(population, config.tournament_size, rng)
        child = crossover(pa.genome, pb.genome, rng, config.crossover_rate)
        child = mutate(child, config.mutation_sigma, config.mutation_rate, rng)
        next_inds.append(Individual(genome=child,
                                    fitness=evaluate_fitness(child, spec, config)))
    return Population(individuals=next_inds, generation=population.generation + 1)


def elite_policy_action(population: Population, observation: np.ndarray,
                        config: EvolutionConfig, n_rays: int = DEFAULT_SENSOR.ray_count):
    """Control command of the current best network for one observation."""
    from .vehicle import AccelCmd, ControlInput, SteerCmd
    sizes = config.topology(n_rays).sizes_array()
    theta = np.ascontiguousarray(population.best().genome, dtype=np.float64)
    out = kernels.mlp_forward_kernel(theta, sizes,
                                     np.asarray(observation, dtype=np.float64))
    steer, accel = kernels.decode_continuous(out[0], out[1], kernels.DEAD_ZONE)
    return ControlInput(SteerCmd(steer), AccelCmd(accel))


@dataclass
class GenerationStats:
    generation: int
    best_scalar: float
    best_distance: float
    best_distance_ratio: float
    best_mean_speed: float
    mean_scalar: float

    @staticmethod
    def from_population(pop: Population) -> "GenerationStats":
        best = pop.best().fitness
        mean = float(np.mean([ind.fitness.scalar for ind in pop.individuals]))
        return GenerationStats(generation=pop.generation, best_scalar=best.scalar,
                               best_distance=best.distance,
                               best_distance_ratio=best.distance_ratio,
                               best_mean_speed=best.mean_speed, mean_scalar=mean)


@dataclass
class EvolutionRun:
    population: Population
    history: list
    wall_time_s: float
    generations_to_best: int
    rng_state: dict
    spec: WorldSpec


def init_population(config: EvolutionConfig, spec: WorldSpec,
                    rng: np.random.Generator) -> Population:
    topo = config.topology(spec.n_rays)
    inds = []
    for _ in range(config.pop_size):
        genome = _random_genome(topo, rng)
        inds.append(Individual(genome=genome,
                               fitness=evaluate_fitness(genome, spec, config)))
    return Population(individuals=inds, generation=0)


def _random_genome(topology: NetworkTopology, rng: np.random.Generator) -> np.ndarray:
    from .network import flatten
    return flatten(Network.random(topology, rng))


def evolve(scenario: Scenario, config: EvolutionConfig,
           params: VehicleParams = DEFAULT_PARAMS,
           sensor: SensorConfig = DEFAULT_SENSOR,
           tick: TickConfig = TickConfig(),
           resume_population: Optional[Population] = None,
           resume_rng_state: Optional[dict] = None,
           history: Optional[list] = None,
           on_generation=None) -> EvolutionRun:
    """Run (or resume) the evolution loop on one scenario.

    Evaluation is a pure function of (genome, compiled scenario, config), so
    the trace is fully determined by the seed; evaluations could be run in
    any order or in parallel without changing results.
    """
    spec = compile_world(scenario, params=params, sensor=sensor, tick=tick)
    rng = np.random.default_rng(config.seed)
    if resume_rng_state is not None:
        rng.bit_generator.state = resume_rng_state
    start = time.perf_counter()
    history = list(history) if history else []

    if resume_population is not None:
        pop = resume_population
    else:
        pop = init_population(config, spec, rng)
        history.append(GenerationStats.from_population(pop))
        if on_generation:
            on_generation(pop, history[-1])

    while pop.generation < config.generations:
        if (config.stop_distance_ratio is not None
                and pop.best().fitness.distance_ratio >= config.stop_distance_ratio):
            break
        pop = evolve_generation(pop, config, spec, rng)
        history.append(GenerationStats.from_population(pop))
        if on_generation:
            on_generation(pop, history[-1])

    wall = time.perf_counter() - start
    best_scalar = max(h.best_scalar for h in history)
    gens_to_best = min(h.generation for h in history if h.best_scalar >= best_scalar)
    return EvolutionRun(population=pop, history=history, wall_time_s=wall,
                        generations_to_best=gens_to_best,
                        rng_state=rng.bit_generator.state, spec=spec)
