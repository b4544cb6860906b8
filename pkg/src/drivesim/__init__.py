"""drivesim: deterministic 2D driving simulation with ray sensing, a
neuroevolutionary agent, a DQN agent, and a trajectory evaluation harness."""

from .accel import NUMBA_ENABLED
from .vehicle import (AccelCmd, ControlInput, SteerCmd, VehicleParams,
                      VehicleState, apply_control, check_collision,
                      step_kinematics, DEFAULT_PARAMS)
from .sensing import (OccupancyGridFrame, SensorConfig, SensorReading,
                      cast_rays, min_reading, rasterize_occupancy_grid,
                      DEFAULT_SENSOR)
from .scenarios import (Scenario, TrackGeometry, TrafficCar, build_scenario,
                        generate_seamless, preset_scenarios, sample_traffic)
from .world import TickConfig, World, WorldSpec, compile_world, step_world
from .network import (Network, NetworkTopology, flatten, param_count, unflatten)
from .evolution import (EvolutionConfig, FitnessReport, Individual, Population,
                        crossover, evaluate_fitness, evolve, evolve_generation,
                        mutate, scalarize_fitness, tournament_select)
from .dqn import (ACTION_TABLE, DqnConfig, ReplayBuffer, RewardBreakdown,
                  compute_reward, decode_action, q_update, run_episode,
                  select_action, train)
from .evaluation import (ComparisonReport, ErrorMetrics, TrajectoryLog,
                         align_by_arc_length, build_comparison_report,
                         velocity_and_steering_errors)

__version__ = "0.1.0"
