"""Decentralized 3-D collision avoidance simulation.

Agents sense each other through noisy FOV-limited pinhole cameras, track
neighbors with per-agent EKFs, and filter their preferred velocities
through a reciprocal velocity-obstacle solver. The engine is fully
deterministic for a given (scenario, seed).

The usual entry points:

    run_scenario(head_on_scenario(seed=3))      one run -> RunLog
    run_batch(scenario, seeds=range(100), ...)  seeded ensembles + CSV
    classify(log)                               outcome labels, clearance
    serve(steering_scenario())                  live WebSocket bridge
"""

from .agents import (FIRST_ORDER, INSTANTANEOUS, AgentState, Dynamics,
                     heading_from_yaw, propagate_velocity, step)
from .analysis import (BOTH_NONCOOP, DANCE, ONE_NONCOOP, SMOOTH,
                       RunClassification, binomial_ci, classify,
                       detect_dance, detect_dance_events, fit_convergence,
                       fit_rate, min_clearance, nondecreasing_within_ci,
                       summary_row, sweep_summary, write_summary_csv,
                       write_sweep_csv)
from .batch import read_log, run_batch
from .bridge import LiveSim, build_app, serve
from .engine import (AgentSpec, ConstantVel, Engine, External, HeadOn,
                     RunLog, Scenario, ScenarioError, Stationary, Waypoint,
                     canonical_json, crossing_scenario, frozen_vo_run,
                     head_on_scenario, load_scenario,
                     noncooperative_scenario, run_scenario,
                     scenario_from_dict, scenario_hash, scenario_to_dict,
                     steering_scenario)
from .estimation import (Belief, FilterConfig, Track, back_project,
                         manage_tracks, measurement_model,
                         own_velocity_update, predict, update)
from .linalg import Mat3, Vec3, make_rng, normalize, vec3
from .sensing import ZERO_NOISE, CameraModel, Measurement, NoiseModel, measure
from .solver import (OrcaPlane, SolverConfig, apply_head_on_bias,
                     build_plane, max_violation, solve, solve_oracle,
                     unscale_plane)
from .vo import (AgentShape, AlreadyColliding, AvoidanceResult,
                 VelocityObstacle, boundary_distance, compute_avoidance,
                 emergency_avoidance, in_obstacle_analytic,
                 scale_to_sphere_space, scaling_matrix, vo_membership_oracle)

__all__ = [
    "FIRST_ORDER", "INSTANTANEOUS", "AgentState", "Dynamics",
    "heading_from_yaw", "propagate_velocity", "step",
    "BOTH_NONCOOP", "DANCE", "ONE_NONCOOP", "SMOOTH", "RunClassification",
    "binomial_ci", "classify", "detect_dance", "detect_dance_events",
    "fit_convergence", "fit_rate", "min_clearance",
    "nondecreasing_within_ci", "summary_row", "sweep_summary",
    "write_summary_csv", "write_sweep_csv",
    "read_log", "run_batch",
    "LiveSim", "build_app", "serve",
    "AgentSpec", "ConstantVel", "Engine", "External", "HeadOn", "RunLog",
    "Scenario", "ScenarioError", "Stationary", "Waypoint", "canonical_json",
    "crossing_scenario", "frozen_vo_run", "head_on_scenario",
    "load_scenario", "noncooperative_scenario", "run_scenario",
    "scenario_from_dict", "scenario_hash", "scenario_to_dict",
    "steering_scenario",
    "Belief", "FilterConfig", "Track", "back_project", "manage_tracks",
    "measurement_model", "own_velocity_update", "predict", "update",
    "Mat3", "Vec3", "make_rng", "normalize", "vec3",
    "ZERO_NOISE", "CameraModel", "Measurement", "NoiseModel", "measure",
    "OrcaPlane", "SolverConfig", "apply_head_on_bias", "build_plane",
    "max_violation", "solve", "solve_oracle", "unscale_plane",
    "AgentShape", "AlreadyColliding", "AvoidanceResult",
    "VelocityObstacle", "boundary_distance", "compute_avoidance",
    "emergency_avoidance", "in_obstacle_analytic", "scale_to_sphere_space",
    "scaling_matrix", "vo_membership_oracle",
]
