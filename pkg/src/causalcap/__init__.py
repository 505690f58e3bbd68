"""Subgoal discovery from causal capacity, with a predictor-gated shaped-reward RL harness."""

from .capacity import capacity_clustered, capacity_map, capacity_mc, check_propositions
from .config import PipelineConfig, load_config, parse_config
from .kernels import BACKEND
from .mdpcore import GridEnv, Maze, PointEnv, TabularMDP, build_tabular, parse_maze, random_tabular
from .pipeline import run_all
from .sampler import TrajectorySet, explore, rollout_random
from .shaping import build_potentials, shaped_reward, verify_invariance
from .subgoals import build_subgoal_graph, plan_next_subgoal, select_subgoals

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "GridEnv",
    "Maze",
    "PipelineConfig",
    "PointEnv",
    "TabularMDP",
    "TrajectorySet",
    "build_potentials",
    "build_subgoal_graph",
    "build_tabular",
    "capacity_clustered",
    "capacity_map",
    "capacity_mc",
    "check_propositions",
    "explore",
    "load_config",
    "parse_config",
    "parse_maze",
    "plan_next_subgoal",
    "random_tabular",
    "rollout_random",
    "run_all",
    "select_subgoals",
    "shaped_reward",
    "verify_invariance",
]
