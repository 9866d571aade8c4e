"""Benchmark MDP families: the key-and-door maze and navigation with traffic jams."""

from .catalog import (
    CURRICULA,
    CURRICULUM_DEPENDENCIES,
    Environment,
    build_curriculum,
    build_environment,
    build_mazebase,
    build_traffic,
    curriculum_closure,
    curriculum_ids,
    describe_curriculum,
    describe_environment,
    environment_ids,
    prerequisites,
)
from .geometry import (
    BASE_MAZE,
    DENSE_TRAFFIC,
    DOUBLE_PRIMED_MAZE,
    PRIMED_MAZE,
    SPARSE_TRAFFIC,
    MazeGeometry,
    TrafficGeometry,
    variant_geometry,
)
from .mazebase import MazeParams
from .traffic import TrafficParams

__all__ = [
    "BASE_MAZE", "CURRICULA", "CURRICULUM_DEPENDENCIES", "DENSE_TRAFFIC", "DOUBLE_PRIMED_MAZE", "Environment", "MazeGeometry", "MazeParams",
    "PRIMED_MAZE", "SPARSE_TRAFFIC", "TrafficGeometry", "TrafficParams", "build_curriculum", "build_environment",
    "build_mazebase", "build_traffic", "curriculum_closure", "curriculum_ids", "describe_curriculum", "describe_environment",
    "environment_ids", "prerequisites", "variant_geometry",
]
