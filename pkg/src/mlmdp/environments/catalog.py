"""Built-in environments and curricula addressable by string ids.

Ids look like ``mazebase/2_2@base``, ``traffic/kappa_3`` and ``traffic/basic_1``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from ..curriculum import Curriculum, CurriculumItem, Hint
from ..errors import ConfigError, InvalidGeometry, UnknownSubject
from ..mdp import TabularMdp
from . import mazebase, traffic
from .geometry import MAZE_VARIANTS, MazeGeometry, TrafficGeometry, variant_geometry
from .mazebase import MazeParams, Puzzle
from .traffic import TrafficParams

MAZE_KINDS = ("1_1", "2_1", "2_2", "3_1")
TRAFFIC_KINDS = tuple(f"basic_{n}" for n in (1, 2, 3)) + tuple(f"kappa_{n}" for n in range(1, 8))
MAZE_DIFFICULTY = {"1_1": 1, "2_1": 2, "2_2": 2, "3_1": 3}


@dataclass(eq=False)
class Environment:
    env_id: str
    mdp: TabularMdp
    hint: Hint
    geometry: MazeGeometry | TrafficGeometry
    params: MazeParams | TrafficParams
    puzzle: Puzzle | None = None

    @property
    def difficulty(self) -> int:
        return self.hint.difficulty


def environment_ids() -> list[str]:
    maze = [f"mazebase/{kind}@{variant}" for kind in MAZE_KINDS for variant in MAZE_VARIANTS]
    return maze + [f"traffic/{kind}" for kind in TRAFFIC_KINDS]


def parse_id(env_id: str) -> tuple[str, str, str | None]:
    """Split an id into (family, kind, variant)."""
    family, _, rest = env_id.partition("/")
    kind, _, variant = rest.partition("@")
    if family == "mazebase" and kind in MAZE_KINDS:
        variant = variant or "base"
        variant_geometry(variant)
        return family, kind, variant.replace("_", "-")
    if family == "traffic" and kind in TRAFFIC_KINDS and not variant:
        return family, kind, None
    raise UnknownSubject(f"no environment {env_id!r}")


def maze_geometry_from_json(doc: Mapping[str, Any]) -> MazeGeometry:
    try:
        return MazeGeometry(doors=tuple(tuple(d) for d in doc["doors"]), keys=tuple(tuple(k) for k in doc["keys"]),
                            goal=tuple(doc["goal"]), variant=doc.get("variant", "custom"))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidGeometry(f"malformed maze geometry: {exc}") from None


def traffic_geometry_from_json(doc: Mapping[str, Any]) -> TrafficGeometry:
    try:
        return TrafficGeometry(jam_rows=tuple(doc["jam_rows"]), jam_columns=tuple(doc["jam_columns"]),
                               variant=doc.get("variant", "sparse"))
    except (KeyError, TypeError) as exc:
        raise InvalidGeometry(f"malformed traffic geometry: {exc}") from None


def _override(params, overrides: Mapping[str, Any] | None):
    if not overrides:
        return params
    unknown = set(overrides) - {f.name for f in dataclasses.fields(params)}
    if unknown:
        raise ConfigError(f"unknown parameters {sorted(unknown)}")
    return dataclasses.replace(params, **overrides)


def build_mazebase(which: str, geometry: MazeGeometry | None = None, params: MazeParams | None = None,
                   difficulty: int | None = None, extract: bool = True) -> Environment:
    """Maze MDP and hint; ``difficulty=2`` on ``3_1`` hints navigation skills only."""
    geometry = geometry or variant_geometry("base")
    params = params or MazeParams()
    env_id = f"mazebase/{which}@{geometry.variant}"
    if which == "1_1":
        return Environment(env_id, mazebase.build_dense_navigation(), mazebase.navigation_dense_hint(),
                           traffic.DENSE_TRAFFIC, traffic.DENSE_PARAMS)
    if which == "2_1":
        return Environment(env_id, mazebase.build_block_navigation(geometry, params),
                           mazebase.block_navigation_hint(geometry, params), geometry, params)
    if which == "2_2":
        mdp, puzzle = mazebase.build_key_door(geometry, params)
        return Environment(env_id, mdp, mazebase.key_door_hint(puzzle, params, extract), geometry, params, puzzle)
    if which == "3_1":
        mdp, puzzle = mazebase.build_full_puzzle(geometry, params)
        hint = mazebase.full_puzzle_hint(puzzle, params, difficulty or 3)
        return Environment(env_id, mdp, hint, geometry, params, puzzle)
    raise UnknownSubject(f"no maze MDP {which!r}")


def build_traffic(which: str, geometry: TrafficGeometry | None = None, params: TrafficParams | None = None,
                  warm_start: bool | None = None, extract: bool | None = None) -> Environment:
    """Traffic MDP and hint.

    By default the first transport MDP extracts the transport skill and the
    dense transport MDP starts from it.
    """
    kind, _, number = which.partition("_")
    try:
        n = int(number)
    except ValueError:
        raise UnknownSubject(f"no traffic MDP {which!r}") from None
    if kind == "basic":
        default_geometry, default_params = traffic.basic_setup(n)
        geometry, params = geometry or default_geometry, params or default_params
        return Environment(f"traffic/{which}", traffic.build_navigation(geometry, params), traffic.navigation_hint(n),
                           geometry, params)
    if kind == "kappa":
        default_geometry, default_params = traffic.kappa_setup(n)
        geometry, params = geometry or default_geometry, params or default_params
        extract = (n == 1) if extract is None else extract
        warm_start = (geometry.variant == "dense") if warm_start is None else warm_start
        hint = traffic.transport_hint(n, geometry, params, extract_transport=extract, warm_start=warm_start)
        return Environment(f"traffic/{which}", traffic.build_transport(geometry, params), hint, geometry, params)
    raise UnknownSubject(f"no traffic MDP {which!r}")


def build_environment(env_id: str, geometry: Mapping[str, Any] | None = None,
                      params: Mapping[str, Any] | None = None, **options) -> Environment:
    """Build by id; ``geometry`` and ``params`` are JSON-style overrides."""
    family, kind, variant = parse_id(env_id)
    if family == "mazebase":
        base_geometry = maze_geometry_from_json(geometry) if geometry else variant_geometry(variant)
        return build_mazebase(kind, base_geometry, _override(MazeParams(), params), **options)
    if kind.startswith("basic"):
        defaults = traffic.basic_setup(int(kind.split("_")[1]))
    else:
        defaults = traffic.kappa_setup(int(kind.split("_")[1]))
    base_geometry = traffic_geometry_from_json(geometry) if geometry else defaults[0]
    return build_traffic(kind, base_geometry, _override(defaults[1], params), **options)


def _plain(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def describe_environment(env_id: str) -> dict:
    """Static parameters of an environment, without building it."""
    family, kind, variant = parse_id(env_id)
    if family == "mazebase":
        geometry = variant_geometry(variant)
        if kind == "1_1":
            geometry_doc = {"jam_rows": list(traffic.DENSE_TRAFFIC.jam_rows),
                            "jam_columns": list(traffic.DENSE_TRAFFIC.jam_columns)}
            params = dataclasses.asdict(traffic.DENSE_PARAMS)
        else:
            geometry_doc = {"doors": _plain(geometry.doors), "keys": _plain(geometry.keys),
                            "goal": _plain(geometry.goal), "variant": geometry.variant}
            params = dataclasses.asdict(MazeParams())
        return {"id": env_id, "family": family, "difficulty": MAZE_DIFFICULTY[kind], "geometry": geometry_doc,
                "params": {k: _plain(v) for k, v in params.items()}}
    n = int(kind.split("_")[1])
    geometry, params = (traffic.basic_setup if kind.startswith("basic") else traffic.kappa_setup)(n)
    return {"id": env_id, "family": family, "difficulty": 1 if kind.startswith("basic") else 2,
            "geometry": {"jam_rows": list(geometry.jam_rows), "jam_columns": list(geometry.jam_columns),
                         "variant": geometry.variant},
            "params": {k: _plain(v) for k, v in dataclasses.asdict(params).items()}}


# Curricula: (difficulty, index, environment id)
CURRICULA: dict[str, tuple[tuple[int, int, str], ...]] = {
    "mazebase": ((1, 1, "mazebase/1_1@base"), (2, 1, "mazebase/2_1@base"), (2, 2, "mazebase/2_2@base"),
                 (3, 1, "mazebase/3_1@base")),
    "mazebase-primed": ((2, 3, "mazebase/2_1@primed"), (3, 2, "mazebase/3_1@primed")),
    "mazebase-double-primed": ((3, 3, "mazebase/3_1@double-primed"),),
    "traffic": ((1, 1, "traffic/basic_1"), (1, 2, "traffic/basic_2"))
               + tuple((2, n, f"traffic/kappa_{n}") for n in range(1, 7)),
    "traffic-dense": ((1, 3, "traffic/basic_3"), (2, 7, "traffic/kappa_7")),
}


# Curricula whose skills a curriculum reuses; they must be learned first with the same registry.
CURRICULUM_DEPENDENCIES: dict[str, tuple[str, ...]] = {
    "mazebase-primed": ("mazebase",),
    "mazebase-double-primed": ("mazebase",),
    "traffic-dense": ("traffic",),
}


def curriculum_ids() -> list[str]:
    return list(CURRICULA)


def curriculum_closure(names: Sequence[str]) -> list[str]:
    """``names`` preceded by their dependencies, each curriculum once, dependencies first."""
    ordered: list[str] = []

    def visit(name: str) -> None:
        if name not in CURRICULA:
            raise UnknownSubject(f"no curriculum {name!r}")
        for dependency in CURRICULUM_DEPENDENCIES.get(name, ()):
            visit(dependency)
        if name not in ordered:
            ordered.append(name)

    for name in names:
        visit(name)
    return ordered


def prerequisites(env_id: str) -> tuple[list[str], list[str]]:
    """(curricula to learn in full, earlier items of the environment's own curriculum) before ``env_id``."""
    family, kind, variant = parse_id(env_id)
    canonical = f"{family}/{kind}@{variant}" if family == "mazebase" else f"{family}/{kind}"
    for name, entries in CURRICULA.items():
        ids = [e for _, _, e in entries]
        if canonical in ids:
            return curriculum_closure(CURRICULUM_DEPENDENCIES.get(name, ())), ids[: ids.index(canonical)]
    raise UnknownSubject(f"environment {env_id!r} belongs to no curriculum")


def build_curriculum(name: str) -> Curriculum:
    if name not in CURRICULA:
        raise UnknownSubject(f"no curriculum {name!r}")
    items = []
    for difficulty, index, env_id in CURRICULA[name]:
        env = build_environment(env_id)
        items.append(CurriculumItem(difficulty, index, env.mdp, env.hint, env_id))
    return Curriculum(tuple(items))


def describe_curriculum(name: str) -> dict:
    if name not in CURRICULA:
        raise UnknownSubject(f"no curriculum {name!r}")
    return {"id": name, "items": [{"difficulty": d, "index": i, "environment": e} for d, i, e in CURRICULA[name]]}
