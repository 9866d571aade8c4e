"""Navigation with traffic jams: a destination-reaching grid with a choice of vehicle.

States are (current cell, destination cell) pairs over the whole grid.  The
navigation family has one direction factor; the transport family adds a
means-of-transport factor whose choice changes rewards but not dynamics.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from ..curriculum import DecompSpec, GeneratorSpec, Hint
from ..errors import ConfigError
from ..mdp import END, NULL, ActionSet, StateSpace, TabularMdp, TransitionTable, build_mdp
from ..transfer import Embedding, EmbeddingGenerator
from .geometry import DENSE_TRAFFIC, DIRECTION_NAMES, SPARSE_TRAFFIC, Cell, TrafficGeometry, cell_label, shift

MEANS = ("mc", "car")
PAUSE, FREE = "pause", "free"
DIR_PARAMETERS = (PAUSE, FREE)


@dataclass(frozen=True)
class TrafficParams:
    success: float = 0.9
    dest_reward: float = 1e4
    jam_reward: float = -1e3
    step_reward: float = -10.0
    mc_speed: float = 1.0
    car_speed: float = 0.6
    inverse_kappa: float = 2.4
    discount: float = 0.999
    end_penalty: float = -10.0


SPARSE_INVERSE_KAPPAS = (2.4, 2.8, 3.2, 3.6, 4.0, 4.4)
DENSE_PARAMS = TrafficParams(car_speed=1 / 1.05, inverse_kappa=1.1)
NAVIGATION_INVERSE_KAPPAS = {1: 2.5, 2: 4.0}


def kappa_setup(n: int) -> tuple[TrafficGeometry, TrafficParams]:
    """Geometry and parameters of the n-th transport MDP; n = 7 is the dense city."""
    if 1 <= n <= len(SPARSE_INVERSE_KAPPAS):
        return SPARSE_TRAFFIC, TrafficParams(inverse_kappa=SPARSE_INVERSE_KAPPAS[n - 1])
    if n == len(SPARSE_INVERSE_KAPPAS) + 1:
        return DENSE_TRAFFIC, DENSE_PARAMS
    raise ConfigError(f"no transport MDP number {n}")


def basic_setup(n: int) -> tuple[TrafficGeometry, TrafficParams]:
    """Geometry and parameters of the n-th navigation MDP; n = 3 is the dense city."""
    if n in NAVIGATION_INVERSE_KAPPAS:
        return SPARSE_TRAFFIC, TrafficParams(inverse_kappa=NAVIGATION_INVERSE_KAPPAS[n])
    if n == 3:
        return DENSE_TRAFFIC, DENSE_PARAMS
    raise ConfigError(f"no navigation MDP number {n}")


def navigation_skill_name(n: int) -> str:
    return "nav_dense" if n == 3 else f"nav_{n}"


class PairGrid:
    """Index bookkeeping for (current, destination) states over a set of cells."""

    def __init__(self, cells: tuple[Cell, ...]):
        self.cells = cells
        self.cell_index = {c: i for i, c in enumerate(cells)}
        n = len(cells)
        self.n_cells = n
        self.current = np.repeat(np.arange(n), n)
        self.destination = np.tile(np.arange(n), n)

    @property
    def n_states(self) -> int:
        return self.n_cells ** 2

    def state(self, current: Cell, destination: Cell) -> int:
        return self.cell_index[current] * self.n_cells + self.cell_index[destination]

    def pair(self, state: int) -> tuple[Cell, Cell]:
        return self.cells[state // self.n_cells], self.cells[state % self.n_cells]

    def space(self) -> StateSpace:
        names = [f"{cell_label(self.cells[c])}>{cell_label(self.cells[d])}"
                 for c, d in zip(self.current, self.destination)]
        same = self.current == self.destination
        return StateSpace(names, np.flatnonzero(~same), np.flatnonzero(same))

    def moves(self, direction: str, allowed) -> np.ndarray:
        """Per cell, the index of the neighbouring cell in ``direction``, or -1 when it is not allowed."""
        out = np.full(self.n_cells, -1, dtype=np.int64)
        for i, cell in enumerate(self.cells):
            target = shift(cell, direction)
            if allowed(target) and target in self.cell_index:
                out[i] = self.cell_index[target]
        return out


def grid_records(grid: PairGrid, direction_actions: list[tuple[int, str]], allowed, success: float,
                 reward, discount: float) -> TransitionTable:
    """Move-or-stay dynamics with a fixed destination.

    ``reward(action, current, next_current, destination)`` is evaluated on index arrays.
    A move that leaves the allowed cells stays put with probability one.
    """
    tables = []
    cur, dest = grid.current, grid.destination
    states = np.arange(grid.n_states)
    for action, direction in direction_actions:
        target = grid.moves(direction, allowed)[cur]
        blocked = target < 0
        moved = np.flatnonzero(~blocked)
        stay_prob = np.where(blocked, 1.0, 1.0 - success)
        keep = stay_prob > 0
        parts = [
            (states[keep], cur[keep], stay_prob[keep]),
            (states[moved], target[moved], np.full(moved.size, success)),
        ]
        for s, nxt, prob in parts:
            tables.append(TransitionTable.from_arrays(
                s, np.full(s.size, action), nxt * grid.n_cells + dest[s], prob,
                reward(action, cur[s], nxt, dest[s]), discount))
    return TransitionTable.concat(tables)


def _jam_mask(geometry: TrafficGeometry, grid: PairGrid) -> np.ndarray:
    return np.array([geometry.in_jam(c) for c in grid.cells])


def build_navigation(geometry: TrafficGeometry, params: TrafficParams) -> TabularMdp:
    """Single-factor navigation MDP: jam-touching steps cost r0 * (1/kappa), others r0 / v_mc."""
    grid = PairGrid(geometry.cells)
    jam = _jam_mask(geometry, grid)
    actions = ActionSet.single_factor(DIRECTION_NAMES, grid.n_states)

    def reward(_action, cur, nxt, dest):
        touching = jam[cur] | jam[nxt]
        step = np.where(touching, params.step_reward * params.inverse_kappa, params.step_reward / params.mc_speed)
        return params.dest_reward * (nxt == dest) + step

    table = grid_records(grid, list(enumerate(DIRECTION_NAMES)), geometry.contains, params.success, reward,
                         params.discount)
    return build_mdp(grid.space(), actions, table, params.end_penalty)


def transport_actions(n_states: int) -> ActionSet:
    factors = (DIRECTION_NAMES + (END,), MEANS + (END,))
    tuples = list(itertools.product(*factors))
    return ActionSet(factors, tuples, np.ones((n_states, len(tuples)), dtype=bool))


def build_transport(geometry: TrafficGeometry, params: TrafficParams) -> TabularMdp:
    """Two-factor (direction, means) MDP; the means only changes the reward."""
    grid = PairGrid(geometry.cells)
    jam = _jam_mask(geometry, grid)
    actions = transport_actions(grid.n_states)
    jam_step = {"mc": params.jam_reward + params.step_reward / params.mc_speed,
                "car": params.step_reward * params.inverse_kappa}
    clear_step = {"mc": params.step_reward / params.mc_speed, "car": params.step_reward / params.car_speed}
    direction_actions = []
    means_of = {}
    for index, (direction, means) in enumerate(actions.actions[: actions.n_nonend]):
        direction_actions.append((index, direction))
        means_of[index] = means

    def reward(action, cur, nxt, dest):
        means = means_of[action]
        touching = jam[cur] | jam[nxt]
        return params.dest_reward * (nxt == dest) + np.where(touching, jam_step[means], clear_step[means])

    table = grid_records(grid, direction_actions, geometry.contains, params.success, reward, params.discount)
    return build_mdp(grid.space(), actions, table, params.end_penalty)


# Embeddings


def navigation_tokens(grid: PairGrid, state: int, direction: str, destination: Cell | None = None) -> tuple:
    """The (current, destination, direction) token read by navigation skills."""
    current, own_destination = grid.pair(state)
    return current, destination or own_destination, direction


def navigation_decomposition(mdp: TabularMdp, _registry=None) -> Embedding:
    """Identity embedding of a single-factor navigation MDP's state-action pairs."""
    grid = PairGrid(_cells_of(mdp))
    columns = mdp.actions.actions
    pairs = [(s, a) for s in range(mdp.n_states) for a in range(len(columns))]
    return Embedding.from_function("navigation", columns, pairs,
                                   lambda s, a: navigation_tokens(grid, s, columns[a][0]))


def _cells_of(mdp: TabularMdp) -> tuple[Cell, ...]:
    """Recover the cell list from (current>destination) state labels."""
    seen: dict[Cell, None] = {}
    for name in mdp.space.states:
        x, y = name.split(">")[0].split(",")
        seen.setdefault((int(x), int(y)), None)
    return tuple(seen)


def direction_generator(geometry: TrafficGeometry, level: TabularMdp, name: str) -> EmbeddingGenerator:
    """Navigation restricted to moves that cross the jam boundary (pause) or the rest (free)."""
    grid = PairGrid(_cells_of(level))
    columns = level.actions.projection((0,))
    crossing = {(i, d): geometry.crosses(c, d) for i, c in enumerate(grid.cells) for d in DIRECTION_NAMES}

    def produce(theta: str) -> Embedding:
        pairs = []
        for s in range(grid.n_states):
            cur = int(grid.current[s])
            for a, column in enumerate(columns):
                direction = column[0]
                if direction == END:
                    if theta == FREE:
                        pairs.append((s, a))
                elif crossing[(cur, direction)] == (theta == PAUSE):
                    pairs.append((s, a))
        return Embedding.from_function(f"{name}:{theta}", columns, pairs,
                                       lambda s, a: navigation_tokens(grid, s, columns[a][0]))

    return EmbeddingGenerator(name, DIR_PARAMETERS, produce)


def means_generator(level: TabularMdp) -> EmbeddingGenerator:
    """Indicator of one means of transport on the means factor."""
    columns = level.actions.projection((1,))
    pairs = [(s, a) for s in range(level.n_states) for a in range(len(columns))]
    return EmbeddingGenerator("means", MEANS, lambda theta: Embedding.from_function(
        f"means:{theta}", columns, pairs, lambda s, a: int(columns[a][1] == theta)))


def transport_embedding(geometry: TrafficGeometry, navigation, level: TabularMdp, direction_factor: int,
                        means_factor: int, name: str = "transport") -> Embedding:
    """Embedding of second-level (direction parameter, means) actions into transport tokens.

    Only actions whose other factors are null are embedded.  The token holds, per
    direction, the navigation choice masked by the parameter's region, the
    navigation choice masked by the jam region, the navigation choice itself,
    and the means.  ``navigation`` is a skill read on (current, destination, direction).
    """
    grid = PairGrid(_cells_of(level))
    columns = level.actions.actions
    chosen = []
    for a, action in enumerate(columns[: level.actions.n_nonend]):
        others_null = all(x == NULL for k, x in enumerate(action) if k not in (direction_factor, means_factor))
        if others_null and action[direction_factor] in DIR_PARAMETERS and action[means_factor] in MEANS:
            chosen.append(a)
    pairs, tokens = [], []
    for s in range(grid.n_states):
        current, destination = grid.pair(s)
        nav = tuple(navigation((current, destination, d)) for d in DIRECTION_NAMES)
        crossing = tuple(geometry.crosses(current, d) for d in DIRECTION_NAMES)
        jams = tuple(int(geometry.touches(current, d)) * n for d, n in zip(DIRECTION_NAMES, nav))
        for a in chosen:
            theta, means = columns[a][direction_factor], columns[a][means_factor]
            region = tuple(n * int(c == (theta == PAUSE)) for n, c in zip(nav, crossing))
            pairs.append((s, a))
            tokens.append((region, jams, nav, means))
    states = np.array([s for s, _ in pairs], dtype=np.int64)
    actions = np.array([a for _, a in pairs], dtype=np.int64)
    return Embedding(name, columns, states, actions, tuple(tokens))


# Hints


def navigation_hint(n: int) -> Hint:
    return Hint(end_penalties=(basic_setup(n)[1].end_penalty,),
                decomp={1: DecompSpec(navigation_skill_name(n), navigation_decomposition)})


def transport_hint(n: int, geometry: TrafficGeometry, params: TrafficParams,
                   extract_transport: bool = False, warm_start: bool = False) -> Hint:
    """Generators: one direction generator per navigation skill plus the means generator.

    The sparse city uses both sparse navigation skills; the dense city uses the
    dense one.  ``extract_transport`` decomposes the second-level solution through
    the first navigation skill's transport embedding; ``warm_start`` composes the
    transport skill on the second level.
    """
    nav_names = ("nav_dense",) if geometry.variant == "dense" else ("nav_1", "nav_2")
    specs = tuple(
        GeneratorSpec(nav, (lambda level, nav=nav: direction_generator(geometry, level, nav)), (0,), name=nav)
        for nav in nav_names
    ) + (GeneratorSpec("id", means_generator, (1,), timescale=math.inf, name="means"),)
    means_factor = len(nav_names)
    decomp = {}
    if extract_transport:
        decomp[2] = DecompSpec("transport", transport_factory(geometry, nav_names[0], 0, means_factor))
    top_skill, top_embedding = None, None
    if warm_start:
        top_skill, top_embedding = "transport", transport_factory(geometry, nav_names[0], 0, means_factor)
    return Hint((specs,), (params.end_penalty, params.end_penalty), top_skill, top_embedding, decomp)


def transport_factory(geometry: TrafficGeometry, nav_name: str, direction_factor: int, means_factor: int):
    """Embedding factory reading the navigation skill from the registry at build time."""
    def build(level: TabularMdp, registry) -> Embedding:
        return transport_embedding(geometry, registry.get(nav_name), level, direction_factor, means_factor)

    return build


def with_params(params: TrafficParams, **overrides) -> TrafficParams:
    return replace(params, **overrides)
