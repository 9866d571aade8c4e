"""Key-and-door maze family on the four-room geometry.

Difficulty 1 is the dense-city navigation MDP.  Difficulty 2 covers
navigation around blocks and opening one door with its key; difficulty 3 is
the full puzzle of collecting keys, opening doors and picking up the goal.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

from ..curriculum import DecompSpec, GeneratorSpec, Hint
from ..errors import ConfigError
from ..mdp import END, NULL, ActionSet, StateSpace, TabularMdp, TransitionTable, build_mdp
from ..transfer import Embedding, EmbeddingGenerator
from .geometry import BASE_MAZE, DIRECTION_NAMES, Cell, MazeGeometry, cell_label, neighbourhood, shift
from .traffic import DENSE_PARAMS, DENSE_TRAFFIC, PairGrid, build_navigation, grid_records, navigation_decomposition

PICK, OPEN = "pick", "open"
PUZZLE_ACTIONS = DIRECTION_NAMES + (PICK, OPEN)


@dataclass(frozen=True)
class MazeParams:
    success: float = 0.9
    goal_reward: float = 1e4
    step_reward: float = -10.0
    end_penalty: float = -10.0


def navigation_skill_for(geometry: MazeGeometry) -> str:
    """Name of the block-avoiding navigation skill valid on ``geometry``'s blocks."""
    return "nav" if geometry.doors == BASE_MAZE.doors else f"nav_{geometry.variant.replace('-', '_')}"


# Navigation around blocks


def build_block_navigation(geometry: MazeGeometry, params: MazeParams) -> TabularMdp:
    """Reach a destination among the non-block cells; arriving pays the goal reward."""
    grid = PairGrid(geometry.open_cells)
    actions = ActionSet.single_factor(DIRECTION_NAMES, grid.n_states)
    open_set = set(geometry.open_cells)

    def reward(_action, _cur, nxt, dest):
        return np.where(nxt == dest, params.goal_reward, params.step_reward)

    table = grid_records(grid, list(enumerate(DIRECTION_NAMES)), open_set.__contains__, params.success, reward, 1.0)
    return build_mdp(grid.space(), actions, table, params.end_penalty)


def navigation_target_generator(level: TabularMdp, targets: dict[str, Cell | None]) -> EmbeddingGenerator:
    """Dense navigation read toward a fixed cell, or toward the state's own destination when None."""
    grid = PairGrid(_pair_cells(level))
    columns = level.actions.actions
    pairs = [(s, a) for s in range(level.n_states) for a in range(len(columns))]

    def produce(theta: str) -> Embedding:
        target = targets[theta]
        return Embedding.from_function(
            f"nav:{theta}", columns, pairs,
            lambda s, a: (grid.pair(s)[0], target or grid.pair(s)[1], columns[a][0]))

    return EmbeddingGenerator("nav_dense", tuple(targets), produce)


def _pair_cells(level: TabularMdp) -> tuple[Cell, ...]:
    seen: dict[Cell, None] = {}
    for name in level.space.states:
        x, y = name.split(">")[0].split(",")
        seen.setdefault((int(x), int(y)), None)
    return tuple(seen)


# Key-and-door puzzles


class PuzzleState(NamedTuple):
    cur: Cell
    picks: tuple[int, ...]
    opens: tuple[int, ...]
    done: int = 0


class Puzzle:
    """State enumeration and dynamics shared by the one-door and three-door puzzles.

    ``slots`` selects which (key, door) pairs of the geometry take part; the
    agent moves within ``region`` and may enter a door cell only once it is open.
    """

    def __init__(self, geometry: MazeGeometry, params: MazeParams, slots: tuple[int, ...],
                 region: Iterable[Cell], with_goal: bool):
        self.geometry = geometry
        self.params = params
        self.slots = slots
        self.keys = tuple(geometry.keys[i] for i in slots)
        self.doors = tuple(geometry.doors[i] for i in slots)
        self.region = frozenset(region)
        self.with_goal = with_goal
        self.door_neighbours = tuple(neighbourhood(d) for d in self.doors)

    def allowed(self, cell: Cell, state: PuzzleState) -> bool:
        if cell not in self.region:
            return False
        return all(cell != door or opened for door, opened in zip(self.doors, state.opens))

    def terminal(self, state: PuzzleState) -> bool:
        return bool(state.done) if self.with_goal else bool(state.opens[0])

    @cached_property
    def states(self) -> tuple[PuzzleState, ...]:
        k = len(self.slots)
        out = []
        for cell in sorted(self.region):
            for picks in itertools.product((0, 1), repeat=k):
                for opens in itertools.product((0, 1), repeat=k):
                    for done in ((0, 1) if self.with_goal else (0,)):
                        state = PuzzleState(cell, picks, opens, done)
                        if self.allowed(cell, state):
                            out.append(state)
        return tuple(out)

    @cached_property
    def index(self) -> dict[PuzzleState, int]:
        return {s: i for i, s in enumerate(self.states)}

    def label(self, state: PuzzleState) -> str:
        bits = "".join(map(str, state.picks)), "".join(map(str, state.opens))
        name = f"{cell_label(state.cur)}|p{bits[0]}|o{bits[1]}"
        return f"{name}|d{state.done}" if self.with_goal else name

    def changed(self, state: PuzzleState, action: str) -> PuzzleState:
        """The successor when ``action`` succeeds."""
        if action in DIRECTION_NAMES:
            target = shift(state.cur, action)
            return state._replace(cur=target) if self.allowed(target, state) else state
        if action == PICK:
            picks = tuple(1 if key == state.cur else p for key, p in zip(self.keys, state.picks))
            done = 1 if self.with_goal and state.cur == self.geometry.goal else state.done
            return state._replace(picks=picks, done=done)
        if action == OPEN:
            opens = tuple(1 if (state.cur in around and p) else o
                          for around, p, o in zip(self.door_neighbours, state.picks, state.opens))
            return state._replace(opens=opens)
        raise ValueError(action)

    def transitions(self) -> TransitionTable:
        records = []
        p = self.params.success
        for s, state in enumerate(self.states):
            for a, action in enumerate(PUZZLE_ACTIONS):
                new = self.changed(state, action)
                if new == state:
                    records.append((s, a, s, 1.0, self.params.step_reward, 1.0))
                    continue
                gain = self.params.goal_reward if self.terminal(new) and not self.terminal(state) \
                    else self.params.step_reward
                records.append((s, a, self.index[new], p, gain, 1.0))
                records.append((s, a, s, 1.0 - p, self.params.step_reward, 1.0))
        return TransitionTable.from_records(records)

    def build(self, initial_rule) -> TabularMdp:
        n = len(self.states)
        terminal = [i for i, s in enumerate(self.states) if self.terminal(s)]
        space = StateSpace([self.label(s) for s in self.states], [], terminal)
        actions = ActionSet.single_factor(PUZZLE_ACTIONS, n)
        mdp = build_mdp(space, actions, self.transitions(), self.params.end_penalty)
        solvable = can_reach_terminal(mdp)
        initial = [i for i, s in enumerate(self.states) if solvable[i] and not self.terminal(s) and initial_rule(s)]
        return mdp.restrict_initial(initial)


def can_reach_terminal(mdp: TabularMdp) -> np.ndarray:
    """States from which some action sequence reaches a terminal state with positive probability."""
    n = mdp.n_states
    step = mdp.kernel_p.tocoo()
    edges = sp.csr_matrix((np.ones(step.nnz), (step.row % n, step.col)), shape=(n, n))
    reach = mdp.space.terminal_mask.astype(float)
    while True:
        grown = np.minimum(reach + (edges @ reach > 0), 1.0)
        if np.array_equal(grown, reach):
            return reach > 0
        reach = grown


def key_door_puzzle(geometry: MazeGeometry, params: MazeParams) -> Puzzle:
    """One key and the first door, inside the first room."""
    return Puzzle(geometry, params, (0,), geometry.rooms[1], with_goal=False)


def full_puzzle(geometry: MazeGeometry, params: MazeParams) -> Puzzle:
    return Puzzle(geometry, params, (0, 1, 2), geometry.open_cells, with_goal=True)


def build_key_door(geometry: MazeGeometry, params: MazeParams) -> tuple[TabularMdp, Puzzle]:
    puzzle = key_door_puzzle(geometry, params)
    return puzzle.build(lambda s: True), puzzle


def build_full_puzzle(geometry: MazeGeometry, params: MazeParams) -> tuple[TabularMdp, Puzzle]:
    """Initial states: not yet done, and outside room 2 unless door 1 is open; solvable only."""
    puzzle = full_puzzle(geometry, params)

    def initial(s: PuzzleState) -> bool:
        return geometry.room_of(s.cur) != 2 or bool(s.opens[0])

    return puzzle.build(initial), puzzle


# Puzzle embeddings


def single_step_generator(level: TabularMdp) -> EmbeddingGenerator:
    """Indicator of the pick or open action."""
    columns = level.actions.actions
    pairs = [(s, a) for s in range(level.n_states) for a in range(len(columns))]
    return EmbeddingGenerator("alpha", (PICK, OPEN), lambda theta: Embedding.from_function(
        f"alpha:{theta}", columns, pairs, lambda s, a: int(columns[a][0] == theta)))


def puzzle_navigation_generator(puzzle: Puzzle, level: TabularMdp, targets: dict[str, Cell],
                                doors: frozenset[str]) -> EmbeddingGenerator:
    """Navigation toward a target cell; door targets stop before stepping onto the door."""
    columns = level.actions.actions
    moves = [a for a, c in enumerate(columns) if c[0] in DIRECTION_NAMES or c[0] == END]

    def produce(theta: str) -> Embedding:
        target = targets[theta]
        pairs, tokens = [], []
        for s, state in enumerate(puzzle.states):
            for a in moves:
                action = columns[a][0]
                if theta in doors and action != END and shift(state.cur, action) == target:
                    continue
                pairs.append((s, a))
                tokens.append((state.cur, target, action))
        return Embedding(f"beta:{theta}", columns, np.array([s for s, _ in pairs]), np.array([a for _, a in pairs]),
                         tuple(tokens))

    return EmbeddingGenerator("beta", tuple(targets), produce)


def concat_token(puzzle: Puzzle, state: PuzzleState, slot: int | None, label: str) -> tuple:
    """Key-then-door features of one slot; ``slot=None`` reads the goal with ``done`` as both flags."""
    if slot is None:
        at_goal = int(state.cur == puzzle.geometry.goal)
        return at_goal, state.done * at_goal, state.done, state.done, label
    picked = state.picks[slot]
    return (int(state.cur == puzzle.keys[slot]), picked * int(state.cur in puzzle.door_neighbours[slot]),
            picked, state.opens[slot], label)


def _labelled_actions(level: TabularMdp, key_name: str, door_name: str | None) -> list[tuple[int, str]]:
    """Second-level action indices with their concat labels; other end tuples are left out."""
    wanted = {(PICK, NULL): "pick", (OPEN, NULL): "open", (NULL, key_name): "key", (END, END): END}
    if door_name is not None:
        wanted[(NULL, door_name)] = "door"
    return [(level.actions.index[a], label) for a, label in wanted.items() if a in level.actions.index]


def concat_embedding(puzzle: Puzzle, level: TabularMdp, key_name: str, door_name: str | None,
                     slot: int | None, name: str = "concat", skip_terminal: bool = False) -> Embedding:
    """Concat tokens on the labelled second-level actions.

    ``skip_terminal`` leaves terminal states out; their rows fall back to ending.
    """
    labelled = _labelled_actions(level, key_name, door_name)
    states = range(len(puzzle.states))
    if skip_terminal:
        states = np.flatnonzero(~level.space.terminal_mask).tolist()
    pairs = [(s, a, label) for s in states for a, label in labelled]
    return Embedding(name, level.actions.actions, np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]),
                     tuple(concat_token(puzzle, puzzle.states[s], slot, label) for s, _, label in pairs))


def concat_generator(puzzle: Puzzle, level: TabularMdp) -> EmbeddingGenerator:
    """Key-door sequences for each door, plus picking up the goal."""
    domain = ("door1", "door2", "door3", "goal")

    def produce(theta: str) -> Embedding:
        if theta == "goal":
            return concat_embedding(puzzle, level, "goal", None, None, "concat:goal", skip_terminal=True)
        i = int(theta[-1])
        return concat_embedding(puzzle, level, f"key{i}", f"door{i}", i - 1, f"concat:{theta}", skip_terminal=True)

    return EmbeddingGenerator("concat", domain, produce)


# Hints


def navigation_dense_hint() -> Hint:
    return Hint(end_penalties=(DENSE_PARAMS.end_penalty,),
                decomp={1: DecompSpec("nav_dense", navigation_decomposition)})


def block_navigation_hint(geometry: MazeGeometry, params: MazeParams) -> Hint:
    targets = {"door1": geometry.doors[0], "door2": geometry.doors[1], "door3": geometry.doors[2], "dest": None}
    spec = GeneratorSpec("nav_dense", lambda level: navigation_target_generator(level, targets), (0,), name="nav")
    return Hint(((spec,),), (params.end_penalty,) * 2,
                decomp={1: DecompSpec(navigation_skill_for(geometry), navigation_decomposition)})


def _first_level_specs(puzzle: Puzzle, targets: dict[str, Cell], doors: frozenset[str], nav: str):
    return (
        GeneratorSpec("id", single_step_generator, (0,), name="alpha"),
        GeneratorSpec(nav, lambda level: puzzle_navigation_generator(puzzle, level, targets, doors), (0,),
                      name="beta"),
    )


def key_door_hint(puzzle: Puzzle, params: MazeParams, extract: bool = True) -> Hint:
    targets = {"key": puzzle.keys[0], "door": puzzle.doors[0]}
    specs = _first_level_specs(puzzle, targets, frozenset({"door"}), navigation_skill_for(puzzle.geometry))
    decomp = {}
    if extract:
        decomp[2] = DecompSpec("concat", lambda level, _r: concat_embedding(puzzle, level, "key", "door", 0))
    return Hint((specs,), (params.end_penalty,) * 2, decomp=decomp)


def full_puzzle_hint(puzzle: Puzzle, params: MazeParams, difficulty: int = 3) -> Hint:
    """Difficulty 3 stacks concat sequences over navigation; difficulty 2 stops at navigation."""
    g = puzzle.geometry
    targets = {f"key{i + 1}": g.keys[i] for i in range(3)}
    targets.update({f"door{i + 1}": g.doors[i] for i in range(3)})
    targets["goal"] = g.goal
    specs = _first_level_specs(puzzle, targets, frozenset({"door1", "door2", "door3"}), navigation_skill_for(g))
    if difficulty == 2:
        return Hint((specs,), (params.end_penalty,) * 2)
    if difficulty != 3:
        raise ConfigError("the full puzzle is hinted at difficulty 2 or 3")
    top = (GeneratorSpec("concat", lambda level: concat_generator(puzzle, level), (0, 1), name="concat"),)
    return Hint((specs, top), (params.end_penalty,) * 3)


# Builders


def build_dense_navigation() -> TabularMdp:
    """The first maze MDP: navigation in the dense city."""
    return build_navigation(DENSE_TRAFFIC, DENSE_PARAMS)


def with_params(params: MazeParams, **overrides) -> MazeParams:
    return replace(params, **overrides)
