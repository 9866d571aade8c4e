"""Analytic references for the benchmark families.

Deterministic skills move along a single intended path whose steps each
succeed with probability ``p`` and otherwise stay put.  The number of attempts
per step is geometric, so the compressed tables of such a skill have closed
forms in the path length: one transition to the path's end, a
negative-binomial mean reward, and a product of per-step discounts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..mdp import END, Policy, TabularMdp
from .geometry import MazeGeometry, TrafficGeometry
from .mazebase import Puzzle, PuzzleState

PATH_CAP = 100_000


@dataclass(frozen=True)
class StepOutcome:
    """One intended step: where it goes and what success or a stay pays."""

    target: int
    success: float
    move_reward: float
    stay_reward: float
    discount: float


@dataclass(frozen=True)
class SkillPath:
    """The intended trajectory of a deterministic policy from one state."""

    start: int
    steps: tuple[StepOutcome, ...]
    ends: bool

    @property
    def length(self) -> float:
        return len(self.steps) if self.ends else math.inf

    @property
    def end_state(self) -> int:
        return self.steps[-1].target if self.steps else self.start


def _intended_step(mdp: TabularMdp, state: int, action: int) -> StepOutcome | None:
    """The single non-self successor of a move-or-stay row, or None for a pure stay."""
    probs, rewards, discounts = mdp.row(state, action)
    others = [t for t in probs if t != state]
    if not others:
        return None
    if len(others) > 1:
        raise ValueError(f"row ({state}, {action}) is not a move-or-stay row")
    target = others[0]
    return StepOutcome(target, probs[target], rewards[target], rewards.get(state, 0.0), discounts[target])


def skill_path(mdp: TabularMdp, policy: Policy, start: int) -> SkillPath:
    """Follow the policy's argmax along successful steps until it ends or loops."""
    if not policy.is_deterministic():
        raise ValueError("closed forms assume a deterministic skill policy")
    choice = policy.argmax()
    steps = []
    seen = {start}
    state = start
    for _ in range(PATH_CAP):
        action = int(choice[state])
        if mdp.actions.end_mask[action] or mdp.space.terminal_mask[state]:
            return SkillPath(start, tuple(steps), True)
        step = _intended_step(mdp, state, action)
        if step is None or step.target in seen:
            return SkillPath(start, tuple(steps), False)
        steps.append(step)
        seen.add(step.target)
        state = step.target
    return SkillPath(start, tuple(steps), False)


def path_lengths(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """Trajectory length until the deterministic policy ends, infinite when it never does."""
    return np.array([skill_path(mdp, policy, s).length for s in range(mdp.n_states)])


@dataclass(frozen=True)
class ClosedFormEntry:
    end_state: int
    reward: float
    discount: float


def negative_binomial_entry(path: SkillPath, end_penalty: float) -> ClosedFormEntry:
    """Compressed (end state, reward, discount) of a finite path that finishes with an end action.

    Per step, with success ``p``, discount ``g``, move reward ``r`` and stay reward ``f``,
    the expected discounted reward until success is (p r + (1 - p) f) / (1 - (1 - p) g)
    and the expected discount is p g / (1 - (1 - p) g).
    """
    if not path.ends:
        raise ValueError("path never ends")
    reward, discount = 0.0, 1.0
    for step in path.steps:
        retry = 1.0 - (1.0 - step.success) * step.discount
        reward += discount * (step.success * step.move_reward + (1.0 - step.success) * step.stay_reward) / retry
        discount *= step.success * step.discount / retry
    return ClosedFormEntry(path.end_state, reward + discount * end_penalty, discount)


def corridor_reward(length: int, success: float, step_reward: float, end_penalty: float) -> float:
    """Undiscounted closed form: end penalty plus step reward times the expected attempt count."""
    return end_penalty + step_reward * length / success


# Optimal-policy predicates


def transport_means_predicate(geometry: TrafficGeometry, mdp: TabularMdp, actions: np.ndarray,
                              cells: tuple) -> np.ndarray:
    """Per state, whether the chosen (direction, means) uses the car exactly on jam-touching moves.

    Terminal states and end actions satisfy the predicate trivially.
    """
    n_cells = len(cells)
    ok = np.ones(mdp.n_states, dtype=bool)
    for s in np.flatnonzero(~mdp.space.terminal_mask):
        direction, means = mdp.actions.actions[int(actions[s])]
        if direction == END:
            ok[s] = False
            continue
        touching = geometry.touches(cells[s // n_cells], direction)
        ok[s] = (means == "car") == touching
    return ok


def full_puzzle_top_choice(geometry: MazeGeometry, state: PuzzleState) -> str:
    """Closed-form third-level choice for the base geometry's door layout."""
    if state.done:
        return END
    door1, door2, door3 = geometry.doors
    room = geometry.room_of(state.cur)
    in_far = room == 4 or state.cur == door3
    in_middle = room == 3 or state.cur == door2
    in_near = room in (1, 2) or state.cur == door1
    _, open2, open3 = state.opens
    if in_far or (in_middle and open3) or (in_near and open2 and open3):
        return "goal"
    if (in_middle or (in_near and open2)) and not open3:
        return "door3"
    return "door2"


def key_door_second_level_choice(puzzle: Puzzle, state: PuzzleState) -> str:
    """Closed-form choice on the one-door puzzle: pick, open, go to the key, or go to the door."""
    if state.opens[0]:
        return END
    if not state.picks[0]:
        return "pick" if state.cur == puzzle.keys[0] else "key"
    return "open" if state.cur in puzzle.door_neighbours[0] else "door"


