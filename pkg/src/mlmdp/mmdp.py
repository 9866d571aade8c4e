"""Bottom-up construction and top-down solving of a multi-level MDP.

Levels share the base state space.  Level ``l + 1`` is the compression of level
``l`` under the vocabulary enumerated from that level's generator set.  The top
level is solved from an initial policy; every lower level is warm-started from
the convolution of the level above's policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .compression import compress_level
from .errors import ConfigError, Unbounded
from .mdp import Policy, TabularMdp, continuation_matrix, policy_reward
from .policies import GeneratorSet, Vocabulary, convolve, enumerate_policies
from .solver import DEFAULT_EPSILON, ErrorFlag, SolveConfig, SolveResult, iteration_bound, reference_values, value_iterate
from .transfer import Embedding, PolicyTarget, Skill, compose_policy

DIFFUSIVE = "diffusive"
WARM_START_SWEEP_CAP = 20_000
WARM_START_TOLERANCE = 1e-10

GeneratorSource = Union[GeneratorSet, Callable[[TabularMdp], GeneratorSet]]


@dataclass(frozen=True)
class SkillStart:
    """Top-level initial policy composed from a skill and an embedding of the top level."""

    skill: Skill
    embedding: Union[Embedding, Callable[[TabularMdp], Embedding]]

    def policy(self, top: TabularMdp) -> Policy:
        embedding = self.embedding(top) if callable(self.embedding) else self.embedding
        partial = compose_policy(self.skill, embedding, PolicyTarget.full(top.actions))
        dense = partial.dense()
        dense[~top.actions.available] = 0.0
        dense[top.space.terminal_mask] = 0.0
        dense[top.space.terminal_mask, top.actions.all_end_index] = 1.0
        totals = dense.sum(axis=1)
        empty = totals <= 0.0
        dense[~empty] /= totals[~empty, None]
        dense[empty, top.actions.all_end_index] = 1.0
        return Policy.from_dense(dense, top.actions, partial.timescale)


TopInit = Union[str, Policy, SkillStart]


@dataclass(eq=False)
class MmdpPlan:
    base: TabularMdp
    difficulty: int
    gsets: Sequence[GeneratorSource]
    end_penalties: Sequence[float]
    t_bounds: tuple[float, float] = (math.inf, math.inf)
    configs: Sequence[SolveConfig] | None = None
    top_init: TopInit = DIFFUSIVE
    record: bool = False

    def __post_init__(self) -> None:
        if self.difficulty < 1:
            raise ConfigError("difficulty must be at least one")
        if len(self.gsets) != self.difficulty - 1:
            raise ConfigError(f"difficulty {self.difficulty} needs {self.difficulty - 1} generator sets")
        if len(self.end_penalties) != self.difficulty:
            raise ConfigError(f"difficulty {self.difficulty} needs {self.difficulty} end penalties")
        if self.configs is not None and len(self.configs) != self.difficulty:
            raise ConfigError(f"difficulty {self.difficulty} needs {self.difficulty} solver configs")
        if isinstance(self.top_init, str) and self.top_init != DIFFUSIVE:
            raise ConfigError(f"unknown top-level initialization {self.top_init!r}")

    def config(self, level: int) -> SolveConfig:
        return self.configs[level - 1] if self.configs is not None else SolveConfig()


@dataclass(frozen=True)
class WarmStart:
    """Initial values handed to one level's solve and where they came from."""

    values: np.ndarray
    source: str
    evaluation_sweeps: int = 0


@dataclass(eq=False)
class MmdpResult:
    """Levels listed bottom first; entries above an early halt stay ``None``."""

    levels: list[TabularMdp]
    vocabularies: list[Vocabulary]
    solutions: list[SolveResult | None]
    warm_starts: list[WarmStart | None]
    error_flag: ErrorFlag
    solve_order: list[int] = field(default_factory=list)
    extracted: list[str] = field(default_factory=list)

    @property
    def difficulty(self) -> int:
        return len(self.levels)

    def iterations_by_level(self) -> dict[int, int]:
        return {l + 1: s.stats.iterations for l, s in enumerate(self.solutions) if s is not None}

    @property
    def total_iterations(self) -> int:
        return sum(self.iterations_by_level().values())

    @property
    def final(self) -> SolveResult | None:
        return self.solutions[0]


def diffusive_policy(mdp: TabularMdp) -> Policy:
    """Uniform over available actions at non-terminal states; all-end at terminal states."""
    dense = mdp.actions.available.astype(float)
    dense /= dense.sum(axis=1, keepdims=True)
    terminal = mdp.space.terminal_mask
    dense[terminal] = 0.0
    dense[terminal, mdp.actions.all_end_index] = 1.0
    return Policy.from_dense(dense, mdp.actions)


def _evaluation_sweeps(mdp: TabularMdp, policy: Policy) -> tuple[np.ndarray | None, int]:
    """Policy value and the sweeps spent, or None when evaluation does not settle."""
    r_pi = policy_reward(mdp, policy)
    m = continuation_matrix(mdp, policy)
    values = np.zeros(mdp.n_states)
    for sweep in range(1, WARM_START_SWEEP_CAP + 1):
        new = r_pi + m @ values
        delta = np.max(np.abs(new - values), initial=0.0)
        values = new
        if delta < WARM_START_TOLERANCE:
            values[mdp.space.terminal_mask] = 0.0
            return values, sweep
    return None, WARM_START_SWEEP_CAP


def build_levels(base: TabularMdp, gsets: Sequence[GeneratorSource], end_penalties: Sequence[float]
                 ) -> tuple[list[TabularMdp], list[Vocabulary]]:
    """Compress ``base`` once per generator set; returns (levels bottom first, vocabularies)."""
    levels = [base]
    vocabularies = []
    for index, source in enumerate(gsets):
        lower = levels[-1]
        gset = source(lower) if callable(source) else source
        vocabulary = enumerate_policies(gset, lower.actions)
        level = compress_level(lower, vocabulary, end_penalties[index + 1], level_index=index + 2)
        levels.append(level.mdp)
        vocabularies.append(vocabulary)
    return levels, vocabularies


def top_policy(top: TabularMdp, init: TopInit) -> Policy:
    if isinstance(init, str):
        return diffusive_policy(top)
    if isinstance(init, SkillStart):
        return init.policy(top)
    return init


def solve_mmdp(plan: MmdpPlan) -> MmdpResult:
    """Build levels 2..L, solve level L from the plan's initial policy, then refine downward.

    A lower level starts from the larger of the carried values and the value of
    the convolved policy; when compression is exact both lie below its optimum.  A threshold
    violation at any level halts the descent with that level's error flag.
    """
    levels, vocabularies = build_levels(plan.base, plan.gsets, plan.end_penalties)
    depth = plan.difficulty
    solutions: list[SolveResult | None] = [None] * depth
    warm_starts: list[WarmStart | None] = [None] * depth
    order: list[int] = []

    top = levels[-1]
    init_values, sweeps = _evaluation_sweeps(top, top_policy(top, plan.top_init))
    if init_values is None:
        warm = WarmStart(np.zeros(top.n_states), "zero", sweeps)
    else:
        warm = WarmStart(init_values, "initial-policy", sweeps)

    flag = ErrorFlag(False, 1)
    for level in range(depth, 0, -1):
        mdp = levels[level - 1]
        warm_starts[level - 1] = warm
        result = value_iterate(mdp, init_values=warm.values, cfg=plan.config(level), t_bounds=plan.t_bounds,
                               level=level, record=plan.record)
        solutions[level - 1] = result
        order.append(level)
        if result.error_flag.exists:
            flag = result.error_flag
            break
        if level > 1:
            lower = levels[level - 2]
            refined = convolve(result.policy, vocabularies[level - 2], lower.space.terminal_mask)
            evaluated, sweeps = _evaluation_sweeps(lower, refined)
            carried = result.values.copy()
            carried[lower.space.terminal_mask] = 0.0
            if evaluated is None:
                warm = WarmStart(carried, "carried", sweeps)
            else:
                warm = WarmStart(np.maximum(carried, evaluated), "carried+refined", sweeps)
    return MmdpResult(levels, vocabularies, solutions, warm_starts, flag, order)


@dataclass(frozen=True)
class LevelGap:
    """Measured constants behind the per-level iteration cap of a refinement step."""

    level: int
    value_gap: float
    refinement_gap: float
    init_error: float
    predicted_cap: float
    actual_iterations: int

    @property
    def within_cap(self) -> bool:
        return self.actual_iterations <= self.predicted_cap


def measure_level_gaps(result: MmdpResult, optimal_values: Sequence[np.ndarray] | None = None,
                       epsilon: float = DEFAULT_EPSILON) -> list[LevelGap]:
    """For each refined level l < L: ||V*_{l+1} - V*_l||, refinement gap, and the iteration cap.

    The refinement gap is the sup distance between the warm-start values and V*_l.
    The cap is the propagated-bound iteration count N plus one; it is infinite when
    the closed-form bound is unbounded.
    """
    depth = result.difficulty
    if optimal_values is None:
        optimal_values = [reference_values(mdp) for mdp in result.levels]
    gaps = []
    for level in range(depth - 1, 0, -1):
        solution, warm = result.solutions[level - 1], result.warm_starts[level - 1]
        if solution is None or warm is None:
            continue
        mdp = result.levels[level - 1]
        v_star, v_above = optimal_values[level - 1], optimal_values[level]
        err = warm.values - v_star
        err[mdp.space.terminal_mask] = 0.0
        try:
            n_bound, _ = iteration_bound(mdp, err, err, epsilon, v_star)
        except Unbounded:
            n_bound = math.inf
        gaps.append(LevelGap(
            level,
            float(np.max(np.abs(v_above - v_star), initial=0.0)),
            float(np.max(np.abs(err), initial=0.0)),
            float(np.max(err, initial=0.0)),
            n_bound + 1,
            solution.stats.iterations,
        ))
    return gaps
