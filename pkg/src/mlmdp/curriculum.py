"""Ordered curricula, teacher hints, and skill extraction between MDPs.

A hint names registered skills and supplies embedding factories; the student
solves each MDP as a multi-level MDP built from those skills, and every level
with a decomposition embedding contributes a new skill to the registry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

from .errors import ConfigError, MlmdpError, OutOfOrder
from .mdp import TabularMdp
from .mmdp import DIFFUSIVE, MmdpPlan, MmdpResult, SkillStart, solve_mmdp
from .policies import GeneratorSet
from .solver import SolveConfig
from .transfer import Embedding, EmbeddingGenerator, PolicyTarget, Skill, SkillsRegistry, compose_generator, decompose

EmbeddingFactory = Callable[[TabularMdp, SkillsRegistry], Embedding]


@dataclass(frozen=True)
class GeneratorSpec:
    """A skill (registry name or inline) paired with an embedding generator built on the level's MDP."""

    skill: Union[str, Skill]
    embeddings: Callable[[TabularMdp], EmbeddingGenerator]
    active_factors: tuple[int, ...]
    timescale: float | None = None
    name: str | None = None


@dataclass(frozen=True)
class DecompSpec:
    """Register ``skill_name`` by decomposing the level's solution through ``embedding(level_mdp, registry)``."""

    skill_name: str
    embedding: EmbeddingFactory


@dataclass(frozen=True)
class Hint:
    gset_specs: tuple[tuple[GeneratorSpec, ...], ...] = ()
    end_penalties: tuple[float, ...] = (-10.0,)
    top_skill: str | None = None
    top_embedding: EmbeddingFactory | None = None
    decomp: Mapping[int, DecompSpec] = field(default_factory=dict)

    @property
    def difficulty(self) -> int:
        return len(self.end_penalties)

    def __post_init__(self) -> None:
        if len(self.gset_specs) != self.difficulty - 1:
            raise ConfigError(f"a difficulty-{self.difficulty} hint needs {self.difficulty - 1} generator sets")
        if (self.top_skill is None) != (self.top_embedding is None):
            raise ConfigError("a top-level warm start needs both a skill and an embedding")
        for level in self.decomp:
            if not 1 <= level <= self.difficulty:
                raise ConfigError(f"decomposition level {level} outside 1..{self.difficulty}")


def _resolve(skill: Union[str, Skill], registry: SkillsRegistry) -> Skill:
    return registry.get(skill) if isinstance(skill, str) else skill


def _gset_source(specs: Sequence[GeneratorSpec], skills: Sequence[Skill]) -> Callable[[TabularMdp], GeneratorSet]:
    def build(level: TabularMdp) -> GeneratorSet:
        generators = []
        for spec, skill in zip(specs, skills):
            target = PolicyTarget(level.actions, spec.active_factors)
            generators.append(compose_generator(skill, spec.embeddings(level), target, spec.timescale, spec.name))
        return GeneratorSet(tuple(generators))

    return build


def learn_mdp(mdp: TabularMdp, hint: Hint, registry: SkillsRegistry,
              t_bounds: tuple[float, float] = (math.inf, math.inf), config: SolveConfig | None = None,
              record: bool = False) -> MmdpResult:
    """Solve ``mdp`` with the hinted skills, then register the skills the hint asks to extract.

    Every skill name is resolved before any solving starts.
    """
    sources = []
    for specs in hint.gset_specs:
        skills = [_resolve(spec.skill, registry) for spec in specs]
        sources.append(_gset_source(specs, skills))
    top_init = DIFFUSIVE
    if hint.top_skill is not None:
        factory = hint.top_embedding
        top_init = SkillStart(registry.get(hint.top_skill), lambda top: factory(top, registry))
    configs = None if config is None else [config] * hint.difficulty
    plan = MmdpPlan(mdp, hint.difficulty, sources, hint.end_penalties, t_bounds, configs, top_init, record)
    result = solve_mmdp(plan)
    for level in sorted(hint.decomp):
        solution = result.solutions[level - 1]
        if solution is None:
            continue
        spec = hint.decomp[level]
        embedding = spec.embedding(result.levels[level - 1], registry)
        skill = decompose(solution.policy, embedding, t_bounds, spec.skill_name)
        registry.add(spec.skill_name, skill)
        result.extracted.append(spec.skill_name)
    return result


@dataclass(frozen=True)
class CurriculumItem:
    difficulty: int
    index: int
    mdp: TabularMdp
    hint: Hint
    name: str = ""

    @property
    def key(self) -> tuple[int, int]:
        return self.difficulty, self.index


def curriculum_order_check(items: Sequence[CurriculumItem | tuple[int, int]]) -> None:
    """Require strictly increasing (difficulty, index) keys."""
    keys = [item.key if isinstance(item, CurriculumItem) else tuple(item) for item in items]
    for before, after in zip(keys, keys[1:]):
        if not before < after:
            raise OutOfOrder(f"curriculum item {after} does not follow {before}")


@dataclass(frozen=True)
class Curriculum:
    items: tuple[CurriculumItem, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        curriculum_order_check(self.items)
        for item in self.items:
            if item.hint.difficulty != item.difficulty:
                raise ConfigError(f"item {item.key}: hint difficulty {item.hint.difficulty} differs")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(eq=False)
class ItemOutcome:
    """One curriculum item: its result, or the error that stopped it."""

    item: CurriculumItem
    result: MmdpResult | None
    error: str | None
    registry_names: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.error is None and self.result is not None and not self.result.error_flag.exists


def learn_curriculum(curriculum: Curriculum, registry: SkillsRegistry,
                     t_bounds: tuple[float, float] = (math.inf, math.inf), config: SolveConfig | None = None,
                     record: bool = False) -> list[ItemOutcome]:
    """Learn the items in order; a failing item is recorded and the traversal continues."""
    outcomes = []
    for item in curriculum.items:
        try:
            result = learn_mdp(item.mdp, item.hint, registry, t_bounds, config, record)
            error = None
        except MlmdpError as exc:
            result, error = None, f"{type(exc).__name__}: {exc}"
        outcomes.append(ItemOutcome(item, result, error, tuple(registry.names())))
    return outcomes
