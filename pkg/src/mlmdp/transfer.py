"""Skills, embeddings, and their composition into partial policies.

An embedding maps a subset of a level's state-action pairs to feature tokens.
A skill is a table from tokens to ``[0, 1]``.  Composing the two and
normalizing per state gives a partial policy; decomposing a solved policy
through an embedding extracts a skill that can be reused on any MDP whose
embedding produces the same tokens.

Tokens are nested tuples of strings, integers and floats.  Their canonical
JSON encoding keys the serialized skill tables.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DuplicateName, InconsistentEmbedding, UnknownSkill, UnknownToken
from .mdp import BLOCKED, END, ActionSet, Policy
from .policies import Generator, PartialPolicy

Token = Hashable

CONSISTENCY_TOLERANCE = 1e-12
IDENTITY = "id"


def encode_token(token: Token) -> str:
    """Canonical, order-stable text form of a token."""
    return json.dumps(token, separators=(",", ":"))


def decode_token(text: str) -> Token:
    def freeze(x):
        return tuple(freeze(v) for v in x) if isinstance(x, list) else x

    return freeze(json.loads(text))


@dataclass(frozen=True, eq=False)
class Embedding:
    """Token map on an explicit set of (state, action-column) pairs.

    ``columns`` labels the action indices: full action tuples, or partial tuples
    with the blocked symbol on inactive factors.
    """

    name: str
    columns: tuple[tuple, ...]
    states: np.ndarray
    actions: np.ndarray
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.int64)
        actions = np.asarray(self.actions, dtype=np.int64)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "columns", tuple(tuple(c) for c in self.columns))
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not states.shape == actions.shape == (len(self.tokens),):
            raise ValueError(f"embedding {self.name!r}: states, actions and tokens differ in length")
        if actions.size and (actions.min() < 0 or actions.max() >= len(self.columns)):
            raise ValueError(f"embedding {self.name!r}: action index out of range")
        keys = states * len(self.columns) + actions
        if np.unique(keys).size != keys.size:
            raise ValueError(f"embedding {self.name!r} lists a state-action pair twice")

    @classmethod
    def from_function(cls, name: str, columns: Sequence[tuple], pairs: Iterable[tuple[int, int]],
                      feature: Callable[[int, int], Token]) -> "Embedding":
        """Embedding of ``feature(s, a)`` over the listed (state, column index) pairs."""
        pairs = list(pairs)
        states = [s for s, _ in pairs]
        actions = [a for _, a in pairs]
        return cls(name, tuple(columns), np.array(states, dtype=np.int64), np.array(actions, dtype=np.int64),
                   tuple(feature(s, a) for s, a in pairs))

    def __len__(self) -> int:
        return len(self.tokens)

    def codomain(self) -> frozenset:
        return frozenset(self.tokens)


@dataclass(frozen=True, eq=False)
class Skill:
    name: str
    table: Mapping[Token, float]
    timescale: float = math.inf

    def __post_init__(self) -> None:
        object.__setattr__(self, "table", dict(self.table))
        for token, value in self.table.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"skill {self.name!r} maps {token!r} to {value!r}, outside [0, 1]")
        if not self.timescale >= 1:
            raise ValueError("timescale must be at least one")

    def __call__(self, token: Token) -> float:
        try:
            return self.table[token]
        except KeyError:
            raise UnknownToken(f"skill {self.name!r} has no value for token {token!r}") from None

    def to_dict(self) -> dict:
        entries = sorted((encode_token(t), float(format(v, ".17g"))) for t, v in self.table.items())
        timescale = "inf" if math.isinf(self.timescale) else self.timescale
        return {"name": self.name, "timescale": timescale, "table": dict(entries)}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Skill":
        timescale = math.inf if doc["timescale"] == "inf" else float(doc["timescale"])
        return cls(doc["name"], {decode_token(k): float(v) for k, v in doc["table"].items()}, timescale)


def identity_skill(timescale: float = 1.0) -> Skill:
    """The identity map on indicator tokens {0, 1}."""
    return Skill(IDENTITY, {0: 0.0, 1: 1.0}, timescale)


@dataclass(eq=False)
class EmbeddingGenerator:
    """Named family of embeddings indexed by a parameter domain."""

    name: str
    domain: tuple[str, ...]
    produce: Callable[[str], Embedding]
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.domain = tuple(self.domain)
        if len(set(self.domain)) != len(self.domain):
            raise ValueError(f"embedding generator {self.name!r} repeats a parameter")

    def embedding(self, theta: str) -> Embedding:
        if theta not in self.domain:
            raise KeyError(f"{theta!r} is not a parameter of embedding generator {self.name!r}")
        if theta not in self._cache:
            self._cache[theta] = self.produce(theta)
        return self._cache[theta]


@dataclass(frozen=True)
class PolicyTarget:
    """The action columns a composed partial policy ranges over."""

    actions: ActionSet
    active_factors: tuple[int, ...]

    @classmethod
    def full(cls, actions: ActionSet) -> "PolicyTarget":
        return cls(actions, tuple(range(len(actions.factors))))

    @property
    def columns(self) -> tuple[tuple, ...]:
        return self.actions.projection(self.active_factors)

    @property
    def end_column(self) -> int:
        keep = set(self.active_factors)
        end = tuple(END if k in keep else BLOCKED for k in range(len(self.actions.factors)))
        return self.columns.index(end)


def _column_map(source: Sequence[tuple], target: Sequence[tuple]) -> np.ndarray:
    """Target index per source column, or -1 where the target lacks it."""
    lookup = {c: i for i, c in enumerate(target)}
    return np.array([lookup.get(c, -1) for c in source], dtype=np.int64)


def compose_policy(skill: Skill, embedding: Embedding, target: PolicyTarget) -> PartialPolicy:
    """Normalized composition of ``skill`` and ``embedding`` on the target columns.

    Pairs outside the embedding domain get zero mass.  States left without mass
    take the end column with probability one.  Embedding columns missing from
    the target (deduplicated vocabulary entries) are skipped.
    """
    columns = target.columns
    n = target.actions.n_states
    values = {token: skill(token) for token in set(embedding.tokens)}
    mapped = _column_map(embedding.columns, columns)[embedding.actions]
    keep = mapped >= 0
    data = np.array([values[t] for t in embedding.tokens], dtype=float)[keep]
    matrix = sp.csr_matrix((data, (embedding.states[keep], mapped[keep])), shape=(n, len(columns)))
    totals = np.asarray(matrix.sum(axis=1)).ravel()
    empty = totals <= 0.0
    scale = np.where(empty, 0.0, 1.0 / np.where(empty, 1.0, totals))
    matrix = (sp.diags(scale) @ matrix).tocsr()
    fallback = sp.csr_matrix((np.ones(int(empty.sum())), (np.flatnonzero(empty),
                                                           np.full(int(empty.sum()), target.end_column))),
                             shape=matrix.shape)
    return PartialPolicy(target.active_factors, columns, (matrix + fallback).tocsr(), skill.timescale)


def decompose(policy: Policy | PartialPolicy, embedding: Embedding, t_bounds: tuple[float, float] = (1.0, math.inf),
              name: str = "") -> Skill:
    """Skill reproducing ``policy`` through ``embedding`` on the embedding's domain.

    Raises InconsistentEmbedding when two pairs share a token but the policy
    values differ by more than 1e-12.  The timescale is clamped to ``t_bounds``.
    """
    columns = policy.actions.actions if isinstance(policy, Policy) else policy.actions
    mapped = _column_map(embedding.columns, columns)[embedding.actions]
    if np.any(mapped < 0):
        raise ValueError(f"embedding {embedding.name!r} uses actions the policy does not have")
    matrix = policy.matrix.tocsr()
    if embedding.states.size and embedding.states.max() >= matrix.shape[0]:
        raise ValueError(f"embedding {embedding.name!r} uses states the policy does not have")
    values = np.asarray(matrix[embedding.states, mapped]).ravel()
    table: dict[Token, float] = {}
    for token, value in zip(embedding.tokens, values.tolist()):
        seen = table.setdefault(token, value)
        if abs(seen - value) > CONSISTENCY_TOLERANCE:
            raise InconsistentEmbedding(
                f"embedding {embedding.name!r} maps pairs with policy values {seen!r} and {value!r} "
                f"to the same token {token!r}")
    t_min, t_max = t_bounds
    timescale = min(max(policy.timescale, t_min), t_max)
    return Skill(name or embedding.name, table, timescale)


def compose_generator(skill: Skill, egen: EmbeddingGenerator, target: PolicyTarget,
                      timescale: float | None = None, name: str | None = None) -> Generator:
    """Generator whose parameter ``theta`` yields ``compose_policy(skill, egen(theta), target)``.

    The generator inherits the skill's timescale unless ``timescale`` overrides it.
    """
    stamp = skill.timescale if timescale is None else float(timescale)
    stamped = dataclasses.replace(skill, timescale=stamp)
    return Generator(name or egen.name, target.active_factors, egen.domain,
                     lambda theta: compose_policy(stamped, egen.embedding(theta), target), stamp)


class SkillsRegistry:
    """Append-only name-to-skill table, seeded with the identity skill."""

    def __init__(self) -> None:
        self._entries: dict[str, Skill] = {IDENTITY: identity_skill()}

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def add(self, name: str, skill: Skill) -> None:
        if name in self._entries:
            raise DuplicateName(f"skill {name!r} is already registered")
        self._entries[name] = dataclasses.replace(skill, name=name)

    def get(self, name: str) -> Skill:
        try:
            return self._entries[name]
        except KeyError:
            raise UnknownSkill(f"no skill named {name!r}") from None

    def snapshot(self) -> dict:
        return {name: skill.to_dict() for name, skill in self._entries.items()}


def registry_add(registry: SkillsRegistry, name: str, skill: Skill) -> None:
    registry.add(name, skill)


def registry_get(registry: SkillsRegistry, name: str) -> Skill:
    return registry.get(name)
