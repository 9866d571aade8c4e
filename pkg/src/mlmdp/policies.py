"""Partial policies over factor subsets, policy generators, and vocabulary enumeration.

A generator owns a set of action factors and maps each parameter in its
domain to a partial policy over those factors.  Selecting generators that
cover every factor exactly once, one parameter each, and taking the outer
product yields a full policy.  The enumerated policies become the actions of
the next level, named by parameter vectors with one coordinate per generator
(a parameter, ``END``, or ``NULL`` for generators that are not selected).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyFactorCover, NoFactorCover, OverlappingFactors, VocabularyMismatch
from .mdp import BLOCKED, END, NULL, ROW_TOLERANCE, ActionSet, Policy

ParamVector = tuple[str, ...]

DEDUP_TOLERANCE = 1e-12


class PartialPolicy:
    """Distribution over the projection of the action tuples onto ``active_factors``.

    ``actions`` lists partial tuples with ``BLOCKED`` in every inactive coordinate.
    """

    def __init__(self, active_factors: Sequence[int], actions: Sequence[tuple], probabilities,
                 timescale: float = math.inf):
        self.active_factors = tuple(sorted(active_factors))
        self.actions = tuple(tuple(a) for a in actions)
        matrix = sp.csr_matrix(probabilities, dtype=float)
        matrix.eliminate_zeros()
        self.matrix = matrix
        self.timescale = float(timescale)
        active = set(self.active_factors)
        for a in self.actions:
            if any((x == BLOCKED) == (k in active) for k, x in enumerate(a)):
                raise ValueError(f"partial tuple {a!r} does not match active factors {self.active_factors}")
        if matrix.shape[1] != len(self.actions):
            raise ValueError("probability columns do not match the partial actions")
        sums = np.asarray(matrix.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > ROW_TOLERANCE):
            raise ValueError("partial policy rows must sum to one")
        if not self.timescale >= 1:
            raise ValueError("timescale must be at least one")

    @classmethod
    def from_dense(cls, active_factors: Sequence[int], actions: Sequence[tuple], dense,
                   timescale: float = math.inf) -> "PartialPolicy":
        return cls(active_factors, actions, sp.csr_matrix(np.asarray(dense, dtype=float)), timescale)

    @classmethod
    def from_policy(cls, policy: Policy) -> "PartialPolicy":
        """A full policy seen as a partial policy over every factor."""
        return cls(range(len(policy.actions.factors)), policy.actions.actions, policy.matrix, policy.timescale)

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def outer_product(partials: Sequence[PartialPolicy], actions: ActionSet) -> Policy:
    """Product of partial policies covering every factor, restricted to available actions.

    Rows left without mass after the restriction fall back to the all-end tuple.
    The result's timescale is the smallest input timescale.
    """
    n_factors = len(actions.factors)
    seen: set[int] = set()
    for p in partials:
        overlap = seen.intersection(p.active_factors)
        if overlap:
            raise OverlappingFactors(f"factors {sorted(overlap)} are claimed twice")
        seen.update(p.active_factors)
    if seen != set(range(n_factors)):
        raise EmptyFactorCover(f"factors {sorted(set(range(n_factors)) - seen)} are not covered")
    # fixed multiplication order keeps the product bit-identical under permutation
    ordered = sorted(partials, key=lambda p: p.active_factors)
    product = np.ones((actions.n_states, actions.n_actions))
    for p in ordered:
        keep = set(p.active_factors)
        lookup = {a: i for i, a in enumerate(p.actions)}
        columns = np.array([lookup.get(tuple(x if k in keep else BLOCKED for k, x in enumerate(a)), -1)
                            for a in actions.actions])
        dense = np.hstack([p.dense(), np.zeros((p.n_states, 1))])
        product *= dense[:, columns]
    product[~actions.available] = 0.0
    totals = product.sum(axis=1)
    empty = totals <= 0.0
    product[~empty] /= totals[~empty, None]
    product[empty] = 0.0
    product[empty, actions.all_end_index] = 1.0
    return Policy.from_dense(product, actions, min((p.timescale for p in partials), default=math.inf))


@dataclass(eq=False)
class Generator:
    """Named map from parameters to partial policies over fixed factors."""

    name: str
    active_factors: tuple[int, ...]
    domain: tuple[str, ...]
    produce: Callable[[str], PartialPolicy]
    timescale: float = math.inf
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.active_factors = tuple(sorted(self.active_factors))
        self.domain = tuple(self.domain)
        if len(set(self.domain)) != len(self.domain) or {END, NULL} & set(self.domain):
            raise ValueError(f"generator {self.name!r} has an invalid parameter domain")
        if not self.active_factors:
            raise ValueError(f"generator {self.name!r} has no active factors")

    def policy(self, theta: str) -> PartialPolicy:
        if theta not in self.domain:
            raise KeyError(f"{theta!r} is not a parameter of generator {self.name!r}")
        if theta not in self._cache:
            partial = self.produce(theta)
            if partial.active_factors != self.active_factors:
                raise ValueError(f"generator {self.name!r} produced a policy over the wrong factors")
            if partial.timescale != self.timescale:
                partial = PartialPolicy(partial.active_factors, partial.actions, partial.matrix, self.timescale)
            self._cache[theta] = partial
        return self._cache[theta]

    def rank(self, symbol: str) -> int:
        """Ordering of one parameter-vector coordinate: domain order, then end, then null."""
        if symbol == END:
            return len(self.domain)
        if symbol == NULL:
            return len(self.domain) + 1
        return self.domain.index(symbol)


@dataclass(frozen=True)
class GeneratorSet:
    generators: tuple[Generator, ...]

    def __post_init__(self) -> None:
        names = [g.name for g in self.generators]
        if len(set(names)) != len(names):
            raise ValueError("generator names must be unique")

    def __len__(self) -> int:
        return len(self.generators)

    def key(self, params: ParamVector) -> tuple[int, ...]:
        return tuple(g.rank(x) for g, x in zip(self.generators, params))

    def factor_alphabets(self) -> tuple[tuple[str, ...], ...]:
        return tuple(g.domain + (END, NULL) for g in self.generators)


@dataclass(eq=False)
class Vocabulary:
    """Enumerated policies of one level, which become the next level's actions."""

    entries: tuple[tuple[ParamVector, Policy], ...]
    end_params: tuple[ParamVector, ...]
    factors: tuple[tuple[str, ...], ...]
    lower_actions: ActionSet
    aliases: dict = field(default_factory=dict, repr=False)

    def __iter__(self) -> Iterator[tuple[ParamVector, Policy]]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def params(self) -> list[ParamVector]:
        return [pv for pv, _ in self.entries]

    def policies(self) -> list[Policy]:
        return [p for _, p in self.entries]

    def next_action_tuples(self) -> list[ParamVector]:
        """Non-end parameter vectors followed by the end-augmented ones."""
        return self.params() + list(self.end_params)

    def decode(self, params: ParamVector) -> Policy:
        params = tuple(params)
        target = self.aliases.get(params, params)
        for pv, policy in self.entries:
            if pv == target:
                return policy
        raise KeyError(f"{params!r} is not in the vocabulary")

    def encode(self, policy: Policy) -> ParamVector:
        dense = policy.dense()
        for pv, candidate in self.entries:
            if candidate.timescale == policy.timescale and _same_table(candidate.dense(), dense):
                return pv
        raise KeyError("policy is not in the vocabulary")


def _same_table(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.all(np.abs(a - b) <= DEDUP_TOLERANCE))


def _exact_covers(generators: Sequence[Generator], n_factors: int) -> list[tuple[int, ...]]:
    """Index subsets of ``generators`` whose active factors partition all factors."""
    covers: list[tuple[int, ...]] = []

    def extend(start: int, chosen: tuple[int, ...], used: frozenset) -> None:
        if len(used) == n_factors:
            covers.append(chosen)
            return
        for i in range(start, len(generators)):
            factors = set(generators[i].active_factors)
            if not factors & used:
                extend(i + 1, chosen + (i,), used | factors)

    extend(0, (), frozenset())
    return covers


def base_vocabulary(actions: ActionSet) -> Vocabulary:
    """One-step selectors for each non-end base action (all-end where it is unavailable)."""
    entries = []
    for j in range(actions.n_nonend):
        choice = np.where(actions.available[:, j], j, actions.all_end_index)
        entries.append((actions.actions[j], Policy.deterministic(choice, actions, timescale=1.0)))
    return Vocabulary(tuple(entries), tuple(actions.actions[actions.n_nonend:]), actions.factors, actions)


def enumerate_policies(gset: GeneratorSet, actions: ActionSet) -> Vocabulary:
    """All distinct full policies expressible by the generator set.

    Duplicate tables (within 1e-12 and with equal timescale) keep the smallest
    parameter vector.  Entries and end tuples are sorted by parameter vector.
    """
    if not len(gset):
        return base_vocabulary(actions)
    gens = gset.generators
    covers = _exact_covers(gens, len(actions.factors))
    if not covers:
        raise NoFactorCover("no subset of generators covers every action factor exactly once")
    candidates: list[tuple[ParamVector, Policy]] = []
    for cover in covers:
        for thetas in itertools.product(*(gens[i].domain for i in cover)):
            params = [NULL] * len(gens)
            for i, theta in zip(cover, thetas):
                params[i] = theta
            policy = outer_product([gens[i].policy(t) for i, t in zip(cover, thetas)], actions)
            candidates.append((tuple(params), policy))
    candidates.sort(key=lambda item: gset.key(item[0]))
    kept: list[tuple[ParamVector, Policy, np.ndarray]] = []
    aliases: dict[ParamVector, ParamVector] = {}
    for pv, policy in candidates:
        dense = policy.dense()
        match = next((k for k in kept if k[1].timescale == policy.timescale and _same_table(k[2], dense)), None)
        if match is None:
            kept.append((pv, policy, dense))
        else:
            aliases[pv] = match[0]
    with_end = [g.domain + (END,) for g in gens]
    end_params = sorted((pv for pv in itertools.product(*with_end) if END in pv), key=gset.key)
    return Vocabulary(tuple((pv, p) for pv, p, _ in kept), tuple(end_params), gset.factor_alphabets(), actions,
                      aliases)


def convolve(higher: Policy, vocabulary: Vocabulary, terminal_mask: np.ndarray | None = None) -> Policy:
    """Lower-level policy obtained by mixing vocabulary policies with ``higher``'s weights.

    Mass on end-augmented tuples maps to the lower all-end tuple.  Rows flagged by
    ``terminal_mask`` are forced to the all-end tuple.
    """
    expected = tuple(vocabulary.next_action_tuples())
    if higher.actions.actions != expected or higher.actions.factors != vocabulary.factors:
        raise VocabularyMismatch("policy actions do not match the vocabulary's parameter vectors")
    lower = vocabulary.lower_actions
    n = lower.n_states
    if higher.actions.n_states != n:
        raise VocabularyMismatch("policy and vocabulary cover different state spaces")
    weights = higher.matrix.tocsc()
    result = sp.csr_matrix((n, lower.n_actions))
    timescale = math.inf
    for k, (_, policy) in enumerate(vocabulary.entries):
        column = weights[:, k].toarray().ravel()
        if not column.any():
            continue
        result = result + sp.diags(column) @ policy.matrix
        timescale = min(timescale, policy.timescale)
    end_mass = higher.end_mass()
    end_part = sp.csr_matrix((end_mass, (np.arange(n), np.full(n, lower.all_end_index))), shape=result.shape)
    result = (result + end_part).tocsr()
    if terminal_mask is not None and np.any(terminal_mask):
        keep = sp.diags((~np.asarray(terminal_mask)).astype(float))
        forced = np.asarray(terminal_mask, dtype=float)
        result = (keep @ result).tocsr() + sp.csr_matrix(
            (forced, (np.arange(n), np.full(n, lower.all_end_index))), shape=result.shape)
    return Policy(result, lower, timescale)


def refine_chain(top: Policy, vocabularies: Sequence[Vocabulary], terminal_mask: np.ndarray | None = None) -> Policy:
    """Convolve a top-level policy down through vocabularies listed bottom level first."""
    policy = top
    for vocabulary in reversed(vocabularies):
        policy = convolve(policy, vocabulary, terminal_mask)
    return policy
