import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlmdp.errors import DuplicateName, InconsistentEmbedding, UnknownSkill, UnknownToken
from mlmdp.mdp import BLOCKED, END, ActionSet, Policy
from mlmdp.transfer import (
    Embedding,
    EmbeddingGenerator,
    PolicyTarget,
    Skill,
    SkillsRegistry,
    compose_generator,
    compose_policy,
    decode_token,
    decompose,
    encode_token,
    identity_skill,
    registry_add,
    registry_get,
)


def moves(n_states=3):
    return ActionSet.single_factor(["left", "right", "pick"], n_states)


def full_pairs(actions: ActionSet):
    return [(s, a) for s in range(actions.n_states) for a in range(actions.n_actions)]


def identity_embedding(actions: ActionSet) -> Embedding:
    return Embedding.from_function("ident", actions.actions, full_pairs(actions),
                                   lambda s, a: (s, actions.actions[a][0]))


def indicator_embedding(actions: ActionSet, symbol: str) -> Embedding:
    return Embedding.from_function(symbol, actions.actions, full_pairs(actions),
                                   lambda s, a: int(actions.actions[a][0] == symbol))


def test_identity_skill_and_indicator_embedding_give_an_indicator_policy():
    actions = moves()
    partial = compose_policy(identity_skill(), indicator_embedding(actions, "pick"), PolicyTarget.full(actions))
    dense = partial.dense()
    assert dense[:, actions.index[("pick",)]].tolist() == [1.0, 1.0, 1.0]
    assert dense.sum() == 3.0
    assert partial.timescale == 1.0


def test_zero_mass_rows_fall_back_to_end():
    actions = moves()
    skill = Skill("never", {0: 0.0, 1: 0.0})
    dense = compose_policy(skill, indicator_embedding(actions, "pick"), PolicyTarget.full(actions)).dense()
    assert dense[:, actions.all_end_index].tolist() == [1.0, 1.0, 1.0]


def test_pairs_outside_the_domain_get_no_mass():
    actions = moves(2)
    # only "left" at state 0 and "right" at state 1 are in the domain
    emb = Embedding("part", actions.actions, np.array([0, 1]), np.array([0, 1]), (1, 1))
    dense = compose_policy(identity_skill(), emb, PolicyTarget.full(actions)).dense()
    assert dense.tolist() == [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]


def test_unknown_token_is_reported():
    actions = moves()
    with pytest.raises(UnknownToken):
        compose_policy(Skill("short", {0: 0.0}), indicator_embedding(actions, "pick"), PolicyTarget.full(actions))


def test_conflicting_values_under_one_token():
    actions = ActionSet.single_factor(["go"], 2)
    policy = Policy.deterministic(np.array([0, 1]), actions)
    emb = Embedding("same", actions.actions, np.array([0, 1]), np.array([0, 0]), ("x", "x"))
    with pytest.raises(InconsistentEmbedding):
        decompose(policy, emb)


def test_identity_decomposition_copies_the_table():
    actions = moves(2)
    policy = Policy.from_dense(np.array([[0.25, 0.75, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]]), actions, timescale=7.0)
    skill = decompose(policy, identity_embedding(actions), name="copy")
    assert skill.table[(0, "right")] == 0.75
    assert skill.table[(1, END)] == 1.0
    assert skill.name == "copy" and skill.timescale == 7.0
    assert decompose(policy, identity_embedding(actions), t_bounds=(1.0, 5.0)).timescale == 5.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n_states=st.integers(1, 6))
def test_round_trip_on_the_domain(seed, n_states):
    rng = np.random.default_rng(seed)
    actions = moves(n_states)
    policy = Policy.from_dense(rng.dirichlet(np.ones(actions.n_actions), size=n_states), actions, timescale=3.0)
    emb = identity_embedding(actions)
    rebuilt = compose_policy(decompose(policy, emb), emb, PolicyTarget.full(actions))
    np.testing.assert_allclose(rebuilt.dense(), policy.dense(), atol=1e-12, rtol=0)
    assert rebuilt.timescale == 3.0
    np.testing.assert_allclose(rebuilt.dense().sum(axis=1), 1.0, atol=1e-12)


def two_factor_actions():
    factors = (("n", "s", END), ("mc", "car", END))
    tuples = list(itertools.product(*factors))
    return ActionSet(factors, tuples, np.ones((2, len(tuples)), bool))


def test_partial_target_uses_blocked_columns():
    actions = two_factor_actions()
    target = PolicyTarget(actions, (1,))
    assert target.columns == ((BLOCKED, "mc"), (BLOCKED, "car"), (BLOCKED, END))
    emb = Embedding.from_function("car", target.columns, [(s, a) for s in range(2) for a in range(3)],
                                  lambda s, a: int(target.columns[a][1] == "car"))
    partial = compose_policy(identity_skill(), emb, target)
    assert partial.active_factors == (1,)
    assert partial.dense().tolist() == [[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]


def test_generator_inherits_or_overrides_the_timescale():
    actions = moves()
    egen = EmbeddingGenerator("alpha", ("left", "pick"), lambda theta: indicator_embedding(actions, theta))
    target = PolicyTarget.full(actions)
    gen = compose_generator(identity_skill(), egen, target)
    assert gen.timescale == 1.0 and gen.domain == ("left", "pick")
    assert gen.policy("left").dense()[0, 0] == 1.0
    slow = compose_generator(identity_skill(), egen, target, timescale=math.inf, name="means")
    assert slow.name == "means" and slow.policy("pick").timescale == math.inf


def test_registry_semantics():
    registry = SkillsRegistry()
    assert registry.names() == ["id"]
    skill = Skill("tmp", {"a": 0.5})
    registry_add(registry, "nav", skill)
    assert registry_get(registry, "nav").table == {"a": 0.5}
    assert registry_get(registry, "nav").name == "nav"
    with pytest.raises(DuplicateName):
        registry_add(registry, "nav", skill)
    with pytest.raises(UnknownSkill):
        registry_get(registry, "concat")


def test_skill_serialization_round_trip():
    skill = Skill("nav", {((1, 2), (3, 4), "up"): 1.0, ((1, 2), (3, 4), "left"): 0.0}, math.inf)
    back = Skill.from_dict(skill.to_dict())
    assert back.table == skill.table and back.timescale == math.inf
    assert decode_token(encode_token(((1, 2), "x", 0))) == ((1, 2), "x", 0)


def test_skill_values_must_be_probabilities():
    with pytest.raises(ValueError):
        Skill("bad", {0: 1.5})
