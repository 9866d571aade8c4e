import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlmdp.errors import EmptyFactorCover, NoFactorCover, OverlappingFactors, VocabularyMismatch
from mlmdp.mdp import BLOCKED, END, NULL, ActionSet, Policy
from mlmdp.policies import (
    Generator,
    GeneratorSet,
    PartialPolicy,
    convolve,
    enumerate_policies,
    outer_product,
    refine_chain,
)

DIRS = ("up", "down", "left", "right")
MEANS = ("mc", "car")


def traffic_actions(n_states: int = 3) -> ActionSet:
    factors = (DIRS + (END,), MEANS + (END,))
    tuples = list(itertools.product(factors[0], factors[1]))
    return ActionSet(factors, tuples, np.ones((n_states, len(tuples)), bool))


def maze_actions(n_states: int = 4) -> ActionSet:
    return ActionSet.single_factor(DIRS + ("pick", "open"), n_states)


def point_partial(aset: ActionSet, factor: int, symbol: str, timescale=math.inf) -> PartialPolicy:
    partial_actions = aset.projection([factor])
    dense = np.zeros((aset.n_states, len(partial_actions)))
    target = tuple(symbol if k == factor else BLOCKED for k in range(len(aset.factors)))
    dense[:, partial_actions.index(target)] = 1.0
    return PartialPolicy.from_dense((factor,), partial_actions, dense, timescale)


def test_single_partial_covering_everything_is_unchanged():
    aset = maze_actions()
    rng = np.random.default_rng(0)
    dense = rng.dirichlet(np.ones(aset.n_actions), size=aset.n_states)
    partial = PartialPolicy.from_dense((0,), aset.projection([0]), dense, 5.0)
    policy = outer_product([partial], aset)
    np.testing.assert_allclose(policy.dense(), dense, atol=1e-15)
    assert policy.timescale == 5.0


def test_direction_times_means_is_a_point_mass():
    aset = traffic_actions()
    policy = outer_product([point_partial(aset, 0, "right"), point_partial(aset, 1, "mc", 7.0)], aset)
    expected = np.zeros((aset.n_states, aset.n_actions))
    expected[:, aset.index[("right", "mc")]] = 1.0
    np.testing.assert_array_equal(policy.dense(), expected)
    assert policy.timescale == 7.0


def test_uniform_partials_give_uniform_product():
    factors = (("x", "y", END), ("p", "q", END))
    tuples = list(itertools.product(*factors))
    aset = ActionSet(factors, tuples, np.ones((2, len(tuples)), bool))
    partials = []
    for k, symbols in enumerate((("x", "y"), ("p", "q"))):
        acts = aset.projection([k])
        dense = np.zeros((2, len(acts)))
        for sym in symbols:
            dense[:, acts.index(tuple(sym if j == k else BLOCKED for j in range(2)))] = 0.5
        partials.append(PartialPolicy.from_dense((k,), acts, dense, math.inf))
    policy = outer_product(partials, aset).dense()
    # exhaustive 4-tuple product: every non-end pair gets 1/4
    for a, t in enumerate(aset.actions):
        assert policy[0, a] == pytest.approx(0.25 if END not in t else 0.0)


def test_outer_product_rejects_bad_covers():
    aset = traffic_actions()
    with pytest.raises(OverlappingFactors):
        outer_product([point_partial(aset, 0, "up"), point_partial(aset, 0, "down")], aset)
    with pytest.raises(EmptyFactorCover):
        outer_product([point_partial(aset, 0, "up")], aset)
    with pytest.raises(EmptyFactorCover):
        outer_product([], aset)


def test_restriction_renormalizes_and_falls_back_to_all_end():
    available = np.ones((2, 7), bool)
    available[0, 0] = False  # "up" blocked at state 0
    available[1, :2] = False  # "up", "down" blocked at state 1
    aset = ActionSet.single_factor(DIRS + ("pick", "open"), 2, available)
    acts = aset.projection([0])
    dense = np.zeros((2, len(acts)))
    dense[:, 0] = 0.5
    dense[:, 1] = 0.5
    policy = outer_product([PartialPolicy.from_dense((0,), acts, dense, math.inf)], aset).dense()
    assert policy[0, 1] == 1.0
    assert policy[1, aset.all_end_index] == 1.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_outer_product_is_order_independent(seed):
    rng = np.random.default_rng(seed)
    aset = traffic_actions(4)
    partials = []
    for k in (0, 1):
        acts = aset.projection([k])
        dense = rng.dirichlet(np.ones(len(acts)), size=aset.n_states)
        partials.append(PartialPolicy.from_dense((k,), acts, dense, float(rng.integers(1, 9))))
    forward = outer_product(partials, aset)
    backward = outer_product(partials[::-1], aset)
    assert np.array_equal(forward.dense(), backward.dense())
    assert forward.timescale == backward.timescale
    np.testing.assert_allclose(forward.dense().sum(axis=1), 1.0, atol=1e-12)


def indicator_generator(aset: ActionSet, name: str, symbols, timescale: float) -> Generator:
    return Generator(name, (0,), tuple(symbols), lambda theta: point_partial(aset, 0, theta, timescale), timescale)


def maze_generator_set(aset: ActionSet) -> GeneratorSet:
    alpha = indicator_generator(aset, "alpha", ("pick", "open"), 1.0)
    beta = indicator_generator(aset, "beta", ("up", "right"), math.inf)
    return GeneratorSet((alpha, beta))


def test_enumeration_of_two_single_factor_generators():
    aset = maze_actions()
    vocab = enumerate_policies(maze_generator_set(aset), aset)
    params = [pv for pv, _ in vocab]
    assert params == [("pick", NULL), ("open", NULL), (NULL, "up"), (NULL, "right")]
    assert len(vocab.end_params) == 3 * 3 - 4
    assert (END, END) in vocab.end_params
    assert all(NULL not in pv for pv in vocab.end_params)
    pick = vocab.decode(("pick", NULL))
    assert pick.timescale == 1.0
    assert pick.dense()[0, aset.index[("pick",)]] == 1.0


def test_empty_generator_set_returns_base_actions():
    aset = maze_actions()
    vocab = enumerate_policies(GeneratorSet(()), aset)
    assert [pv for pv, _ in vocab] == list(aset.actions[: aset.n_nonend])
    assert vocab.end_params == aset.actions[aset.n_nonend:]
    for pv, policy in vocab:
        assert policy.timescale == 1.0
        assert policy.dense()[0, aset.index[pv]] == 1.0


def test_no_cover_is_reported():
    aset = traffic_actions()
    only_dir = Generator("dir", (0,), ("up",), lambda t: point_partial(aset, 0, t), math.inf)
    with pytest.raises(NoFactorCover):
        enumerate_policies(GeneratorSet((only_dir,)), aset)


def test_duplicates_keep_the_smallest_parameter_vector():
    aset = traffic_actions()
    light = Generator("light", (0,), ("up",), lambda t: point_partial(aset, 0, t), math.inf)
    heavy = Generator("heavy", (0,), ("up",), lambda t: point_partial(aset, 0, t), math.inf)
    means = Generator("means", (1,), MEANS, lambda t: point_partial(aset, 1, t), math.inf)
    vocab = enumerate_policies(GeneratorSet((light, heavy, means)), aset)
    assert [pv for pv, _ in vocab] == [("up", NULL, "mc"), ("up", NULL, "car")]
    # end-augmented vocabulary: 2*2*3 tuples minus the 1*1*2 all-parameter tuples
    assert len(vocab.end_params) == 12 - 2


def test_traffic_vocabulary_has_nineteen_end_tuples():
    aset = traffic_actions()
    gens = [Generator(n, (0,), ("p", "q"), lambda t: point_partial(aset, 0, "up" if t == "p" else "down"),
                      math.inf) for n in ("light", "heavy")]
    gens.append(Generator("means", (1,), MEANS, lambda t: point_partial(aset, 1, t), math.inf))
    vocab = enumerate_policies(GeneratorSet(tuple(gens)), aset)
    assert len(vocab.end_params) == 3 ** 3 - 2 ** 3
    # heavy duplicates light: only four distinct non-end policies survive
    assert len(vocab) == 4


def test_round_trip_encode_decode():
    aset = maze_actions()
    vocab = enumerate_policies(maze_generator_set(aset), aset)
    for pv, policy in vocab:
        assert vocab.encode(policy) == pv
        assert vocab.decode(pv) is policy


def higher_actions(vocab, n_states):
    tuples = vocab.next_action_tuples()
    return ActionSet(vocab.factors, tuples, np.ones((n_states, len(tuples)), bool))


def test_degenerate_convolution_reproduces_the_selected_policy():
    aset = maze_actions()
    vocab = enumerate_policies(maze_generator_set(aset), aset)
    upper = higher_actions(vocab, aset.n_states)
    choice = np.full(aset.n_states, upper.index[(NULL, "right")])
    result = convolve(Policy.deterministic(choice, upper), vocab)
    np.testing.assert_array_equal(result.dense(), vocab.decode((NULL, "right")).dense())


def test_uniform_mixture_of_two_policies():
    aset = maze_actions()
    vocab = enumerate_policies(maze_generator_set(aset), aset)
    upper = higher_actions(vocab, aset.n_states)
    dense = np.zeros((aset.n_states, upper.n_actions))
    dense[:, upper.index[("pick", NULL)]] = 0.5
    dense[:, upper.index[(NULL, "up")]] = 0.5
    result = convolve(Policy.from_dense(dense, upper), vocab).dense()
    assert result[0, aset.index[("pick",)]] == 0.5
    assert result[0, aset.index[("up",)]] == 0.5


def test_end_selection_maps_to_the_all_end_tuple_and_terminal_rows_are_forced():
    aset = maze_actions()
    vocab = enumerate_policies(maze_generator_set(aset), aset)
    upper = higher_actions(vocab, aset.n_states)
    choice = np.full(aset.n_states, upper.index[("pick", END)])
    choice[1] = upper.index[("open", NULL)]
    terminal = np.array([False, True, False, False])
    result = convolve(Policy.deterministic(choice, upper), vocab, terminal_mask=terminal).dense()
    assert np.all(result[:, aset.all_end_index] == 1.0)


def test_vocabulary_mismatch():
    aset = maze_actions()
    vocab = enumerate_policies(maze_generator_set(aset), aset)
    wrong = ActionSet.single_factor(["a"], aset.n_states)
    with pytest.raises(VocabularyMismatch):
        convolve(Policy.all_end(wrong), vocab)


def test_refine_chain_folds_convolution():
    aset = maze_actions()
    vocab1 = enumerate_policies(maze_generator_set(aset), aset)
    level2 = higher_actions(vocab1, aset.n_states)
    # second level: one generator selecting "go up" among level-2 actions
    acts2 = level2.projection([0, 1])

    def produce(theta):
        dense = np.zeros((aset.n_states, len(acts2)))
        dense[:, acts2.index((NULL, "up"))] = 1.0
        return PartialPolicy.from_dense((0, 1), acts2, dense, math.inf)

    vocab2 = enumerate_policies(GeneratorSet((Generator("top", (0, 1), ("go",), produce, math.inf),)), level2)
    level3 = higher_actions(vocab2, aset.n_states)
    top = Policy.deterministic(np.zeros(aset.n_states, int), level3)
    bottom = refine_chain(top, [vocab1, vocab2])
    assert bottom.is_deterministic()
    assert np.all(bottom.dense()[:, aset.index[("up",)]] == 1.0)
    single = refine_chain(Policy.deterministic(np.zeros(aset.n_states, int), level2), [vocab1])
    np.testing.assert_array_equal(single.dense(), convolve(Policy.deterministic(
        np.zeros(aset.n_states, int), level2), vocab1).dense())
