import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import make_corridor_mdp, random_mdp
from mlmdp.errors import Unbounded
from mlmdp.mdp import ActionSet, StateSpace, TransitionTable, build_mdp
from mlmdp.solver import (
    SolveConfig,
    bellman_update,
    bound_trace,
    iteration_bound,
    local_update_bounds,
    optimal_actions,
    propagate_bounds,
    reference_values,
    transfer_savings_report,
    value_iterate,
)


def two_state(records, names=("a", "t"), symbols=("stay",), end_penalty=-10.0, initial=(0,), terminal=(1,)):
    space = StateSpace(names, initial=initial, terminal=terminal)
    actions = ActionSet.single_factor(symbols, n_states=len(names))
    return build_mdp(space, actions, TransitionTable.from_records(records), end_penalty)


def test_chain_converges_after_one_update(chain_mdp):
    result = value_iterate(chain_mdp)
    assert result.values.tolist() == [-1.0, 0.0]
    assert result.stats.iterations == 1
    assert result.stats.sweeps == 2
    assert result.stats.mean_initial_value == -1.0
    assert not result.error_flag.exists
    assert result.policy.dense()[1, chain_mdp.actions.all_end_index] == 1.0


def test_only_end_actions_forces_the_penalty():
    space = StateSpace(("x",), initial=[0], terminal=[])
    mdp = build_mdp(space, ActionSet.single_factor([], 1), TransitionTable.empty(), -10.0)
    result = value_iterate(mdp)
    assert result.values.tolist() == [-10.0]


def test_terminal_values_stay_pinned(chain_mdp):
    result = value_iterate(chain_mdp, init_values=np.array([5.0, 123.0]), record=True)
    assert all(v[1] == 0.0 for v in result.value_trace)


def test_greedy_tie_break_prefers_smallest_index_and_all_end():
    records = [(0, 0, 1, 1.0, -1.0, 1.0), (0, 1, 1, 1.0, -1.0 + 5e-4, 1.0), (1, 0, 1, 1, 0, 1), (1, 1, 1, 1, 0, 1)]
    mdp = two_state(records, symbols=("a", "b"))
    result = value_iterate(mdp)
    # "b" is better by less than the tie tolerance, so "a" wins
    assert result.policy.argmax()[0] == 0
    exact = value_iterate(mdp, cfg=SolveConfig(tie_tolerance=0.0))
    assert exact.policy.argmax()[0] == 1

    factors = (("u", "end"), ("m", "end"))
    tuples = list(itertools.product(*factors))
    aset = ActionSet(factors, tuples, np.ones((1, 4), bool))
    space = StateSpace(("x",), initial=[0], terminal=[])
    tie = build_mdp(space, aset, TransitionTable.from_records([(0, 0, 0, 1.0, -100.0, 0.5)]), -10.0)
    assert value_iterate(tie).policy.argmax()[0] == aset.all_end_index


def test_stats_average_over_initial_states():
    mdp = make_corridor_mdp(3, step_reward=-1.0, bonus=0.0).restrict_initial([0, 2])
    result = value_iterate(mdp)
    assert result.values[:3].tolist() == [-3.0, -2.0, -1.0]
    assert result.stats.mean_initial_value == pytest.approx(-2.0)
    assert result.stats.episode_length == math.inf


def test_error_flag_on_iteration_threshold():
    mdp = make_corridor_mdp(6, step_reward=-1.0, bonus=0.0, success=0.5)
    result = value_iterate(mdp, cfg=SolveConfig(n_max=3))
    assert result.error_flag.exists
    clean = value_iterate(mdp, cfg=SolveConfig(v_min=-100.0))
    assert not clean.error_flag.exists
    low = value_iterate(mdp, cfg=SolveConfig(v_min=-1.0))
    assert low.error_flag.exists


def test_episode_length_when_timescale_bounds_are_open():
    mdp = make_corridor_mdp(4, step_reward=-1.0, bonus=0.0, success=0.5)
    result = value_iterate(mdp, t_bounds=(1.0, 100.0))
    assert result.stats.episode_length == pytest.approx(8.0, abs=1e-6)


def brute_force_optimum(mdp):
    """Best value per state over every deterministic policy, by direct linear solves."""
    n = mdp.n_states
    choices = [np.flatnonzero(mdp.actions.available[s]) for s in range(n)]
    best = np.full(n, -np.inf)
    for combo in itertools.product(*choices):
        m = np.zeros((n, n))
        r = np.zeros(n)
        for s, a in enumerate(combo):
            if mdp.space.terminal_mask[s]:
                continue
            probs, rewards, discounts = mdp.row(s, a)
            for t, p in probs.items():
                r[s] += p * rewards[t]
                if not mdp.actions.end_mask[a]:
                    m[s, t] += p * discounts[t]
        best = np.maximum(best, np.linalg.solve(np.eye(n) - m, r))
    return best


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n_states=st.integers(2, 4), n_actions=st.integers(1, 2))
def test_value_iteration_matches_exhaustive_policy_search(seed, n_states, n_actions):
    mdp = random_mdp(np.random.default_rng(seed), n_states, n_actions)
    result = value_iterate(mdp, cfg=SolveConfig(epsilon=1e-10))
    np.testing.assert_allclose(result.values, brute_force_optimum(mdp), atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n_states=st.integers(2, 5))
def test_bellman_update_is_monotone(seed, n_states):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states, 2)
    low = rng.uniform(-10, 10, n_states)
    high = low + rng.uniform(0, 5, n_states)
    assert np.all(bellman_update(mdp, low)[0] <= bellman_update(mdp, high)[0] + 1e-12)


def test_zero_error_is_a_fixed_point(chain_mdp):
    v_star = reference_values(chain_mdp)
    zeros = np.zeros(2)
    actions = optimal_actions(chain_mdp, v_star)
    fine_min, fine_max, coarse_min, coarse_max = propagate_bounds(chain_mdp, v_star, zeros, zeros, actions)
    for arr in (fine_min, fine_max, coarse_min, coarse_max):
        assert arr.tolist() == [0.0, 0.0]


def test_constant_discount_contracts_the_bound():
    gamma = 0.8
    mdp = make_corridor_mdp(4, step_reward=-1.0, bonus=0.0, success=0.7, discount=gamma)
    v_star = reference_values(mdp)
    actions = optimal_actions(mdp, v_star)
    c = np.where(mdp.space.terminal_mask, 0.0, 3.0)
    _, _, coarse_min, coarse_max = propagate_bounds(mdp, v_star, -c, c, actions)
    assert np.all(np.abs(coarse_min) <= gamma * 3.0 + 1e-15)
    assert np.all(np.abs(coarse_max) <= gamma * 3.0 + 1e-15)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n_states=st.integers(2, 6), n_actions=st.integers(1, 3))
def test_lemma_bounds_contain_the_actual_error(seed, n_states, n_actions):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states, n_actions)
    init = np.where(mdp.space.terminal_mask, 0.0, rng.uniform(-20, 20, n_states))
    result = value_iterate(mdp, init_values=init, record=True, cfg=SolveConfig(epsilon=1e-9))
    trace = bound_trace(mdp, result, reference_values(mdp))
    for lo, hi, actual, c_lo, c_hi in zip(trace.err_min, trace.err_max, trace.actual, trace.coarse_min,
                                          trace.coarse_max):
        assert np.all(lo - 1e-8 <= actual) and np.all(actual <= hi + 1e-8)
        assert np.all(lo <= hi + 1e-12)
        # the coarse bounds always contain the fine ones
        assert np.all(c_lo <= lo + 1e-12) and np.all(hi <= c_hi + 1e-12)


def reward_loop(gamma):
    records = [(0, 0, 0, 1.0, 1.0, gamma), (1, 0, 1, 1.0, 0.0, 1.0)]
    return two_state(records)


def test_iteration_bound_closed_form():
    mdp = reward_loop(0.999)
    v_star = reference_values(mdp)
    assert v_star[0] == pytest.approx(1000.0, abs=1e-6)
    ones = np.array([1.0, 0.0])
    n, n_prime = iteration_bound(mdp, ones, ones, 1e-3, v_star)
    assert n_prime == math.ceil(math.log(1e-3) / math.log(0.999)) == 6905
    assert n == 6905


def test_zero_initial_error_needs_no_iterations(chain_mdp):
    zeros = np.zeros(2)
    n, n_prime = iteration_bound(chain_mdp, zeros, zeros, 1e-6, reference_values(chain_mdp))
    assert n == 0 and n_prime == 0


def test_undiscounted_loop_is_unbounded():
    mdp = two_state([(0, 0, 0, 1.0, 0.0, 1.0), (1, 0, 1, 1.0, 0.0, 1.0)])
    v_star = reference_values(mdp)
    ones = np.array([1.0, 0.0])
    with pytest.raises(Unbounded):
        iteration_bound(mdp, ones, ones, 1e-3, v_star)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n_states=st.integers(2, 6))
def test_bound_iterations_never_exceed_the_closed_form(seed, n_states):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states, 2)
    v_star = reference_values(mdp)
    init = np.where(mdp.space.terminal_mask, 0.0, rng.uniform(-20, 20, n_states))
    result = value_iterate(mdp, init_values=init, record=True)
    err = init - v_star
    n, n_prime = iteration_bound(mdp, err, err, 1e-6, v_star, greedy_trace=result.greedy_trace)
    assert n <= n_prime


def test_local_update_bounds_degenerate_cases():
    mdp = two_state([(0, 0, 1, 1.0, 0.0, 0.5), (1, 0, 1, 1.0, 0.0, 1.0)])
    v_star = reference_values(mdp)
    actions = optimal_actions(mdp, v_star)
    lower, upper, scalar = local_update_bounds(mdp, v_star, v_star, actions)
    assert lower.tolist() == upper.tolist() == [0.0, 0.0]
    # current error of -2 at the successor; terminal values stay pinned, so use a non-terminal successor
    loop = two_state([(0, 0, 0, 1.0, 1.0, 0.5), (1, 0, 1, 1.0, 0.0, 1.0)])
    v_star = reference_values(loop)
    current = v_star + np.array([-2.0, 0.0])
    lower, upper, scalar = local_update_bounds(loop, v_star, current, optimal_actions(loop, v_star))
    assert lower[0] == upper[0] == -1.0
    assert scalar[0] == 1.0


def test_transfer_savings_arithmetic():
    report = transfer_savings_report(100, [5, 3])
    assert report.total == 8 and report.savings == 92
    same = transfer_savings_report(100, [5, 3], warm_start_iterations=7, cold_start_iterations=7)
    assert same.warm_start_savings == 0
