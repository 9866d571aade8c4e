"""Finite MDPs with factored actions, the universal end action, and policy evaluation.

Storage layout: every transition row is indexed by ``a * n_states + s`` in a single
CSR matrix of shape ``(n_actions * n_states, n_states)``.  Reward and discount
tables are flat arrays aligned with ``transition.data``.  Non-end actions come
first, so the non-end block is a contiguous row slice.

End actions terminate the episode: they pay the end penalty (zero at terminal
states) and contribute no continuation value.  Their tables still carry the
self-loop convention (probability 1, discount 1) so that induced matrices and
serialization see the formal kernel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import MissingEndAction, NoConvergence, RowNotStochastic

END = "end"
NULL = "null"
BLOCKED = 0

ROW_TOLERANCE = 1e-12
SCHEMA_VERSION = 1

ActionTuple = tuple


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class StateSpace:
    """Ordered opaque state identifiers plus initial and terminal index sets."""

    def __init__(self, states: Sequence[str], initial: Iterable[int], terminal: Iterable[int]):
        self.states = tuple(states)
        if len(set(self.states)) != len(self.states):
            raise ValueError("state identifiers must be unique")
        self.index = {name: i for i, name in enumerate(self.states)}
        self.initial = _frozen(np.unique(np.asarray(list(initial), dtype=np.int64)))
        self.terminal = _frozen(np.unique(np.asarray(list(terminal), dtype=np.int64)))
        n = len(self.states)
        for subset in (self.initial, self.terminal):
            if subset.size and (subset.min() < 0 or subset.max() >= n):
                raise ValueError("state index out of range")
        if np.intersect1d(self.initial, self.terminal).size:
            raise ValueError("initial and terminal states must be disjoint")
        terminal_mask = np.zeros(n, dtype=bool)
        terminal_mask[self.terminal] = True
        initial_mask = np.zeros(n, dtype=bool)
        initial_mask[self.initial] = True
        self.terminal_mask = _frozen(terminal_mask)
        self.initial_mask = _frozen(initial_mask)

    def __len__(self) -> int:
        return len(self.states)

    def with_initial(self, initial: Iterable[int]) -> "StateSpace":
        return StateSpace(self.states, initial, self.terminal)


class ActionSet:
    """Action tuples over per-factor alphabets with per-state availability.

    Tuples containing the end symbol in any coordinate are end actions.  The
    constructor stably moves them behind the non-end tuples.
    """

    def __init__(self, factors: Sequence[Sequence[str]], actions: Sequence[ActionTuple], available):
        self.factors = tuple(tuple(f) for f in factors)
        actions = [tuple(a) for a in actions]
        available = np.asarray(available, dtype=bool)
        if available.ndim != 2 or available.shape[1] != len(actions):
            raise ValueError("availability must be a (states x actions) boolean matrix")
        for a in actions:
            if len(a) != len(self.factors):
                raise ValueError(f"action {a!r} does not have one coordinate per factor")
            for k, symbol in enumerate(a):
                if symbol not in self.factors[k]:
                    raise ValueError(f"symbol {symbol!r} is not in factor {k}")
        is_end = [END in a for a in actions]
        order = [i for i, e in enumerate(is_end) if not e] + [i for i, e in enumerate(is_end) if e]
        self.actions = tuple(actions[i] for i in order)
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("duplicate action tuples")
        self.n_nonend = sum(1 for e in is_end if not e)
        all_end = tuple(END for _ in self.factors)
        if all_end not in self.actions:
            raise MissingEndAction("the all-end tuple is not an action")
        available = available[:, order].copy()
        if not available[:, self.n_nonend:].all():
            raise MissingEndAction("every end action must be available at every state")
        self.available = _frozen(available)
        self.index = {a: i for i, a in enumerate(self.actions)}
        self.all_end_index = self.index[all_end]
        end_mask = np.zeros(len(self.actions), dtype=bool)
        end_mask[self.n_nonend:] = True
        self.end_mask = _frozen(end_mask)

    @classmethod
    def single_factor(cls, symbols: Sequence[str], n_states: int, available=None) -> "ActionSet":
        """One factor holding ``symbols`` plus the end symbol; end is the last action."""
        alphabet = tuple(symbols) + (END,)
        actions = [(a,) for a in alphabet]
        if available is None:
            available = np.ones((n_states, len(actions)), dtype=bool)
        return cls((alphabet,), actions, available)

    @property
    def n_states(self) -> int:
        return self.available.shape[0]

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def end_indices(self) -> np.ndarray:
        return np.arange(self.n_nonend, self.n_actions)

    def with_availability(self, available) -> "ActionSet":
        """Same tuples, new availability matrix (columns in this set's order)."""
        return ActionSet(self.factors, self.actions, available)

    def projection(self, factor_subset: Sequence[int]) -> tuple[ActionTuple, ...]:
        """Distinct projections of the action tuples onto ``factor_subset``.

        Inactive coordinates hold the blocked symbol.  Order follows first
        appearance in ``self.actions``.
        """
        keep = set(factor_subset)
        seen: dict[ActionTuple, None] = {}
        for a in self.actions:
            seen.setdefault(tuple(x if k in keep else BLOCKED for k, x in enumerate(a)), None)
        return tuple(seen)

    def project_indices(self, factor_subset: Sequence[int], partial_actions: Sequence[ActionTuple]) -> np.ndarray:
        """For each full action, the index of its projection within ``partial_actions``."""
        keep = set(factor_subset)
        lookup = {a: i for i, a in enumerate(partial_actions)}
        return np.array(
            [lookup[tuple(x if k in keep else BLOCKED for k, x in enumerate(a))] for a in self.actions],
            dtype=np.int64,
        )


@dataclass(frozen=True)
class TransitionTable:
    """Coordinate-list transition/reward/discount entries keyed by action index."""

    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    prob: np.ndarray
    reward: np.ndarray
    discount: np.ndarray

    @classmethod
    def from_records(cls, records: Iterable[Sequence[float]]) -> "TransitionTable":
        rows = list(records)
        if not rows:
            return cls.empty()
        arr = np.asarray(rows, dtype=float)
        return cls.from_arrays(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], arr[:, 5])

    @classmethod
    def from_arrays(cls, state, action, next_state, prob, reward, discount) -> "TransitionTable":
        n = len(state)
        return cls(
            np.asarray(state, dtype=np.int64),
            np.asarray(action, dtype=np.int64),
            np.asarray(next_state, dtype=np.int64),
            np.asarray(prob, dtype=float).reshape(n),
            np.broadcast_to(np.asarray(reward, dtype=float), (n,)).copy(),
            np.broadcast_to(np.asarray(discount, dtype=float), (n,)).copy(),
        )

    @classmethod
    def empty(cls) -> "TransitionTable":
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        return cls(zi, zi, zi, z, z, z)

    @classmethod
    def concat(cls, tables: Sequence["TransitionTable"]) -> "TransitionTable":
        if not tables:
            return cls.empty()
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in
                     ("state", "action", "next_state", "prob", "reward", "discount")))

    def normalized(self) -> "TransitionTable":
        """Rescale probabilities so that each (state, action) group sums to exactly one."""
        keys = self.state * (self.action.max(initial=0) + 1) + self.action
        _, inverse = np.unique(keys, return_inverse=True)
        totals = np.bincount(inverse, weights=self.prob)
        return TransitionTable(self.state, self.action, self.next_state, self.prob / totals[inverse],
                               self.reward, self.discount)


class TabularMdp:
    """Validated finite MDP; construct through :func:`build_mdp` or :func:`assemble_mdp`."""

    def __init__(self, space: StateSpace, actions: ActionSet, transition: sp.csr_matrix,
                 reward: np.ndarray, discount: np.ndarray, end_penalty: float):
        self.space = space
        self.actions = actions
        self.transition = transition
        self.reward = _frozen(np.asarray(reward, dtype=float))
        self.discount = _frozen(np.asarray(discount, dtype=float))
        self.end_penalty = float(end_penalty)

    @property
    def n_states(self) -> int:
        return len(self.space)

    @property
    def n_actions(self) -> int:
        return self.actions.n_actions

    def reward_table(self) -> np.ndarray:
        return self.reward

    def discount_table(self) -> np.ndarray:
        return self.discount

    def _with_data(self, data: np.ndarray) -> sp.csr_matrix:
        t = self.transition
        return sp.csr_matrix((data, t.indices, t.indptr), shape=t.shape)

    def row(self, state: int, action: int) -> tuple[dict, dict, dict]:
        """Transition, reward and discount entries of one (state, action) row keyed by successor."""
        r = action * self.n_states + state
        lo, hi = self.transition.indptr[r], self.transition.indptr[r + 1]
        cols = self.transition.indices[lo:hi].tolist()
        return (
            dict(zip(cols, self.transition.data[lo:hi].tolist())),
            dict(zip(cols, self.reward[lo:hi].tolist())),
            dict(zip(cols, self.discount[lo:hi].tolist())),
        )

    @cached_property
    def nonend_rows(self) -> int:
        return self.actions.n_nonend * self.n_states

    @cached_property
    def kernel_p(self) -> sp.csr_matrix:
        """Non-end transition block, shape (n_nonend * S, S)."""
        return self.transition[: self.nonend_rows]

    @cached_property
    def kernel_pg(self) -> sp.csr_matrix:
        """Non-end block with entries P * Gamma."""
        return self._with_data(self.transition.data * self.discount)[: self.nonend_rows]

    @cached_property
    def kernel_pr(self) -> sp.csr_matrix:
        """Non-end block with entries P * R."""
        return self._with_data(self.transition.data * self.reward)[: self.nonend_rows]

    @cached_property
    def expected_reward(self) -> np.ndarray:
        """Row-wise expected one-step reward, shape (n_actions, S)."""
        pr = self._with_data(self.transition.data * self.reward)
        return np.asarray(pr.sum(axis=1)).reshape(self.n_actions, self.n_states)

    @cached_property
    def end_reward(self) -> np.ndarray:
        """Reward of taking any end action at each state."""
        return np.where(self.space.terminal_mask, 0.0, self.end_penalty)

    def restrict_initial(self, initial: Iterable[int]) -> "TabularMdp":
        return TabularMdp(self.space.with_initial(initial), self.actions, self.transition,
                          self.reward, self.discount, self.end_penalty)


def assemble_mdp(space: StateSpace, actions: ActionSet, state, action, next_state, prob, reward, discount,
                 end_penalty: float) -> TabularMdp:
    """Build the CSR layout from de-duplicated non-end entries and append end rows.

    Entries must be unique per (state, action, next_state) with positive probability.
    """
    n = len(space)
    end_rows_state = np.tile(np.arange(n), actions.n_actions - actions.n_nonend)
    end_rows_action = np.repeat(actions.end_indices, n)
    end_reward = np.where(space.terminal_mask[end_rows_state], 0.0, end_penalty)
    state = np.concatenate([state, end_rows_state])
    action = np.concatenate([action, end_rows_action])
    next_state = np.concatenate([next_state, end_rows_state])
    prob = np.concatenate([prob, np.ones(end_rows_state.size)])
    reward = np.concatenate([reward, end_reward])
    discount = np.concatenate([discount, np.ones(end_rows_state.size)])
    rows = action * n + state
    order = np.lexsort((next_state, rows))
    rows, cols = rows[order], next_state[order]
    n_rows = actions.n_actions * n
    indptr = np.searchsorted(rows, np.arange(n_rows + 1))
    transition = sp.csr_matrix((prob[order], cols, indptr), shape=(n_rows, n))
    return TabularMdp(space, actions, transition, reward[order], discount[order], end_penalty)


def build_mdp(space: StateSpace, actions: ActionSet, table: TransitionTable, end_penalty: float) -> TabularMdp:
    """Validate tables and apply the end-action and terminal-state conventions.

    Supplied entries for end actions are discarded and replaced by self-loops
    with the end penalty (zero at terminal states) and discount one.  Rewards
    out of terminal states are forced to zero.  Duplicate triples are merged
    with probability-weighted reward and discount.
    """
    if not end_penalty < 0:
        raise ValueError("end_penalty must be negative")
    if actions.n_states != len(space):
        raise ValueError("action availability does not match the state space")
    if np.any((table.prob < 0) | (table.prob > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if np.any((table.discount < 0) | (table.discount > 1)):
        raise ValueError("discounts must lie in [0, 1]")
    n = len(space)
    keep = table.action < actions.n_nonend
    keep &= actions.available[table.state, np.minimum(table.action, actions.n_actions - 1)]
    keep &= table.prob > 0
    s, a, t = table.state[keep], table.action[keep], table.next_state[keep]
    p, r, g = table.prob[keep], table.reward[keep], table.discount[keep]
    r = np.where(space.terminal_mask[s], 0.0, r)

    keys = (a * n + s) * n + t
    unique_keys, inverse = np.unique(keys, return_inverse=True)
    p_sum = np.bincount(inverse, weights=p)
    r_avg = np.bincount(inverse, weights=p * r) / p_sum
    g_avg = np.bincount(inverse, weights=p * g) / p_sum
    t_u = unique_keys % n
    row_u = unique_keys // n
    s_u, a_u = row_u % n, row_u // n

    row_sums = np.bincount(row_u, weights=p_sum, minlength=actions.n_nonend * n)
    expected = actions.available[:, : actions.n_nonend].T.reshape(-1).astype(float)
    bad = np.flatnonzero(np.abs(row_sums - expected) > ROW_TOLERANCE)
    if bad.size:
        row = int(bad[0])
        raise RowNotStochastic(
            f"row (state={space.states[row % n]!r}, action={actions.actions[row // n]!r}) "
            f"sums to {row_sums[row]!r}"
        )
    return assemble_mdp(space, actions, s_u, a_u, t_u, p_sum, r_avg, g_avg, end_penalty)


class Policy:
    """Stochastic map from states to action tuples, stored as a CSR (S x A) matrix."""

    def __init__(self, probabilities, actions: ActionSet, timescale: float = math.inf, validate: bool = True):
        matrix = sp.csr_matrix(probabilities, dtype=float)
        matrix.eliminate_zeros()
        matrix.sort_indices()
        self.matrix = matrix
        self.actions = actions
        self.timescale = float(timescale)
        if validate:
            self._validate()

    def _validate(self) -> None:
        if self.matrix.shape != (self.actions.n_states, self.actions.n_actions):
            raise ValueError("policy shape does not match the action set")
        if self.matrix.data.size and (self.matrix.data.min() < 0 or self.matrix.data.max() > 1 + ROW_TOLERANCE):
            raise ValueError("policy probabilities must lie in [0, 1]")
        coo = self.matrix.tocoo()
        if not self.actions.available[coo.row, coo.col].all():
            raise ValueError("policy places mass on unavailable actions")
        sums = np.asarray(self.matrix.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > ROW_TOLERANCE):
            raise ValueError("policy rows must sum to one")
        if not self.timescale >= 1:
            raise ValueError("timescale must be at least one")

    @classmethod
    def from_dense(cls, dense: np.ndarray, actions: ActionSet, timescale: float = math.inf) -> "Policy":
        return cls(sp.csr_matrix(np.asarray(dense, dtype=float)), actions, timescale)

    @classmethod
    def deterministic(cls, choice: np.ndarray, actions: ActionSet, timescale: float = math.inf) -> "Policy":
        choice = np.asarray(choice, dtype=np.int64)
        n = choice.size
        matrix = sp.csr_matrix((np.ones(n), choice, np.arange(n + 1)), shape=(n, actions.n_actions))
        return cls(matrix, actions, timescale)

    @classmethod
    def all_end(cls, actions: ActionSet, timescale: float = math.inf) -> "Policy":
        return cls.deterministic(np.full(actions.n_states, actions.all_end_index), actions, timescale)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def end_mass(self) -> np.ndarray:
        return np.asarray(self.matrix[:, self.actions.n_nonend:].sum(axis=1)).ravel()

    def is_deterministic(self) -> bool:
        return bool(np.all(np.diff(self.matrix.indptr) == 1))

    def argmax(self) -> np.ndarray:
        """Most probable action per state; ties go to the smallest index."""
        return np.asarray(self.dense().argmax(axis=1)).ravel()

    def with_timescale(self, timescale: float) -> "Policy":
        return Policy(self.matrix, self.actions, timescale, validate=False)

    def terminal_rows_end(self, space: StateSpace) -> bool:
        """Whether every terminal row puts all its mass on end actions."""
        rows = self.matrix[space.terminal][:, self.actions.n_nonend:]
        return bool(np.allclose(np.asarray(rows.sum(axis=1)).ravel(), 1.0, atol=ROW_TOLERANCE))


def selection_matrix(policy: Policy, n_states: int, actions: Sequence[int] | None = None) -> sp.csr_matrix:
    """Sparse (S x n_sel * S) matrix D with D[s, k*S + s] = pi(s, actions[k]).

    ``D @ kernel`` yields the policy-weighted combination of stacked action rows.
    """
    coo = policy.matrix.tocoo()
    if actions is None:
        limit = policy.actions.n_actions
        mask = coo.col < limit
    else:
        limit = len(actions)
        mask = coo.col < limit
    cols = coo.col[mask] * n_states + coo.row[mask]
    return sp.csr_matrix((coo.data[mask], (coo.row[mask], cols)), shape=(n_states, limit * n_states))


def nonend_selection(policy: Policy, n_states: int) -> sp.csr_matrix:
    return selection_matrix(policy, n_states, range(policy.actions.n_nonend))


def induced_matrix(mdp: TabularMdp, policy: Policy, with_end_restriction: bool = False):
    """P^pi over all actions; optionally also the end-action restriction P^pi_end."""
    d = selection_matrix(policy, mdp.n_states)
    full = (d @ mdp.transition).tocsr()
    if not with_end_restriction:
        return full
    end_only = sp.diags(policy.end_mass()).tocsr()
    return full, end_only


def hadamard_expectation(mdp: TabularMdp, policy: Policy, x: np.ndarray, y: np.ndarray) -> sp.csr_matrix:
    """Sum over actions of P * X * Y weighted by the policy; X and Y align with transition data."""
    weighted = mdp._with_data(mdp.transition.data * (np.asarray(x) * np.asarray(y)))
    d = selection_matrix(policy, mdp.n_states)
    return (d @ weighted).tocsr()


def policy_reward(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """Expected one-step reward under the policy, zero at terminal states."""
    dense_reward = mdp.expected_reward.T  # (S, A)
    coo = policy.matrix.tocoo()
    out = np.bincount(coo.row, weights=coo.data * dense_reward[coo.row, coo.col], minlength=mdp.n_states)
    out[mdp.space.terminal_mask] = 0.0
    return out


def continuation_matrix(mdp: TabularMdp, policy: Policy) -> sp.csr_matrix:
    """Discounted non-end transition matrix under the policy, zero rows at terminal states."""
    d = nonend_selection(policy, mdp.n_states)
    m = (d @ mdp.kernel_pg).tocsr()
    keep = sp.diags((~mdp.space.terminal_mask).astype(float))
    return (keep @ m).tocsr()


def policy_value(mdp: TabularMdp, policy: Policy, horizon_cap: int = 100_000, tolerance: float = 1e-10,
                 init: np.ndarray | None = None) -> np.ndarray:
    """Iterate V = r_pi + (P Gamma)^pi V with terminal values pinned at zero.

    Raises NoConvergence when ``horizon_cap`` sweeps do not bring the change below ``tolerance``.
    """
    r_pi = policy_reward(mdp, policy)
    m = continuation_matrix(mdp, policy)
    values = np.zeros(mdp.n_states) if init is None else np.array(init, dtype=float)
    values[mdp.space.terminal_mask] = 0.0
    for _ in range(horizon_cap):
        new = r_pi + m @ values
        delta = np.max(np.abs(new - values), initial=0.0)
        values = new
        if delta < tolerance:
            return values
    raise NoConvergence(f"policy evaluation did not converge within {horizon_cap} sweeps")


# -- serialization -----------------------------------------------------------------------------

def _num(x: float) -> float:
    # 17 significant digits round-trip every binary64 value exactly
    return float(format(x, ".17g"))


def mdp_to_dict(mdp: TabularMdp) -> dict:
    n = mdp.n_states
    coo_rows = np.repeat(np.arange(mdp.transition.shape[0]), np.diff(mdp.transition.indptr))
    nonend = coo_rows < mdp.nonend_rows
    triples = [
        [int(r % n), int(r // n), int(c), _num(p), _num(rw), _num(g)]
        for r, c, p, rw, g in zip(coo_rows[nonend], mdp.transition.indices[nonend],
                                  mdp.transition.data[nonend], mdp.reward[nonend], mdp.discount[nonend])
    ]
    return {
        "schema_version": SCHEMA_VERSION,
        "states": list(mdp.space.states),
        "initial": mdp.space.initial.tolist(),
        "terminal": mdp.space.terminal.tolist(),
        "factors": [list(f) for f in mdp.actions.factors],
        "actions": [list(a) for a in mdp.actions.actions],
        "available": [np.flatnonzero(row).tolist() for row in mdp.actions.available],
        "end_penalty": _num(mdp.end_penalty),
        "triples": triples,
    }


def mdp_from_dict(doc: dict) -> TabularMdp:
    space = StateSpace(doc["states"], doc["initial"], doc["terminal"])
    actions_list = [tuple(a) for a in doc["actions"]]
    available = np.zeros((len(space), len(actions_list)), dtype=bool)
    for s, idx in enumerate(doc["available"]):
        available[s, idx] = True
    actions = ActionSet(doc["factors"], actions_list, available)
    # serialized indices refer to the stored order, which is already end-last
    if actions.actions != tuple(actions_list):
        raise ValueError("serialized action order is not end-last")
    triples = doc["triples"]
    table = TransitionTable.from_records(triples) if triples else TransitionTable.empty()
    return build_mdp(space, actions, table, doc["end_penalty"])


def mdp_to_json(mdp: TabularMdp) -> str:
    return json.dumps(mdp_to_dict(mdp), sort_keys=True)


def mdp_from_json(text: str) -> TabularMdp:
    return mdp_from_dict(json.loads(text))
