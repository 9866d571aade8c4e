"""Compression of a level-l MDP into the level-(l+1) MDP whose actions are level-l policies.

For a policy ``pi`` with timescale ``t`` (stop probability ``q = 1/t`` after each
drawn step, ``q = 0`` when ``t`` is infinite), end mass ``e`` and non-end
selection ``D``, the absorption quantities solve

    H = (1-q) D P H + q D P + diag(e)
    G = (1-q) D PG G + q D PG + diag(e)
    W = (1-q) D PG W + q D PR + diag(e * r_end) + (1-q) D PR H

where ``P``, ``PG`` and ``PR`` are the stacked non-end kernels with entries
``P``, ``P*Gamma`` and ``P*R``.  The compressed tables are ``H``,
``W / H`` and ``G / H`` on the support of ``H``.  Rows of terminal states are
treated as ending immediately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystem, SolverDivergence, TrajectoryCap
from .mdp import ActionSet, Policy, TabularMdp, assemble_mdp, nonend_selection
from .policies import Vocabulary

SUPPORT_TOLERANCE = 1e-14
AVAILABILITY_TOLERANCE = 1e-9
FIXED_POINT_TOLERANCE = 1e-12
MAX_SWEEPS = 1_000_000
ROLLOUT_STEP_CAP = 1_000_000


def minimal_solution(step: sp.csr_matrix, rhs: sp.csr_matrix, tolerance: float = FIXED_POINT_TOLERANCE,
                     max_sweeps: int = MAX_SWEEPS, relative: bool = False,
                     on_sweep: Callable[[sp.csr_matrix], None] | None = None) -> sp.csr_matrix:
    """Iterate X <- step @ X + rhs from X = 0 until the largest entry change is below tolerance.

    With non-negative ``step`` and ``rhs`` the iterates increase monotonically to the
    minimal non-negative solution.  ``relative`` scales the tolerance by max(1, |X|max).
    """
    x = sp.csr_matrix(rhs.shape)
    for _ in range(max_sweeps):
        new = (step @ x + rhs).tocsr()
        diff = new - x
        delta = abs(diff).max() if diff.nnz else 0.0
        x = new
        if on_sweep is not None:
            on_sweep(x)
        scale = max(1.0, abs(x).max() if x.nnz else 0.0) if relative else 1.0
        if delta <= tolerance * scale:
            return x
    raise SolverDivergence(f"fixed-point iteration did not converge within {max_sweeps} sweeps")


def _direct_solution(step: sp.csr_matrix, rhs: sp.csr_matrix) -> sp.csr_matrix:
    n = step.shape[0]
    system = (sp.identity(n, format="csc") - step).tocsc()
    try:
        factor = spla.splu(system)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    solution = factor.solve(rhs.toarray())
    if not np.all(np.isfinite(solution)):
        raise SingularSystem("direct solve produced non-finite values")
    out = sp.csr_matrix(solution)
    out.eliminate_zeros()
    return out


def _solve(step, rhs, method: str, tolerance: float, max_sweeps: int, relative: bool = False) -> sp.csr_matrix:
    if method == "iterate":
        return minimal_solution(step, rhs, tolerance, max_sweeps, relative)
    if method == "direct":
        return _direct_solution(step, rhs)
    raise ValueError(f"unknown compression method {method!r}")


@dataclass(frozen=True)
class _PolicyParts:
    stop: float
    selection: sp.csr_matrix
    end_mass: np.ndarray


def _policy_parts(lower: TabularMdp, policy: Policy) -> _PolicyParts:
    terminal = lower.space.terminal_mask
    selection = nonend_selection(policy, lower.n_states)
    selection = (sp.diags((~terminal).astype(float)) @ selection).tocsr()
    end_mass = np.where(terminal, 1.0, policy.end_mass())
    stop = 0.0 if math.isinf(policy.timescale) else 1.0 / policy.timescale
    return _PolicyParts(stop, selection, end_mass)


def _on_support(numerator: sp.csr_matrix, transition_out: sp.csr_matrix) -> sp.csr_matrix:
    """Ratio numerator / transition_out on entries where transition_out exceeds the support tolerance."""
    h = transition_out.tocoo()
    keep = h.data > SUPPORT_TOLERANCE
    rows, cols, denom = h.row[keep], h.col[keep], h.data[keep]
    values = np.asarray(numerator.tocsr()[rows, cols]).ravel() / denom
    order = np.lexsort((cols, rows))
    rows, cols, values = rows[order], cols[order], values[order]
    indptr = np.searchsorted(rows, np.arange(h.shape[0] + 1))
    return sp.csr_matrix((values, cols, indptr), shape=h.shape)


def _transition(lower, parts, method, tolerance, max_sweeps):
    one_step = (parts.selection @ lower.kernel_p).tocsr()
    rhs = (parts.stop * one_step + sp.diags(parts.end_mass)).tocsr()
    return _solve(((1 - parts.stop) * one_step).tocsr(), rhs, method, tolerance, max_sweeps)


def _discount_mass(lower, parts, method, tolerance, max_sweeps):
    one_step = (parts.selection @ lower.kernel_pg).tocsr()
    rhs = (parts.stop * one_step + sp.diags(parts.end_mass)).tocsr()
    return _solve(((1 - parts.stop) * one_step).tocsr(), rhs, method, tolerance, max_sweeps)


def _reward_mass(lower, parts, transition_out, method, tolerance, max_sweeps):
    step = ((1 - parts.stop) * (parts.selection @ lower.kernel_pg)).tocsr()
    one_step_reward = (parts.selection @ lower.kernel_pr).tocsr()
    rhs = (parts.stop * one_step_reward + sp.diags(parts.end_mass * lower.end_reward)
           + (1 - parts.stop) * (one_step_reward @ transition_out)).tocsr()
    return _solve(step, rhs, method, tolerance, max_sweeps, relative=True)


def compress_transition(lower: TabularMdp, policy: Policy, method: str = "iterate",
                        tolerance: float = FIXED_POINT_TOLERANCE, max_sweeps: int = MAX_SWEEPS) -> sp.csr_matrix:
    """Stopping-state distribution H of ``policy`` run on ``lower`` (minimal non-negative solution)."""
    return _transition(lower, _policy_parts(lower, policy), method, tolerance, max_sweeps)


def compress_reward(lower: TabularMdp, policy: Policy, transition_out: sp.csr_matrix, method: str = "iterate",
                    tolerance: float = FIXED_POINT_TOLERANCE, max_sweeps: int = MAX_SWEEPS) -> sp.csr_matrix:
    """Expected discounted reward conditioned on the stopping state, on the support of ``transition_out``."""
    parts = _policy_parts(lower, policy)
    return _on_support(_reward_mass(lower, parts, transition_out, method, tolerance, max_sweeps), transition_out)


def compress_discount(lower: TabularMdp, policy: Policy, transition_out: sp.csr_matrix, method: str = "iterate",
                      tolerance: float = FIXED_POINT_TOLERANCE, max_sweeps: int = MAX_SWEEPS) -> sp.csr_matrix:
    """Expected discount product conditioned on the stopping state, on the support of ``transition_out``."""
    parts = _policy_parts(lower, policy)
    return _on_support(_discount_mass(lower, parts, method, tolerance, max_sweeps), transition_out)


def compress_policy(lower: TabularMdp, policy: Policy, method: str = "iterate", tolerance: float = FIXED_POINT_TOLERANCE,
                    max_sweeps: int = MAX_SWEEPS) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """(H, R, Gamma) for one policy, sharing the selection matrices between the three solves."""
    parts = _policy_parts(lower, policy)
    h = _transition(lower, parts, method, tolerance, max_sweeps)
    r = _on_support(_reward_mass(lower, parts, h, method, tolerance, max_sweeps), h)
    g = _on_support(_discount_mass(lower, parts, method, tolerance, max_sweeps), h)
    return h, r, g


@dataclass(eq=False)
class CompressedLevel:
    mdp: TabularMdp
    vocabulary: Vocabulary
    level_index: int
    end_penalty: float


def compress_level(lower: TabularMdp, vocabulary: Vocabulary, end_penalty: float, level_index: int = 2,
                   method: str = "iterate") -> CompressedLevel:
    """Level-(l+1) MDP whose non-end actions are the vocabulary policies.

    A compressed action is available at a state when its policy stops almost surely
    (stopping mass at least 1 - 1e-9) and does not end immediately at a
    non-terminal state.  Available rows are renormalized to sum to one.
    """
    n = lower.n_states
    terminal = lower.space.terminal_mask
    tuples = vocabulary.next_action_tuples()
    available = np.ones((n, len(tuples)), dtype=bool)
    pieces = []
    for k, (_, policy) in enumerate(vocabulary):
        h, r, g = compress_policy(lower, policy, method)
        support = h.tocoo()
        keep = support.data > SUPPORT_TOLERANCE
        rows, cols, probs = support.row[keep], support.col[keep], support.data[keep]
        totals = np.bincount(rows, weights=probs, minlength=n)
        ok = totals >= 1.0 - AVAILABILITY_TOLERANCE
        ok &= ~((policy.end_mass() >= 1.0 - 1e-12) & ~terminal)
        available[:, k] = ok
        use = ok[rows]
        rows, cols, probs = rows[use], cols[use], probs[use] / totals[rows[use]]
        rewards = np.asarray(r[rows, cols]).ravel()
        discounts = np.asarray(g[rows, cols]).ravel()
        pieces.append((rows, np.full(rows.size, k), cols, probs, rewards, discounts))
    actions = ActionSet(vocabulary.factors, tuples, available)
    if actions.actions != tuple(tuples):
        raise ValueError("vocabulary tuples are not ordered with end tuples last")
    if pieces:
        columns = [np.concatenate(parts) for parts in zip(*pieces)]
    else:
        columns = [np.zeros(0, dtype=np.int64)] * 3 + [np.zeros(0)] * 3
    mdp = assemble_mdp(lower.space, actions, columns[0].astype(np.int64), columns[1].astype(np.int64),
                       columns[2].astype(np.int64), *columns[3:], end_penalty)
    return CompressedLevel(mdp, vocabulary, level_index, float(end_penalty))


@dataclass(frozen=True)
class RolloutEstimate:
    """Per stopping state: empirical probability, conditional mean reward and discount, with standard errors."""

    n: int
    counts: dict
    probability: dict
    probability_se: dict
    reward: dict
    reward_se: dict
    discount: dict
    discount_se: dict


def _standard_error(samples: np.ndarray) -> float:
    if samples.size < 2:
        return 0.0
    return float(samples.std(ddof=1) / math.sqrt(samples.size))


def rollout_oracle(lower: TabularMdp, policy: Policy, start: int, n: int, seed: int,
                   step_cap: int = ROLLOUT_STEP_CAP) -> RolloutEstimate:
    """Monte-Carlo estimate of the compressed (P, R, Gamma) rows of ``policy`` from ``start``.

    Each step draws an action; an end action stops in place paying the end reward.
    A non-end action moves, then the geometric clock stops the run with probability 1/t.
    """
    if n < 1:
        raise ValueError("sample count must be positive")
    rng = np.random.default_rng(seed)
    s_count = lower.n_states
    dense = policy.dense()
    dense[lower.space.terminal_mask] = 0.0
    dense[lower.space.terminal_mask, lower.actions.all_end_index] = 1.0
    policy_cdf = np.cumsum(dense, axis=1)
    end_mask = lower.actions.end_mask
    trans = lower.transition
    cumulative = np.cumsum(trans.data)
    padded = np.concatenate([[0.0], cumulative])
    stop = 0.0 if math.isinf(policy.timescale) else 1.0 / policy.timescale

    state = np.full(n, start, dtype=np.int64)
    reward = np.zeros(n)
    discount = np.ones(n)
    active = np.ones(n, dtype=bool)
    for _ in range(step_cap):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        s = state[idx]
        u = rng.random(idx.size) * policy_cdf[s, -1]
        a = np.minimum((policy_cdf[s] <= u[:, None]).sum(axis=1), lower.n_actions - 1)
        ends = end_mask[a]
        end_idx = idx[ends]
        reward[end_idx] += discount[end_idx] * lower.end_reward[state[end_idx]]
        active[end_idx] = False

        move_idx, row = idx[~ends], a[~ends] * s_count + s[~ends]
        lo, hi = trans.indptr[row], trans.indptr[row + 1]
        target = padded[lo] + rng.random(move_idx.size) * (padded[hi] - padded[lo])
        pos = np.clip(np.searchsorted(cumulative, target, side="right"), lo, hi - 1)
        reward[move_idx] += discount[move_idx] * lower.reward[pos]
        discount[move_idx] *= lower.discount[pos]
        state[move_idx] = trans.indices[pos]
        if stop > 0.0:
            active[move_idx[rng.random(move_idx.size) < stop]] = False
    else:
        if active.any():
            raise TrajectoryCap(f"{int(active.sum())} trajectories exceeded {step_cap} steps")

    counts, probability, probability_se = {}, {}, {}
    mean_reward, reward_se, mean_discount, discount_se = {}, {}, {}, {}
    for target in np.unique(state).tolist():
        mask = state == target
        c = int(mask.sum())
        p = c / n
        counts[target] = c
        probability[target] = p
        probability_se[target] = math.sqrt(p * (1 - p) / n)
        mean_reward[target] = float(reward[mask].mean())
        reward_se[target] = _standard_error(reward[mask])
        mean_discount[target] = float(discount[mask].mean())
        discount_se[target] = _standard_error(discount[mask])
    return RolloutEstimate(n, counts, probability, probability_se, mean_reward, reward_se, mean_discount, discount_se)
