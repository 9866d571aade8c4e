"""Value iteration with state-action-state discounts, plus per-state error-bound diagnostics.

End actions pay the end reward and stop; unavailable actions never win the max;
terminal states are pinned at zero.  Iteration counts follow the convention that
the final sweep only verifies convergence: ``iterations = sweeps - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NoConvergence, Unbounded
from .mdp import Policy, TabularMdp

DEFAULT_EPSILON = 1e-6
REFERENCE_TOLERANCE = 1e-12
TIE_TOLERANCE = 1e-3


@dataclass(frozen=True)
class SolveConfig:
    epsilon: float = DEFAULT_EPSILON
    max_iters: int = 100_000
    n_max: int = 100_000
    t_max: float = math.inf
    v_min: float = -math.inf
    tie_tolerance: float = TIE_TOLERANCE

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    sweeps: int
    episode_length: float
    mean_initial_value: float


@dataclass(frozen=True)
class ErrorFlag:
    exists: bool
    level: int = 1


@dataclass(eq=False)
class SolveResult:
    values: np.ndarray
    policy: Policy
    stats: SolveStats
    error_flag: ErrorFlag
    converged: bool
    initial_mean: float
    history: list[tuple[float, float]] = field(default_factory=list)
    convergence_iteration: np.ndarray | None = None
    value_trace: list[np.ndarray] = field(default_factory=list)
    greedy_trace: list[np.ndarray] = field(default_factory=list)


def action_values(mdp: TabularMdp, values: np.ndarray) -> np.ndarray:
    """Q table of shape (n_nonend + 1, S): non-end actions, then the shared end column.

    Unavailable non-end actions hold -inf.
    """
    n, k = mdp.n_states, mdp.actions.n_nonend
    continuation = (mdp.kernel_pg @ values).reshape(k, n)
    q_nonend = mdp.expected_reward[:k] + continuation
    q_nonend = np.where(mdp.actions.available[:, :k].T, q_nonend, -np.inf)
    return np.vstack([q_nonend, mdp.end_reward[None, :]])


def bellman_update(mdp: TabularMdp, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One optimality sweep; returns (new values, Q table)."""
    q = action_values(mdp, values)
    new = q.max(axis=0)
    new[mdp.space.terminal_mask] = 0.0
    return new, q


def _greedy_columns(q: np.ndarray, tie_tolerance: float) -> np.ndarray:
    """Smallest column index whose value is within ``tie_tolerance`` of the row maximum."""
    best = q.max(axis=0)
    return np.argmax(q >= best - tie_tolerance, axis=0)


def _columns_to_actions(mdp: TabularMdp, columns: np.ndarray) -> np.ndarray:
    actions = np.where(columns == mdp.actions.n_nonend, mdp.actions.all_end_index, columns)
    actions[mdp.space.terminal_mask] = mdp.actions.all_end_index
    return actions


def greedy_actions(mdp: TabularMdp, values: np.ndarray, tie_tolerance: float = TIE_TOLERANCE) -> np.ndarray:
    """Greedy action per state with the fixed tie-break; terminal states take the all-end tuple."""
    return _columns_to_actions(mdp, _greedy_columns(action_values(mdp, values), tie_tolerance))


def optimal_actions(mdp: TabularMdp, optimal_values: np.ndarray) -> np.ndarray:
    """Exact maximizers of the Bellman update at V* (the a_* of the error bounds)."""
    return greedy_actions(mdp, optimal_values, tie_tolerance=0.0)


def expected_episode_length(mdp: TabularMdp, policy: Policy, horizon_cap: int = 1_000_000,
                            tolerance: float = 1e-10) -> np.ndarray:
    """Expected number of non-end steps before stopping, per state."""
    from .mdp import nonend_selection

    d = nonend_selection(policy, mdp.n_states)
    step = (d @ mdp.kernel_p).tocsr()
    keep = sp.diags((~mdp.space.terminal_mask).astype(float))
    step = (keep @ step).tocsr()
    per_step = np.asarray(step.sum(axis=1)).ravel()
    lengths = np.zeros(mdp.n_states)
    for _ in range(horizon_cap):
        new = per_step + step @ lengths
        if np.max(np.abs(new - lengths), initial=0.0) < tolerance:
            return new
        lengths = new
    raise NoConvergence("episode length did not converge")


def value_iterate(mdp: TabularMdp, init_values: np.ndarray | None = None, cfg: SolveConfig | None = None,
                  t_bounds: tuple[float, float] = (math.inf, math.inf), level: int = 1,
                  record: bool = False) -> SolveResult:
    """Value iteration until consecutive iterates are ``cfg.epsilon``-close in the sup norm.

    With ``record`` the per-sweep values and exact greedy actions are kept for the
    bound diagnostics.
    """
    cfg = cfg or SolveConfig()
    n = mdp.n_states
    values = np.zeros(n) if init_values is None else np.array(init_values, dtype=float)
    values[mdp.space.terminal_mask] = 0.0
    initial = mdp.space.initial

    def mean_initial(v: np.ndarray) -> float:
        return float(v[initial].mean()) if initial.size else 0.0

    initial_mean = mean_initial(values)
    history: list[tuple[float, float]] = []
    value_trace = [values.copy()] if record else []
    greedy_trace: list[np.ndarray] = []
    last_change = np.zeros(n, dtype=np.int64)
    sweeps = 0
    converged = False
    q = None
    delta_initial = math.inf
    while sweeps < cfg.max_iters:
        new, q = bellman_update(mdp, values)
        sweeps += 1
        change = np.abs(new - values)
        delta = float(change.max(initial=0.0))
        delta_initial = float(change[initial].max(initial=0.0))
        last_change[change > cfg.epsilon] = sweeps
        values = new
        history.append((mean_initial(values), delta))
        if record:
            value_trace.append(values.copy())
            greedy_trace.append(_columns_to_actions(mdp, _greedy_columns(q, 0.0)))
        if delta <= cfg.epsilon:
            converged = True
            break

    q = action_values(mdp, values)
    choice = _columns_to_actions(mdp, _greedy_columns(q, cfg.tie_tolerance))
    t_min, t_max = t_bounds
    policy = Policy.deterministic(choice, mdp.actions, timescale=t_max)
    iterations = sweeps - 1 if converged else sweeps
    v_mean = mean_initial(values)
    episode_length = math.inf
    healthy = iterations <= cfg.n_max and delta_initial <= cfg.epsilon and v_mean >= cfg.v_min
    if healthy and t_max > t_min:
        try:
            lengths = expected_episode_length(mdp, policy)
            episode_length = float(lengths[initial].mean()) if initial.size else 0.0
        except NoConvergence:
            episode_length = math.inf
        policy = policy.with_timescale(min(max(episode_length, t_min), t_max))
    failed = not healthy or episode_length > cfg.t_max
    stats = SolveStats(iterations, sweeps, episode_length, v_mean)
    return SolveResult(values, policy, stats, ErrorFlag(failed, level), converged, initial_mean, history,
                       last_change, value_trace, greedy_trace)


def reference_values(mdp: TabularMdp, tolerance: float = REFERENCE_TOLERANCE, max_iters: int = 10_000_000) -> np.ndarray:
    """Tightly converged V* used as ground truth by the diagnostics."""
    result = value_iterate(mdp, cfg=SolveConfig(epsilon=tolerance, max_iters=max_iters))
    if not result.converged:
        raise NoConvergence("reference value iteration did not converge")
    return result.values


# -- error-bound diagnostics -------------------------------------------------------------------

def _chosen_rows(mdp: TabularMdp, actions: np.ndarray) -> sp.csr_matrix:
    """Rows P*Gamma of the chosen action per state; end actions and terminal states give empty rows."""
    n = mdp.n_states
    actions = np.asarray(actions)
    live = (actions < mdp.actions.n_nonend) & ~mdp.space.terminal_mask
    states = np.flatnonzero(live)
    picker = sp.csr_matrix((np.ones(states.size), (states, actions[live] * n + states)),
                           shape=(n, mdp.nonend_rows))
    return (picker @ mdp.kernel_pg).tocsr()


def _row_reduce(matrix: sp.csr_matrix, values: np.ndarray, op) -> np.ndarray:
    """Per-row ``op`` of entry * values[column] over stored entries; zero for empty rows."""
    out = np.zeros(matrix.shape[0])
    products = matrix.data * values[matrix.indices]
    nonempty = np.flatnonzero(np.diff(matrix.indptr))
    if nonempty.size:
        out[nonempty] = op.reduceat(products, matrix.indptr[nonempty])
    return out


def _row_max_discount(mdp: TabularMdp, actions: np.ndarray) -> np.ndarray:
    """Largest discount over successors with positive probability under the chosen action."""
    n = mdp.n_states
    positive = mdp.transition.data > 0
    disc = mdp._with_data(np.where(positive, mdp.discount, 0.0))[: mdp.nonend_rows]
    actions = np.asarray(actions)
    live = (actions < mdp.actions.n_nonend) & ~mdp.space.terminal_mask
    states = np.flatnonzero(live)
    picker = sp.csr_matrix((np.ones(states.size), (states, actions[live] * n + states)),
                           shape=(n, mdp.nonend_rows))
    chosen = (picker @ disc).tocsr()
    return np.maximum(_row_reduce(chosen, np.ones(n), np.maximum), 0.0)


def propagate_bounds(mdp: TabularMdp, optimal_values: np.ndarray, err_min: np.ndarray, err_max: np.ndarray,
                     next_actions: np.ndarray, optimal: np.ndarray | None = None):
    """One step of the per-state error bounds.

    Returns (fine_min, fine_max, coarse_min, coarse_max): the fine bounds are
    expectations of Gamma * err under the optimal action (lower) and the next greedy
    action (upper); the coarse bounds replace each expectation with a min or max
    over successors.
    """
    optimal = optimal_actions(mdp, optimal_values) if optimal is None else optimal
    lower_rows = _chosen_rows(mdp, optimal)
    upper_rows = _chosen_rows(mdp, next_actions)
    fine_min = lower_rows @ err_min
    fine_max = upper_rows @ err_max
    coarse_min = _row_reduce(_discount_rows(mdp, optimal), err_min, np.minimum)
    coarse_max = _row_reduce(_discount_rows(mdp, next_actions), err_max, np.maximum)
    return fine_min, fine_max, coarse_min, coarse_max


def _discount_rows(mdp: TabularMdp, actions: np.ndarray) -> sp.csr_matrix:
    """Discount entries (not probability-weighted) of the chosen action's positive-probability successors."""
    n = mdp.n_states
    actions = np.asarray(actions)
    live = (actions < mdp.actions.n_nonend) & ~mdp.space.terminal_mask
    states = np.flatnonzero(live)
    picker = sp.csr_matrix((np.ones(states.size), (states, actions[live] * n + states)),
                           shape=(n, mdp.nonend_rows))
    disc = mdp._with_data(mdp.discount)[: mdp.nonend_rows]
    out = (picker @ disc).tocsr()
    out.sort_indices()
    return out


@dataclass(eq=False)
class BoundTrace:
    """Per-iteration error bounds; index i bounds V_i - V*."""

    err_min: list[np.ndarray]
    err_max: list[np.ndarray]
    actual: list[np.ndarray]
    coarse_min: list[np.ndarray]
    coarse_max: list[np.ndarray]

    def max_violation(self) -> float:
        worst = 0.0
        for lo, hi, act in zip(self.err_min, self.err_max, self.actual):
            worst = max(worst, float(np.max(lo - act, initial=0.0)), float(np.max(act - hi, initial=0.0)))
        return worst

    def min_slack(self) -> float:
        slack = math.inf
        for lo, hi, act in zip(self.err_min, self.err_max, self.actual):
            slack = min(slack, float(np.min(act - lo, initial=math.inf)), float(np.min(hi - act, initial=math.inf)))
        return slack


def bound_trace(mdp: TabularMdp, result: SolveResult, optimal_values: np.ndarray,
                err_min_init: np.ndarray | None = None, err_max_init: np.ndarray | None = None) -> BoundTrace:
    """Propagate the bounds along a recorded VI run; defaults start from the exact initial error."""
    if not result.value_trace:
        raise ValueError("bound_trace needs a run recorded with record=True")
    actual0 = result.value_trace[0] - optimal_values
    lo = actual0.copy() if err_min_init is None else np.asarray(err_min_init, dtype=float)
    hi = actual0.copy() if err_max_init is None else np.asarray(err_max_init, dtype=float)
    c_lo, c_hi = lo.copy(), hi.copy()
    optimal = optimal_actions(mdp, optimal_values)
    lower_rows = _chosen_rows(mdp, optimal)
    lower_disc = _discount_rows(mdp, optimal)
    trace = BoundTrace([lo], [hi], [actual0], [c_lo], [c_hi])
    for values, nxt in zip(result.value_trace[1:], result.greedy_trace):
        upper_rows = _chosen_rows(mdp, nxt)
        upper_disc = _discount_rows(mdp, nxt)
        lo, hi = lower_rows @ lo, upper_rows @ hi
        c_lo = _row_reduce(lower_disc, c_lo, np.minimum)
        c_hi = _row_reduce(upper_disc, c_hi, np.maximum)
        trace.err_min.append(lo)
        trace.err_max.append(hi)
        trace.coarse_min.append(c_lo)
        trace.coarse_max.append(c_hi)
        trace.actual.append(values - optimal_values)
    return trace


def propagated_iteration_count(mdp: TabularMdp, err_min_init: np.ndarray, err_max_init: np.ndarray,
                               epsilon: float, optimal_values: np.ndarray,
                               greedy_trace: Sequence[np.ndarray] | None = None,
                               max_iterations: int = 1_000_000) -> float:
    """Iterations until both propagated bounds drop below epsilon; ``inf`` past ``max_iterations``.

    Greedy actions beyond ``greedy_trace`` (or all of them when it is absent) are the
    optimal actions.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    greedy_trace = list(greedy_trace or [])
    optimal = optimal_actions(mdp, optimal_values)
    lower_rows = _chosen_rows(mdp, optimal)
    lo = np.asarray(err_min_init, dtype=float)
    hi = np.asarray(err_max_init, dtype=float)
    upper_cache: dict[int, sp.csr_matrix] = {}
    for i in range(max_iterations + 1):
        if max(np.max(np.abs(lo), initial=0.0), np.max(np.abs(hi), initial=0.0)) < epsilon:
            return i
        key = min(i + 1, len(greedy_trace) + 1)
        if key not in upper_cache:
            upper_cache[key] = _chosen_rows(mdp, greedy_trace[key - 1] if key <= len(greedy_trace) else optimal)
        lo, hi = lower_rows @ lo, upper_cache[key] @ hi
    return math.inf


def iteration_bound(mdp: TabularMdp, err_min_init: np.ndarray, err_max_init: np.ndarray, epsilon: float,
                    optimal_values: np.ndarray, greedy_trace: Sequence[np.ndarray] | None = None,
                    max_iterations: int = 1_000_000) -> tuple[float, float]:
    """(N, N'): iterations until the propagated bounds drop below epsilon, and the closed-form cap.

    N comes from ``propagated_iteration_count``.  Raises Unbounded when the
    closed-form cap is infinite.
    """
    n_bound = propagated_iteration_count(mdp, err_min_init, err_max_init, epsilon, optimal_values, greedy_trace,
                                         max_iterations)
    greedy_trace = list(greedy_trace or [])
    optimal = optimal_actions(mdp, optimal_values)

    def actions_at(i: int) -> np.ndarray:
        return greedy_trace[i - 1] if i <= len(greedy_trace) else optimal

    gamma_star = float(_row_max_discount(mdp, optimal).max(initial=0.0))
    norm_min = float(np.max(np.abs(err_min_init), initial=0.0))
    norm_max = float(np.max(np.abs(err_max_init), initial=0.0))
    log_term = _log_steps(gamma_star, epsilon, norm_min)
    n_vi = _product_steps(mdp, actions_at, len(greedy_trace), epsilon, norm_max, max_iterations)
    n_prime = max(log_term, n_vi)
    if math.isinf(n_prime):
        raise Unbounded("closed-form iteration bound is infinite (discount product never contracts)")
    return n_bound, n_prime


def _log_steps(gamma: float, epsilon: float, norm: float) -> float:
    if norm == 0.0 or epsilon / norm >= 1.0:
        return 0
    if gamma >= 1.0:
        return math.inf
    if gamma == 0.0:
        return 1
    return math.ceil(math.log(epsilon / norm) / math.log(gamma))


def _product_steps(mdp, actions_at, trace_length: int, epsilon: float, norm: float, max_iterations: int) -> float:
    """Smallest N with the product of per-iteration max discounts below epsilon / norm."""
    if norm == 0.0:
        return 0
    target = epsilon / norm
    product = 1.0
    cache: dict[int, float] = {}
    for i in range(1, max_iterations + 1):
        key = min(i, trace_length + 1)
        if key not in cache:
            cache[key] = float(_row_max_discount(mdp, actions_at(i)).max(initial=0.0))
        factor = cache[key]
        product *= factor
        if product < target:
            return i
        if i > trace_length and factor >= 1.0:
            return math.inf
    return math.inf


def local_update_bounds(mdp: TabularMdp, optimal_values: np.ndarray, current_values: np.ndarray,
                        next_actions: np.ndarray, optimal: np.ndarray | None = None):
    """Sandwich on the next error from the current one, plus the scalar max-discount bound.

    Returns (lower, upper, scalar) where lower <= Err_{i+1} <= upper and
    |Err_{i+1}| <= scalar per state.
    """
    optimal = optimal_actions(mdp, optimal_values) if optimal is None else optimal
    err = np.asarray(current_values, dtype=float) - optimal_values
    lower = _chosen_rows(mdp, optimal) @ err
    upper = _chosen_rows(mdp, next_actions) @ err
    gamma = np.maximum(_row_max_discount(mdp, optimal), _row_max_discount(mdp, next_actions))
    support = _discount_rows(mdp, next_actions)
    support.data = np.ones_like(support.data)
    worst = _row_reduce(support, np.abs(err), np.maximum)
    return lower, upper, gamma * worst


@dataclass(frozen=True)
class SavingsReport:
    flat_iterations: int
    level_iterations: tuple[int, ...]
    total: int
    savings: int
    warm_start_iterations: int | None = None
    cold_start_iterations: int | None = None
    warm_start_savings: int | None = None
    guaranteed_reduction: float | None = None


def transfer_savings_report(flat_iters: int, mmdp_iters_per_level: Sequence[int],
                            warm_start_iterations: int | None = None, cold_start_iterations: int | None = None,
                            predicted_iterations: float | None = None) -> SavingsReport:
    """Measured totals and savings; ``guaranteed_reduction`` is cold - predicted - 1 when both are given."""
    levels = tuple(int(x) for x in mmdp_iters_per_level)
    total = sum(levels)
    warm_savings = None
    if warm_start_iterations is not None and cold_start_iterations is not None:
        warm_savings = cold_start_iterations - warm_start_iterations
    guaranteed = None
    if predicted_iterations is not None and cold_start_iterations is not None:
        guaranteed = cold_start_iterations - predicted_iterations - 1
    return SavingsReport(int(flat_iters), levels, total, int(flat_iters) - total, warm_start_iterations,
                         cold_start_iterations, warm_savings, guaranteed)
