"""Batch experiments: curricula, flat baselines, diagnostics, and their artifacts.

Each experiment learns its curricula with one shared skills registry, solves every
item again with flat value iteration, runs the requested diagnostics, and writes
four files into ``<output dir>/<experiment id>/``:

* ``curves.csv``: mean initial value per iteration, one phase per solve
  (``flat``, ``level-3``, ``level-2``, ``level-1``).  Iteration 0 is the starting
  point; rows 1..n are the counted iterations, so the rows of a phase add up to
  the iteration totals in the summary.
* ``bounds.csv``: per-iteration summary of the propagated error bounds.
* ``heatmaps.json``: per-state discount at the optimal action, last-change
  iteration, and log relative error and bound width.
* ``summary.json``: iteration totals, savings, iteration bounds, oracle
  deviations, and the outcome of every check.

Artifacts contain no timings or other run-dependent data, so reruns with the
same configuration are byte-identical.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .compression import rollout_oracle
from .curriculum import learn_mdp
from .environments import CURRICULA, build_curriculum, build_environment, curriculum_closure, prerequisites
from .errors import ConfigError, MlmdpError, Unbounded, UnknownSubject
from .mdp import TabularMdp
from .mmdp import MmdpResult
from .solver import (
    SolveConfig,
    SolveResult,
    bound_trace,
    iteration_bound,
    optimal_actions,
    propagated_iteration_count,
    reference_values,
    transfer_savings_report,
    value_iterate,
)
from .transfer import SkillsRegistry

SCHEMA_VERSION = 1
BOUND_TOLERANCE = 1e-8
ORACLE_STANDARD_ERRORS = 4.0
ORACLE_ABSOLUTE = 1e-9
# Conditional reward and discount means are only compared where enough rollouts stopped.
ORACLE_MIN_COUNT = 1000

EXIT_OK, EXIT_CONFIG, EXIT_SOLVE, EXIT_ACCEPTANCE = 0, 1, 2, 3

CURVE_COLUMNS = ("experiment", "run", "phase", "iteration", "mean_initial_value")
BOUND_COLUMNS = ("experiment", "run", "level", "iteration", "max_violation", "min_slack", "max_abs_error",
                 "max_bound_width")


# -- configuration -------------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationConfig:
    """An extra solve of one environment with build options, on a copy of the registry."""

    run: str
    environment: str
    options: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class OracleConfig:
    """Monte-Carlo validation of compressed tables for the listed ``env@levelK`` subjects."""

    subjects: tuple[str, ...] = ()
    samples: int = 100_000
    seed: int = 0
    max_states: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    curricula: tuple[str, ...] = ()
    flat: bool = True
    bounds: tuple[str, ...] = ()
    ablations: tuple[AblationConfig, ...] = ()
    oracle: OracleConfig = OracleConfig()
    solver: SolveConfig = SolveConfig()
    output_dir: str = "mlmdp-out"


@dataclass(frozen=True)
class BatchConfig:
    experiments: tuple[ExperimentConfig, ...]
    output_dir: str = "mlmdp-out"
    workers: int = 1

    def __post_init__(self) -> None:
        ids = [e.experiment_id for e in self.experiments]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ConfigError(f"duplicate experiment ids {duplicates}")
        if self.workers < 1:
            raise ConfigError("workers must be at least one")


def split_subject(subject: str) -> tuple[str, int]:
    """``traffic/kappa_2@level2`` -> (``traffic/kappa_2``, 2)."""
    env_id, marker, level = subject.rpartition("@level")
    if not marker or not level.isdigit() or int(level) < 1:
        raise ConfigError(f"subject {subject!r} is not of the form <environment>@level<k>")
    return env_id, int(level)


def _solver_from_json(doc: Mapping[str, Any] | None) -> SolveConfig:
    doc = dict(doc or {})
    for key in ("t_max", "v_min"):
        if isinstance(doc.get(key), str):
            doc[key] = float(doc[key])
    try:
        return SolveConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad solver config: {exc}") from None


def _experiment_from_json(doc: Mapping[str, Any], output_dir: str) -> ExperimentConfig:
    known = {"id", "curricula", "flat", "bounds", "ablations", "oracle", "solver"}
    if not isinstance(doc, Mapping) or "id" not in doc:
        raise ConfigError("each experiment needs an id")
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"experiment {doc['id']!r}: unknown keys {sorted(unknown)}")
    try:
        ablations = tuple(AblationConfig(a["run"], a["environment"], dict(a.get("options", {})))
                          for a in doc.get("ablations", ()))
        oracle_doc = dict(doc.get("oracle", {}))
        oracle = OracleConfig(tuple(oracle_doc.pop("subjects", ())), **oracle_doc)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"experiment {doc['id']!r}: {exc}") from None
    config = ExperimentConfig(str(doc["id"]), tuple(doc.get("curricula", ())), bool(doc.get("flat", True)),
                              tuple(doc.get("bounds", ())), ablations, oracle, _solver_from_json(doc.get("solver")),
                              output_dir)
    validate_experiment(config)
    return config


def validate_experiment(config: ExperimentConfig) -> None:
    """Resolve every named curriculum, environment and subject without solving anything."""
    try:
        learned = {env_id for name in curriculum_closure(config.curricula)
                   for env_id in _curriculum_env_ids(name)}
        for subject in config.bounds + config.oracle.subjects:
            env_id, level = split_subject(subject)
            if env_id not in learned:
                raise ConfigError(f"subject {subject!r} is not part of the experiment's curricula")
        runs = [a.run for a in config.ablations]
        if len(set(runs)) != len(runs) or set(runs) & learned:
            raise ConfigError("ablation run names must be unique and differ from environment ids")
        for ablation in config.ablations:
            prerequisites(ablation.environment)
    except UnknownSubject as exc:
        raise ConfigError(str(exc)) from None
    if config.oracle.samples < 1:
        raise ConfigError("oracle samples must be positive")


def _curriculum_env_ids(name: str) -> list[str]:
    return [env_id for _, _, env_id in CURRICULA[name]]


def batch_from_json(doc: Mapping[str, Any], output_override: str | None = None) -> BatchConfig:
    if not isinstance(doc, Mapping) or not isinstance(doc.get("experiments"), list):
        raise ConfigError("a batch config is an object with an 'experiments' list")
    output_dir = output_override or str(doc.get("output_dir", "mlmdp-out"))
    experiments = tuple(_experiment_from_json(e, output_dir) for e in doc["experiments"])
    return BatchConfig(experiments, output_dir, int(doc.get("workers", 1)))


def load_batch(path: str | os.PathLike, output_override: str | None = None) -> BatchConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return batch_from_json(doc, output_override)


BUILTIN_EXPERIMENTS: dict[str, dict[str, Any]] = {
    "mazebase-full": {
        "id": "mazebase-full",
        "curricula": ["mazebase", "mazebase-primed", "mazebase-double-primed"],
        "ablations": [{"run": "mazebase/3_1@primed-without-concat", "environment": "mazebase/3_1@primed",
                       "options": {"difficulty": 2}}],
        "oracle": {"subjects": ["mazebase/2_2@base@level2"], "samples": 100_000, "seed": 7},
    },
    "traffic": {
        "id": "traffic",
        "curricula": ["traffic", "traffic-dense"],
        "bounds": [f"traffic/kappa_{n}@level2" for n in range(1, 7)],
        "ablations": [{"run": "traffic/kappa_7-cold", "environment": "traffic/kappa_7",
                       "options": {"warm_start": False}}],
        "oracle": {"subjects": ["traffic/kappa_1@level2"], "samples": 100_000, "seed": 11, "max_states": 24},
    },
}


def builtin_batch(names: Sequence[str], output_dir: str = "mlmdp-out") -> BatchConfig:
    unknown = [n for n in names if n not in BUILTIN_EXPERIMENTS]
    if unknown:
        raise UnknownSubject(f"no experiment {unknown[0]!r}")
    return batch_from_json({"experiments": [BUILTIN_EXPERIMENTS[n] for n in names]}, output_dir)


# -- diagnostics ---------------------------------------------------------------------------------

def reachable_states(mdp: TabularMdp) -> np.ndarray:
    """States reachable from the initial states through available non-end actions."""
    n = mdp.n_states
    step = mdp.kernel_p.tocoo()
    keep = step.data > 0
    rows = step.row[keep]
    origin, target = rows % n, step.col[keep]
    action = rows // n
    keep = mdp.actions.available[origin, action]
    origin, target = origin[keep], target[keep]
    order = np.argsort(origin, kind="stable")
    origin, target = origin[order], target[order]
    starts = np.searchsorted(origin, np.arange(n + 1))
    seen = np.zeros(n, dtype=bool)
    frontier = np.unique(mdp.space.initial)
    seen[frontier] = True
    while frontier.size:
        nxt = np.concatenate([target[starts[s]:starts[s + 1]] for s in frontier]) if frontier.size else frontier
        nxt = np.unique(nxt[~seen[nxt]]) if nxt.size else nxt
        seen[nxt] = True
        frontier = nxt
    return seen


def greedy_mismatches(mdp: TabularMdp, mmdp_choice: np.ndarray, flat_choice: np.ndarray) -> np.ndarray:
    """Reachable non-terminal states where the two greedy actions differ."""
    live = reachable_states(mdp) & ~mdp.space.terminal_mask
    return np.flatnonzero(live & (np.asarray(mmdp_choice) != np.asarray(flat_choice)))


@dataclass(frozen=True)
class IterationBoundRecord:
    phase: str
    actual: int
    bound: float | None
    cap: float

    @property
    def ordered(self) -> bool:
        """The propagated-bound count never exceeds the closed-form cap."""
        return self.bound is None or self.bound <= self.cap


def iteration_bound_record(phase: str, mdp: TabularMdp, result: SolveResult, start: np.ndarray,
                           optimal_values: np.ndarray, epsilon: float) -> IterationBoundRecord:
    err = np.asarray(start, dtype=float) - optimal_values
    err[mdp.space.terminal_mask] = 0.0
    trace = result.greedy_trace or None
    try:
        n_bound, n_cap = iteration_bound(mdp, err, err, epsilon, optimal_values, trace)
    except Unbounded:
        # An infinite closed-form cap orders trivially; the finite count is still reported.
        n_bound = propagated_iteration_count(mdp, err, err, epsilon, optimal_values, trace)
        n_cap = math.inf
    return IterationBoundRecord(phase, result.stats.iterations, None if math.isinf(n_bound) else n_bound, n_cap)


@dataclass(frozen=True)
class OracleDeviation:
    """Worst normalized deviation of one compressed action's analytic row from its rollout estimate."""

    state: int
    action: int
    worst_excess: float
    compared: int

    @property
    def within(self) -> bool:
        return self.worst_excess <= 0.0


def _pair_seed(seed: int, level: int, state: int, action: int) -> int:
    return int(np.random.SeedSequence([seed, level, state, action]).generate_state(1)[0])


def validate_level(result: MmdpResult, level: int, samples: int, seed: int,
                   max_states: int | None = None) -> list[OracleDeviation]:
    """Compare every available compressed action of ``level`` with Monte-Carlo rollouts on the level below.

    A probability passes when |analytic - estimate| <= 4 SE + 1e-9, where SE is the
    larger of the empirical and analytic binomial standard errors.  Conditional
    reward and discount means are compared the same way where at least
    ``ORACLE_MIN_COUNT`` rollouts stopped.
    """
    if not 2 <= level <= result.difficulty:
        raise ConfigError(f"level {level} has no compressed tables (difficulty {result.difficulty})")
    upper, lower = result.levels[level - 1], result.levels[level - 2]
    vocabulary = result.vocabularies[level - 2]
    live = np.flatnonzero(~upper.space.terminal_mask)
    if max_states is not None and live.size > max_states:
        rng = np.random.default_rng(seed)
        live = np.sort(rng.choice(live, size=max_states, replace=False))
    deviations = []
    for action, (_, policy) in enumerate(vocabulary):
        for state in live.tolist():
            if not upper.actions.available[state, action]:
                continue
            estimate = rollout_oracle(lower, policy, state, samples, _pair_seed(seed, level, state, action))
            probs, rewards, discounts = upper.row(state, action)
            worst, compared = -math.inf, 0
            for target in sorted(set(probs) | set(estimate.probability)):
                p = probs.get(target, 0.0)
                p_hat = estimate.probability.get(target, 0.0)
                se = max(estimate.probability_se.get(target, 0.0), math.sqrt(p * (1 - p) / samples))
                worst = max(worst, abs(p - p_hat) - (ORACLE_STANDARD_ERRORS * se + ORACLE_ABSOLUTE))
                compared += 1
                if estimate.counts.get(target, 0) >= ORACLE_MIN_COUNT and target in probs:
                    for analytic, mean, err in ((rewards[target], estimate.reward, estimate.reward_se),
                                                (discounts[target], estimate.discount, estimate.discount_se)):
                        excess = abs(analytic - mean[target]) - (ORACLE_STANDARD_ERRORS * err[target]
                                                                 + ORACLE_ABSOLUTE)
                        worst = max(worst, excess)
                        compared += 1
            deviations.append(OracleDeviation(state, action, worst, compared))
    return deviations


def discount_at_optimal(mdp: TabularMdp, optimal_values: np.ndarray) -> np.ndarray:
    """Expected discount of the optimal action's transition; zero where the optimum ends or the state is terminal."""
    n = mdp.n_states
    chosen = optimal_actions(mdp, optimal_values)
    row_discount = np.asarray(mdp.kernel_pg.sum(axis=1)).ravel()
    out = np.zeros(n)
    live = (chosen < mdp.actions.n_nonend) & ~mdp.space.terminal_mask
    states = np.flatnonzero(live)
    out[states] = row_discount[chosen[states] * n + states]
    return out


def _log_relative(numerator: np.ndarray, scale: np.ndarray) -> list[float | None]:
    """log10(|numerator| / |scale|); None where either side is zero."""
    out: list[float | None] = []
    for num, den in zip(np.abs(numerator).tolist(), np.abs(scale).tolist()):
        out.append(math.log10(num / den) if num > 0 and den > 0 else None)
    return out


# -- running -------------------------------------------------------------------------------------

@dataclass
class RunRecord:
    """One solved MDP (curriculum item or ablation) and its baselines."""

    run: str
    environment: str
    kind: str
    mdp: TabularMdp
    result: MmdpResult | None = None
    flat: SolveResult | None = None
    error: str | None = None
    optimal_values: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class ExperimentOutcome:
    experiment_id: str
    exit_code: int
    summary: dict
    directory: Path


def _phase(level: int) -> str:
    return f"level-{level}"


class _Experiment:
    def __init__(self, config: ExperimentConfig, directory: Path):
        self.config = config
        self.directory = directory
        self.registry = SkillsRegistry()
        self.records: list[RunRecord] = []
        self.bound_subjects = {split_subject(s) for s in config.bounds}
        self.oracle_subjects = [split_subject(s) for s in config.oracle.subjects]
        self.curves: list[tuple] = []
        self.bound_rows: list[tuple] = []
        self.heatmaps: list[dict] = []
        self.bound_summary: list[dict] = []
        self.iteration_bounds: dict[str, list[IterationBoundRecord]] = {}
        self.oracle_summary: list[dict] = []
        self.amortized: dict[str, dict] = {}
        self.solve_failed = False

    # solving

    def _solve(self, run: str, env_id: str, kind: str, mdp: TabularMdp, hint, registry: SkillsRegistry,
               record: bool) -> RunRecord:
        entry = RunRecord(run, env_id, kind, mdp)
        try:
            entry.result = learn_mdp(mdp, hint, registry, config=self.config.solver, record=record)
            if entry.result.error_flag.exists:
                entry.error = f"error flag raised at level {entry.result.error_flag.level}"
        except MlmdpError as exc:
            entry.error = f"{type(exc).__name__}: {exc}"
        if self.config.flat:
            entry.flat = value_iterate(mdp, cfg=self.config.solver, record=record)
        if entry.error is not None:
            self.solve_failed = True
        return entry

    def learn(self) -> None:
        for name in curriculum_closure(self.config.curricula):
            curriculum = build_curriculum(name)
            totals = {"mmdp": 0, "flat": 0, "items": []}
            for item in curriculum.items:
                record = any(env == item.name for env, _ in self.bound_subjects)
                entry = self._solve(item.name, item.name, "curriculum", item.mdp, item.hint, self.registry, record)
                self.records.append(entry)
                totals["items"].append(item.name)
                if entry.result is not None:
                    totals["mmdp"] += entry.result.total_iterations
                if entry.flat is not None:
                    totals["flat"] += entry.flat.stats.iterations
            self.amortized[name] = totals
        for ablation in self.config.ablations:
            env = build_environment(ablation.environment, **dict(ablation.options))
            registry = copy.deepcopy(self.registry)
            self.records.append(self._solve(ablation.run, ablation.environment, "ablation", env.mdp, env.hint,
                                            registry, False))

    # diagnostics

    @staticmethod
    def reference(entry: RunRecord) -> None:
        """Tightly converged V* for every solved level and for the base MDP."""
        if entry.result is not None:
            for level, mdp in enumerate(entry.result.levels, start=1):
                if entry.result.solutions[level - 1] is not None:
                    entry.optimal_values[level] = reference_values(mdp)
        if 1 not in entry.optimal_values:
            entry.optimal_values[1] = reference_values(entry.mdp)

    def diagnose(self, entry: RunRecord) -> dict:
        eps = self.config.solver.epsilon
        result, flat = entry.result, entry.flat
        doc: dict[str, Any] = {"run": entry.run, "environment": entry.environment, "kind": entry.kind,
                               "error": entry.error}
        bounds: list[IterationBoundRecord] = []
        self.reference(entry)
        if result is not None:
            doc["difficulty"] = result.difficulty
            doc["iterations_by_level"] = {str(k): v for k, v in sorted(result.iterations_by_level().items())}
            doc["total_iterations"] = result.total_iterations
            doc["extracted"] = list(result.extracted)
            doc["solve_order"] = list(result.solve_order)
            doc["warm_starts"] = {str(level): {"source": w.source, "evaluation_sweeps": w.evaluation_sweeps}
                                  for level, w in enumerate(result.warm_starts, start=1) if w is not None}
            for level in result.solve_order:
                solution = result.solutions[level - 1]
                self._curve(entry.run, _phase(level), solution)
                mdp = result.levels[level - 1]
                bounds.append(iteration_bound_record(_phase(level), mdp, solution,
                                                     result.warm_starts[level - 1].values,
                                                     entry.optimal_values[level], eps))
                if (entry.environment, level) in self.bound_subjects and entry.kind == "curriculum":
                    self._bounds(entry.run, level, mdp, solution, entry.optimal_values[level])
        if flat is not None:
            self._curve(entry.run, "flat", flat)
            doc["flat_iterations"] = flat.stats.iterations
            bounds.append(iteration_bound_record("flat", entry.mdp, flat, np.zeros(entry.mdp.n_states),
                                                 entry.optimal_values[1], eps))
        if result is not None and flat is not None and result.final is not None:
            per_level = result.iterations_by_level()
            report = transfer_savings_report(flat.stats.iterations, [per_level[k] for k in sorted(per_level)])
            doc["savings"] = report.savings
            mismatches = greedy_mismatches(result.levels[0], result.final.policy.argmax(), flat.policy.argmax())
            doc["greedy_mismatches"] = int(mismatches.size)
            live = reachable_states(result.levels[0]) & ~result.levels[0].space.terminal_mask
            doc["greedy_compared_states"] = int(live.sum())
            doc["max_value_gap"] = float(np.max(np.abs(result.final.values - flat.values), initial=0.0))
        doc["iteration_bounds"] = [{"phase": b.phase, "actual": b.actual, "bound": b.bound,
                                    "cap": None if math.isinf(b.cap) else b.cap, "ordered": b.ordered}
                                   for b in bounds]
        self.iteration_bounds[entry.run] = bounds
        return doc

    def _curve(self, run: str, phase: str, solution: SolveResult) -> None:
        experiment = self.config.experiment_id
        self.curves.append((experiment, run, phase, 0, solution.initial_mean))
        for i, (mean, _) in enumerate(solution.history[: solution.stats.iterations], start=1):
            self.curves.append((experiment, run, phase, i, mean))

    def _bounds(self, run: str, level: int, mdp: TabularMdp, solution: SolveResult, optimal: np.ndarray) -> None:
        trace = bound_trace(mdp, solution, optimal)
        experiment = self.config.experiment_id
        for i, (lo, hi, actual) in enumerate(zip(trace.err_min, trace.err_max, trace.actual)):
            violation = max(float(np.max(lo - actual, initial=0.0)), float(np.max(actual - hi, initial=0.0)))
            slack = min(float(np.min(actual - lo, initial=math.inf)), float(np.min(hi - actual, initial=math.inf)))
            self.bound_rows.append((experiment, run, level, i, violation, slack,
                                    float(np.max(np.abs(actual), initial=0.0)),
                                    float(np.max(hi - lo, initial=0.0))))
        self.bound_summary.append({"run": run, "level": level, "sweeps": len(trace.actual) - 1,
                                   "max_violation": trace.max_violation(), "min_slack": trace.min_slack(),
                                   "within_tolerance": trace.max_violation() <= BOUND_TOLERANCE})
        self.heatmaps.append({
            "run": run,
            "level": level,
            "discount_at_optimal": discount_at_optimal(mdp, optimal).tolist(),
            "convergence_iteration": [int(x) for x in solution.convergence_iteration],
            "log10_relative_error": _log_relative(trace.actual[-1], optimal),
            "log10_relative_bound_width": _log_relative(trace.err_max[-1] - trace.err_min[-1], optimal),
        })

    def oracle(self) -> None:
        cfg = self.config.oracle
        by_env = {entry.environment: entry for entry in self.records if entry.kind == "curriculum"}
        for env_id, level in self.oracle_subjects:
            entry = by_env[env_id]
            if entry.result is None or level > entry.result.difficulty:
                self.oracle_summary.append({"subject": f"{env_id}@level{level}", "pairs": 0, "failures": None,
                                            "worst_excess": None, "error": "level not available"})
                continue
            deviations = validate_level(entry.result, level, cfg.samples, cfg.seed, cfg.max_states)
            failures = [d for d in deviations if not d.within]
            self.oracle_summary.append({
                "subject": f"{env_id}@level{level}",
                "pairs": len(deviations),
                "compared_entries": sum(d.compared for d in deviations),
                "failures": len(failures),
                "worst_excess": max((d.worst_excess for d in deviations), default=None),
                "failing_pairs": [[d.state, d.action] for d in failures],
                "error": None,
            })

    # output

    def run(self) -> ExperimentOutcome:
        self.learn()
        runs = [self.diagnose(entry) for entry in self.records]
        self.oracle()
        checks = self.checks(runs)
        failed_checks = sorted(name for name, ok in checks.items() if not ok)
        if self.solve_failed:
            exit_code, status = EXIT_SOLVE, "solve-error"
        elif failed_checks:
            exit_code, status = EXIT_ACCEPTANCE, "acceptance-violation"
        else:
            exit_code, status = EXIT_OK, "ok"
        summary = {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.config.experiment_id,
            "status": status,
            "exit_code": exit_code,
            "failed_checks": failed_checks,
            "checks": checks,
            "registry": self.registry.names(),
            "runs": runs,
            "amortized": self.amortized,
            "bounds": self.bound_summary,
            "oracle": self.oracle_summary,
            "solver": {"epsilon": self.config.solver.epsilon, "max_iters": self.config.solver.max_iters,
                       "tie_tolerance": self.config.solver.tie_tolerance},
        }
        self.write(summary)
        return ExperimentOutcome(self.config.experiment_id, exit_code, summary, self.directory)

    def checks(self, runs: list[dict]) -> dict[str, bool]:
        checks = {
            "greedy_equality": all(r.get("greedy_mismatches", 0) == 0 for r in runs),
            "iteration_bound_order": all(b["ordered"] for r in runs for b in r["iteration_bounds"]),
            "target_savings": all(r["savings"] > 0 for r in runs
                                  if r["kind"] == "curriculum" and r.get("difficulty", 1) > 1 and "savings" in r),
            "bound_containment": all(b["within_tolerance"] for b in self.bound_summary),
            "compression_oracle": all(o["failures"] == 0 for o in self.oracle_summary),
        }
        return checks

    def write(self, summary: dict) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        write_csv(self.directory / "curves.csv", CURVE_COLUMNS, self.curves)
        write_csv(self.directory / "bounds.csv", BOUND_COLUMNS, self.bound_rows)
        write_json(self.directory / "heatmaps.json", {"schema_version": SCHEMA_VERSION,
                                                      "experiment": self.config.experiment_id,
                                                      "heatmaps": self.heatmaps})
        write_json(self.directory / "summary.json", summary)


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[tuple]) -> None:
    buffer = io.StringIO()
    buffer.write(f"# schema_version={SCHEMA_VERSION} columns={','.join(columns)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    path.write_text(buffer.getvalue())


def _finite(value):
    """JSON-safe copy: non-finite floats become None, numpy scalars become Python numbers."""
    if isinstance(value, dict):
        return {str(k): _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path: Path, doc: Mapping) -> None:
    path.write_text(json.dumps(_finite(doc), indent=1, sort_keys=True, allow_nan=False) + "\n")


def run_experiment(config: ExperimentConfig, output_dir: str | os.PathLike | None = None) -> ExperimentOutcome:
    directory = Path(output_dir or config.output_dir) / config.experiment_id.replace("/", "_")
    return _Experiment(config, directory).run()


def _run_in_worker(args: tuple[ExperimentConfig, str]) -> tuple[str, int]:
    config, output_dir = args
    outcome = run_experiment(config, output_dir)
    return outcome.experiment_id, outcome.exit_code


def run_batch(batch: BatchConfig) -> dict[str, int]:
    """Run every experiment; returns exit codes by experiment id in config order."""
    jobs = [(config, batch.output_dir) for config in batch.experiments]
    if batch.workers == 1 or len(jobs) <= 1:
        results = [_run_in_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=batch.workers) as pool:
            results = list(pool.map(_run_in_worker, jobs))
    return dict(results)


def batch_exit_code(codes: Mapping[str, int]) -> int:
    """Solve errors outrank acceptance violations."""
    values = set(codes.values())
    for code in (EXIT_SOLVE, EXIT_ACCEPTANCE):
        if code in values:
            return code
    return EXIT_OK


# -- single-subject commands ---------------------------------------------------------------------

def learn_up_to(env_id: str, config: SolveConfig | None = None, record: bool = False
                ) -> tuple[MmdpResult, SkillsRegistry, Any]:
    """Learn everything ``env_id`` depends on, then the environment itself."""
    curricula, earlier = prerequisites(env_id)
    registry = SkillsRegistry()
    for name in curricula:
        for item in build_curriculum(name).items:
            learn_mdp(item.mdp, item.hint, registry, config=config)
    for earlier_id in earlier:
        env = build_environment(earlier_id)
        learn_mdp(env.mdp, env.hint, registry, config=config)
    env = build_environment(env_id)
    return learn_mdp(env.mdp, env.hint, registry, config=config, record=record), registry, env


def validate_compression(env_id: str, level: int = 2, samples: int = 100_000, seed: int = 0,
                         max_states: int | None = None) -> list[OracleDeviation]:
    result, _, _ = learn_up_to(env_id)
    return validate_level(result, level, samples, seed, max_states)


@dataclass(frozen=True)
class BoundCheck:
    subject: str
    sweeps: int
    max_violation: float
    min_slack: float

    @property
    def within(self) -> bool:
        return self.max_violation <= BOUND_TOLERANCE


def check_bounds(subject: str, config: SolveConfig | None = None) -> BoundCheck:
    env_id, level = split_subject(subject)
    result, _, _ = learn_up_to(env_id, config, record=True)
    if level > result.difficulty or result.solutions[level - 1] is None:
        raise ConfigError(f"{subject!r}: level {level} was not solved")
    mdp = result.levels[level - 1]
    trace = bound_trace(mdp, result.solutions[level - 1], reference_values(mdp))
    return BoundCheck(subject, len(trace.actual) - 1, trace.max_violation(), trace.min_slack())
