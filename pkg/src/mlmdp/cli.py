"""Command-line entry point: ``mlmdp run | validate-compression | check-bounds | list | describe``.

Exit codes: 0 ok, 1 configuration error, 2 solve error, 3 acceptance violation.
Failures print a one-line JSON error record on stderr.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import experiments
from .environments import curriculum_ids, describe_curriculum, describe_environment, environment_ids
from .errors import ConfigError, MlmdpError, UnknownSubject
from .experiments import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, EXIT_SOLVE

OUTPUT_ENV = "MLMDP_OUT"


def _fail(code: int, exc: Exception) -> None:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    click.echo(json.dumps(record, sort_keys=True), err=True)
    sys.exit(code)


def _output_dir(option: str | None) -> str | None:
    return os.environ.get(OUTPUT_ENV) or option


@click.group()
@click.version_option(package_name="mlmdp")
def main() -> None:
    """Multi-level MDP solver: batch experiments and diagnostics."""


@main.command()
@click.argument("config")
@click.option("--output-dir", "-o", default=None, help="Artifact directory; MLMDP_OUT takes precedence.")
@click.option("--workers", "-j", type=int, default=None, help="Override the config's worker count.")
def run(config: str, output_dir: str | None, workers: int | None) -> None:
    """Run a batch from a JSON CONFIG path, or a built-in experiment id."""
    out = _output_dir(output_dir)
    try:
        if Path(config).is_file():
            batch = experiments.load_batch(config, out)
        elif config in experiments.BUILTIN_EXPERIMENTS:
            batch = experiments.builtin_batch([config], out or "mlmdp-out")
        else:
            raise ConfigError(f"{config!r} is neither a config file nor a built-in experiment")
        if workers is not None:
            batch = experiments.BatchConfig(batch.experiments, batch.output_dir, workers)
    except (ConfigError, UnknownSubject) as exc:
        _fail(EXIT_CONFIG, exc)
    try:
        codes = experiments.run_batch(batch)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, exc)
    except MlmdpError as exc:
        _fail(EXIT_SOLVE, exc)
    for experiment_id, code in codes.items():
        click.echo(f"{experiment_id}: exit {code}")
    sys.exit(experiments.batch_exit_code(codes))


@main.command("validate-compression")
@click.argument("environment")
@click.option("--level", type=int, default=2, show_default=True)
@click.option("--samples", type=int, default=100_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-states", type=int, default=None, help="Check a seeded sample of this many states.")
def validate_compression(environment: str, level: int, samples: int, seed: int, max_states: int | None) -> None:
    """Compare compressed tables of ENVIRONMENT with Monte-Carlo rollouts."""
    try:
        deviations = experiments.validate_compression(environment, level, samples, seed, max_states)
    except (ConfigError, UnknownSubject) as exc:
        _fail(EXIT_CONFIG, exc)
    except MlmdpError as exc:
        _fail(EXIT_SOLVE, exc)
    failures = [d for d in deviations if not d.within]
    worst = max((d.worst_excess for d in deviations), default=float("-inf"))
    click.echo(json.dumps({"subject": f"{environment}@level{level}", "pairs": len(deviations),
                           "failures": len(failures), "worst_excess": worst,
                           "failing_pairs": [[d.state, d.action] for d in failures]}, sort_keys=True))
    sys.exit(EXIT_ACCEPTANCE if failures else EXIT_OK)


@main.command("check-bounds")
@click.argument("subject")
def check_bounds(subject: str) -> None:
    """Check error-bound containment along value iteration for SUBJECT, e.g. traffic/kappa_2@level2."""
    try:
        result = experiments.check_bounds(subject)
    except (ConfigError, UnknownSubject) as exc:
        _fail(EXIT_CONFIG, exc)
    except MlmdpError as exc:
        _fail(EXIT_SOLVE, exc)
    click.echo(json.dumps({"subject": result.subject, "sweeps": result.sweeps,
                           "max_violation": result.max_violation, "min_slack": result.min_slack,
                           "tolerance": experiments.BOUND_TOLERANCE}, sort_keys=True))
    sys.exit(EXIT_OK if result.within else EXIT_ACCEPTANCE)


LISTINGS = {
    "environments": environment_ids,
    "curricula": curriculum_ids,
    "experiments": lambda: list(experiments.BUILTIN_EXPERIMENTS),
}


@main.command("list")
@click.argument("kind", required=False, type=click.Choice(sorted(LISTINGS)))
def list_subjects(kind: str | None) -> None:
    """List built-in environments, curricula, and experiments."""
    for name in ([kind] if kind else sorted(LISTINGS)):
        if kind is None:
            click.echo(f"{name}:")
        for item in LISTINGS[name]():
            click.echo(item if kind else f"  {item}")


@main.command()
@click.argument("subject")
def describe(subject: str) -> None:
    """Print the parameters of an environment, curriculum, or experiment as JSON."""
    try:
        if subject in experiments.BUILTIN_EXPERIMENTS:
            doc = experiments.BUILTIN_EXPERIMENTS[subject]
        elif subject in curriculum_ids():
            doc = describe_curriculum(subject)
        else:
            doc = describe_environment(subject)
    except UnknownSubject as exc:
        _fail(EXIT_CONFIG, exc)
    click.echo(json.dumps(doc, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
