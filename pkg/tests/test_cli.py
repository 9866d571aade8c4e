import csv
import json

import pytest
from click.testing import CliRunner

from mlmdp.cli import main
from mlmdp.errors import ConfigError
from mlmdp.experiments import batch_from_json, split_subject


@pytest.fixture
def runner():
    return CliRunner()


def test_list_environments(runner):
    result = runner.invoke(main, ["list", "environments"])
    assert result.exit_code == 0
    names = result.output.split()
    assert "mazebase/3_1@double-primed" in names and "traffic/kappa_7" in names
    assert len(names) == 12 + 10


def test_list_everything_groups_by_kind(runner):
    result = runner.invoke(main, ["list"])
    assert result.exit_code == 0
    assert "curricula:" in result.output and "experiments:" in result.output and "  traffic" in result.output


def test_describe_environment(runner):
    result = runner.invoke(main, ["describe", "mazebase/3_1@base"])
    assert result.exit_code == 0
    doc = json.loads(result.output)
    assert doc["params"]["goal_reward"] == 1e4 and doc["params"]["success"] == 0.9


def test_describe_curriculum_and_experiment(runner):
    assert json.loads(runner.invoke(main, ["describe", "traffic-dense"]).output)["items"][1]["environment"] == \
        "traffic/kappa_7"
    assert "curricula" in json.loads(runner.invoke(main, ["describe", "traffic"]).output)


def test_describe_nothing_is_an_unknown_subject(runner):
    result = runner.invoke(main, ["describe", "nothing"])
    assert result.exit_code == 1
    record = json.loads(result.stderr if hasattr(result, "stderr") else result.output)
    assert record["error"] == "UnknownSubject"


@pytest.mark.parametrize("doc", [
    {"experiments": [{"id": "a"}, {"id": "a"}]},
    {"experiments": [{"id": "a", "curricula": ["nowhere"]}]},
    {"experiments": [{"id": "a", "curricula": ["traffic"], "bounds": ["traffic/kappa_9@level2"]}]},
    {"experiments": [{"id": "a", "curricula": ["traffic"], "bounds": ["traffic/kappa_2"]}]},
    {"experiments": [{"id": "a", "colour": "blue"}]},
    {"experiments": [{"id": "a", "solver": {"epsilon": -1}}]},
    {"runs": []},
])
def test_bad_configs_exit_with_config_error(runner, tmp_path, doc):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    result = runner.invoke(main, ["run", str(path)])
    assert result.exit_code == 1
    with pytest.raises(ConfigError):
        batch_from_json(doc)


def test_unreadable_config(runner, tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert runner.invoke(main, ["run", str(path)]).exit_code == 1
    assert runner.invoke(main, ["run", "no-such-experiment"]).exit_code == 1


def test_subject_parsing():
    assert split_subject("traffic/kappa_2@level2") == ("traffic/kappa_2", 2)
    assert split_subject("mazebase/2_2@base@level2") == ("mazebase/2_2@base", 2)
    with pytest.raises(ConfigError):
        split_subject("traffic/kappa_2@level0")


def test_run_writes_artifacts_under_the_output_override(runner, tmp_path):
    config = tmp_path / "maze.json"
    config.write_text(json.dumps({"output_dir": str(tmp_path / "ignored"),
                                  "experiments": [{"id": "maze-only", "curricula": ["mazebase"]}]}))
    out = tmp_path / "out"
    result = runner.invoke(main, ["run", str(config)], env={"MLMDP_OUT": str(out)})
    assert result.exit_code == 0, result.output
    assert not (tmp_path / "ignored").exists()
    directory = out / "maze-only"
    assert sorted(p.name for p in directory.iterdir()) == ["bounds.csv", "curves.csv", "heatmaps.json",
                                                          "summary.json"]
    summary = json.loads((directory / "summary.json").read_text())
    assert summary["schema_version"] == 1 and summary["status"] == "ok"
    assert summary["registry"] == ["id", "nav_dense", "nav", "concat"]
    lines = (directory / "curves.csv").read_text().splitlines()
    assert lines[0] == "# schema_version=1 columns=experiment,run,phase,iteration,mean_initial_value"
    rows = list(csv.DictReader(lines[1:]))
    target = [r for r in rows if r["run"] == "mazebase/3_1@base"]
    assert {r["phase"] for r in target} == {"flat", "level-3", "level-2", "level-1"}
    by_run = {r["run"]: r for r in summary["runs"]}
    assert sum(1 for r in target if r["phase"] == "level-3" and int(r["iteration"]) > 0) == \
        by_run["mazebase/3_1@base"]["iterations_by_level"]["3"]
    assert "NaN" not in (directory / "heatmaps.json").read_text()


def test_check_bounds_command(runner):
    result = runner.invoke(main, ["check-bounds", "traffic/kappa_2@level2"])
    assert result.exit_code == 0, result.output
    doc = json.loads(result.output)
    assert doc["max_violation"] <= 1e-8 and doc["sweeps"] >= 1


def test_check_bounds_rejects_a_missing_level(runner):
    result = runner.invoke(main, ["check-bounds", "traffic/basic_1@level2"])
    assert result.exit_code == 1


def test_validate_compression_command(runner):
    result = runner.invoke(main, ["validate-compression", "traffic/kappa_1", "--samples", "2000",
                                  "--max-states", "4", "--seed", "1"])
    assert result.exit_code == 0, result.output
    doc = json.loads(result.output)
    assert doc["pairs"] > 0 and doc["failures"] == 0
