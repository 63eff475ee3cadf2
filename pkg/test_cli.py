"""
Command-line entry point and exit codes
"""

import json
import shutil

import pytest
import yaml

from cocarry.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, build_parser, main


def test_parser_subcommands():
    parser = build_parser()
    args = parser.parse_args(["optimize", "--config", "s.yaml", "--seed", "3"])
    assert args.command == "optimize"
    assert args.seed == 3
    args = parser.parse_args(["run", "--batch", "dir", "--workers", "2"])
    assert args.workers == 2


def test_usage_error_prints_subcommand_help(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["plan", "--seed", "-4"])
    assert exc.value.code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "usage: cocarry plan" in err
    assert "unsigned 64-bit" in err


def test_unknown_command(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["render"])
    assert exc.value.code == EXIT_CONFIG


def test_missing_config_flag(capsys):
    assert main(["ik"]) == EXIT_CONFIG
    assert "needs --config" in capsys.readouterr().err


def test_missing_scenario_file(tmp_path, capsys):
    assert main(["ik", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
    assert "not found" in capsys.readouterr().err


def test_ik_stage_prints_report(scenario_copy, tmp_path, capsys):
    path = scenario_copy("table")
    assert main(["ik", "--config", str(path), "--out", str(tmp_path / "run")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["frames_solved"] == 5
    assert (tmp_path / "run" / "ik.json").is_file()


def test_downstream_stage_reports_failing_stage(scenario_copy, tmp_path, capsys):
    path = scenario_copy("table")
    data = yaml.safe_load(path.read_text())
    data["geometry"]["forearm"] = 0.40
    path.write_text(yaml.safe_dump(data))

    assert main(["optimize", "--config", str(path), "--out", str(tmp_path / "run")]) == EXIT_STAGE
    assert "stage ik" in capsys.readouterr().err


def test_config_error_inside_stage_exits_two(scenario_copy, tmp_path, capsys):
    path = scenario_copy("table")
    data = yaml.safe_load(path.read_text())
    data["ik"] = {"frame": 40}
    path.write_text(yaml.safe_dump(data))

    assert main(["ik", "--config", str(path), "--out", str(tmp_path / "run")]) == EXIT_CONFIG


def test_invalid_scenario_content(scenario_copy, tmp_path, capsys):
    path = scenario_copy("table")
    data = yaml.safe_load(path.read_text())
    data["optimizer"]["starts"] = 0
    path.write_text(yaml.safe_dump(data))
    assert main(["run", "--config", str(path)]) == EXIT_CONFIG
    assert "optimizer.starts" in capsys.readouterr().err


@pytest.mark.slow
def test_full_run(scenario_copy, tmp_path, capsys):
    path = scenario_copy("table")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "run"), "--seed", "7"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["seed"] == 7
    assert report["scenario"] == "table"
    assert (tmp_path / "run" / "report.json").is_file()


@pytest.mark.slow
def test_batch_run_summarizes_and_reports_failures(fixtures_dir, tmp_path, capsys):
    batch = tmp_path / "batch"
    batch.mkdir()
    for path in fixtures_dir.glob("table*"):
        shutil.copy(path, batch / path.name)
    broken = yaml.safe_load((fixtures_dir / "table.yaml").read_text())
    broken["name"] = "broken"
    broken["geometry"]["upper_arm"] = 0.5
    (batch / "broken.yaml").write_text(yaml.safe_dump(broken))

    code = main(["run", "--batch", str(batch), "--out", str(tmp_path / "out"), "--workers", "1"])
    assert code == EXIT_STAGE
    overall = json.loads(capsys.readouterr().out)
    assert overall["runs"] == 2
    assert overall["succeeded"] == 1
    assert overall["failed"] == 1
    assert (tmp_path / "out" / "batch_summary.csv").is_file()
    assert (tmp_path / "out" / "table" / "report.json").is_file()
