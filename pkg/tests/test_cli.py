import numpy as np
import pytest

from spreadopt.cli import main

TINY_SCENARIO = """\
[field]
side_length = 40
n_cells = 8
origin_x = 0
origin_y = 0

[prescription]
uniform = 20

[plan]
start_x = 6
start_y = 20
start_heading = 0
segments =
    5 0 3

[run]
dt = 1
controller = greedy
horizon = 2
scaling = literal

[controls]
flow_left = 45
flow_right = 45
rpm_left = 600
rpm_right = 600
"""

BAD_CALIBRATION = """\
[pattern]
distance = 0.02 3
sigma_distance = 0 0.0033333333333333335 0
angle = 1e-7 0 pi/4
sigma_angle = 1e-8 0 -0.3

[constraints]
flow_min = 0
flow_max = 200
rpm_min = 300
rpm_max = 900
flow_rate_max = 20
rpm_rate_max = 100
"""


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_SCENARIO)
    return path


def summary_pairs(path):
    pairs = []
    for line in path.read_text().splitlines():
        key, _, value = line.partition(" = ")
        pairs.append((key, value))
    return pairs


def test_run_writes_the_output_files(scenario_file, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--scenario", str(scenario_file), "--out", str(out)])
    assert code == 0
    assert (out / "A.csv").exists()
    assert (out / "trace.csv").exists()
    assert (out / "summary.txt").exists()
    assert "final cost" in capsys.readouterr().out


def test_run_summary_lists_the_resolved_configuration(scenario_file, tmp_path):
    out = tmp_path / "out"
    main(["run", "--scenario", str(scenario_file), "--out", str(out)])
    pairs = summary_pairs(out / "summary.txt")
    table = dict(pairs)
    assert table["command"] == "run"
    assert table["controller"] == "greedy"
    assert table["n_steps"] == "3"
    assert float(table["final_cost"]) > 0
    assert len(table["settings_hash"]) == 64
    assert table["field.n_cells"] == "8"
    assert table["run.dt"] == "1.0"
    assert table["run.horizon"] == "2"
    assert pairs[-1][0] == "wall_clock.controller_seconds"


def test_run_controller_override_and_horizon_warning(scenario_file, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--scenario", str(scenario_file), "--out", str(out),
                 "--controller", "greedy", "--horizon", "5"])
    assert code == 0
    assert "ignored by the greedy controller" in capsys.readouterr().err


def test_missing_calibration_file_fails_cleanly(scenario_file, tmp_path, capsys):
    missing = tmp_path / "nope.ini"
    code = main(["run", "--scenario", str(scenario_file), "--out", str(tmp_path / "o"),
                 "--calibration", str(missing)])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_missing_scenario_file_fails_cleanly(tmp_path, capsys):
    missing = tmp_path / "gone.ini"
    code = main(["run", "--scenario", str(missing), "--out", str(tmp_path / "o")])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_malformed_scenario_fails_cleanly(tmp_path, capsys):
    path = tmp_path / "broken.ini"
    path.write_text("[field]\nside_length = forty\n")
    code = main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_invalid_calibration_names_the_problem(scenario_file, tmp_path, capsys):
    bad = tmp_path / "bad_cal.ini"
    bad.write_text(BAD_CALIBRATION)
    code = main(["validate", "--scenario", str(scenario_file), "--calibration", str(bad)])
    assert code == 1
    assert "sigma_angle" in capsys.readouterr().err


def test_validate_echoes_the_configuration_and_says_ok(scenario_file, capsys):
    code = main(["validate", "--scenario", str(scenario_file)])
    assert code == 0
    out = capsys.readouterr().out
    assert "field.n_cells = 8" in out
    assert "run.dt = 1.0" in out
    assert "run.horizon = 2" in out
    assert out.rstrip().endswith("ok")


def test_validate_flags_initial_controls_outside_the_boxes(tmp_path, capsys):
    path = tmp_path / "hot.ini"
    path.write_text(TINY_SCENARIO.replace("flow_left = 45", "flow_left = 300"))
    code = main(["validate", "--scenario", str(path)])
    assert code == 1
    captured = capsys.readouterr()
    assert "problem:" in captured.err
    assert "ok" not in captured.out.splitlines()[-1]


def test_validate_the_builtin_scenario(capsys):
    code = main(["validate"])
    assert code == 0
    out = capsys.readouterr().out
    assert "field.n_cells = 90" in out
    assert "run.controller = mpc-full" in out


def test_compare_subset_writes_ranking_and_per_controller_outputs(scenario_file, tmp_path, capsys):
    out = tmp_path / "cmp"
    code = main(["compare", "--scenario", str(scenario_file), "--out", str(out),
                 "--only", "greedy,mpc-full"])
    assert code == 0
    lines = (out / "comparison.csv").read_text().splitlines()
    assert lines[0] == "controller,final_cost,wall_clock"
    assert len(lines) == 3
    assert lines[1].startswith("greedy,")
    assert lines[2].startswith("mpc-full,")
    for name in ("greedy", "mpc-full"):
        assert (out / name / "trace.csv").exists()
        assert (out / name / "summary.txt").exists()
    assert "ranking = " in (out / "summary.txt").read_text()
    stdout = capsys.readouterr().out
    assert "greedy: final cost" in stdout


def test_compare_with_an_empty_only_list_is_a_usage_error(scenario_file, tmp_path, capsys):
    code = main(["compare", "--scenario", str(scenario_file),
                 "--out", str(tmp_path / "o"), "--only", " , "])
    assert code == 1
    assert "--only" in capsys.readouterr().err


def test_compare_with_an_unknown_controller_fails(scenario_file, tmp_path, capsys):
    code = main(["compare", "--scenario", str(scenario_file),
                 "--out", str(tmp_path / "o"), "--only", "wizard"])
    assert code == 1
    assert "wizard" in capsys.readouterr().err


def test_unknown_controller_choice_is_a_usage_error(scenario_file, tmp_path, capsys):
    code = main(["run", "--scenario", str(scenario_file), "--out", str(tmp_path / "o"),
                 "--controller", "wizard"])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_horizon_must_be_positive(scenario_file, tmp_path, capsys):
    code = main(["run", "--scenario", str(scenario_file), "--out", str(tmp_path / "o"),
                 "--horizon", "0"])
    assert code == 1
    assert "--horizon" in capsys.readouterr().err


def test_missing_subcommand_is_a_usage_error(capsys):
    assert main([]) == 1
    assert "error:" in capsys.readouterr().err


def test_repeated_runs_are_byte_identical(scenario_file, tmp_path):
    first = tmp_path / "a"
    second = tmp_path / "b"
    for out in (first, second):
        code = main(["run", "--scenario", str(scenario_file), "--out", str(out),
                     "--controller", "mpc-full"])
        assert code == 0
    assert (first / "A.csv").read_bytes() == (second / "A.csv").read_bytes()
    assert (first / "trace.csv").read_bytes() == (second / "trace.csv").read_bytes()
    hash_of = lambda p: dict(summary_pairs(p / "summary.txt"))["settings_hash"]
    assert hash_of(first) == hash_of(second)


def test_repeated_comparisons_are_byte_identical(scenario_file, tmp_path):
    first = tmp_path / "a"
    second = tmp_path / "b"
    for out in (first, second):
        code = main(["compare", "--scenario", str(scenario_file), "--out", str(out),
                     "--only", "greedy,mpc-triangle"])
        assert code == 0
    left = (first / "comparison.csv").read_text().splitlines()
    right = (second / "comparison.csv").read_text().splitlines()
    assert len(left) == len(right) == 3
    for a, b in zip(left[1:], right[1:]):
        assert a.split(",")[:2] == b.split(",")[:2]  # cost column bitwise


def test_verbose_run_writes_a_log_file(scenario_file, tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--scenario", str(scenario_file), "--out", str(out), "--verbose"])
    assert code == 0
    assert (out / "run.log").exists()
    assert (out / "run.log").stat().st_size > 0
