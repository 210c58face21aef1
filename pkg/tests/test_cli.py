import json

import pytest

from phantomlab.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_run_prints_verdict_and_flaws(capsys):
    code, out, _ = run(capsys, "run", "--profile", "KASA", "--attack", "dos", "--expect", "success")
    assert code == 0
    assert "SUCCESS, flaws={F1.2}" in out


def test_expect_mismatch_exits_one(capsys):
    code, out, _ = run(capsys, "run", "--profile", "SmartThings", "--attack", "substitution",
                       "--expect", "success")
    assert code == 1 and "expected success, got failure" in out


def test_not_applicable_expectation(capsys):
    code, _, _ = run(capsys, "run", "--profile", "joylink", "--attack", "hijacking",
                     "--expect", "NotApplicable")
    assert code == 0


@pytest.mark.parametrize("argv,needle", [
    (["run", "--profile", "Alink"], "attack"),
    (["run", "--attack", "dos"], "profile"),
    (["run", "--profile", "Nest", "--attack", "dos"], "profile"),
    (["run", "--profile", "Alink", "--attack", "dos", "--flaws", "F1.2"], "flaws"),
    (["run", "--profile", "Alink", "--attack", "dos", "--mitigations", "M9"], "mitigations"),
    (["run", "--profile", "Alink", "--attack", "dos", "--grants", "Q"], "grants"),
    (["run", "--profile", "Alink", "--attack", "dos", "--expect", "maybe"], "expect"),
    (["matrix", "--expect", "success"], "expect"),
    (["matrix", "--flaws", "F2"], "flaws"),
    (["explore", "--profile", "Alink", "--depth", "-1"], "depth"),
])
def test_config_errors_exit_two_without_traceback(capsys, argv, needle):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert needle in err and "Traceback" not in err


def test_unknown_command_exits_two(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 2 and "Traceback" not in err


def test_matrix_expect_table3(capsys, tmp_path):
    report = tmp_path / "m.json"
    code, out, _ = run(capsys, "matrix", "--expect", "table3", "--report", str(report))
    assert code == 0 and "matches table3" in out
    assert json.loads(report.read_text())["matches_table3"] is True


def test_matrix_with_mitigations_mismatches(capsys):
    code, out, _ = run(capsys, "matrix", "--expect", "table3", "--mitigations", "M1,M2,M3")
    assert code == 1 and "mismatch" in out


def test_explore_depth_zero(capsys):
    code, out, _ = run(capsys, "explore", "--profile", "Alink", "--depth", "0")
    assert code == 0
    assert out.splitlines()[0] == "(S1,S1,S1)"


def test_explore_marks_illegal(capsys):
    code, out, _ = run(capsys, "explore", "--profile", "Alink", "--depth", "10")
    assert code == 0 and "(S1,S4,S1)  ILLEGAL" in out


def test_trace_and_report_files(capsys, tmp_path):
    trace, report = tmp_path / "t.jsonl", tmp_path / "r.json"
    code, _, _ = run(capsys, "run", "--profile", "Alink", "--attack", "dos", "--seed", "3",
                     "--trace", str(trace), "--report", str(report))
    assert code == 0
    lines = trace.read_text().splitlines()
    assert lines and all(json.loads(line)["kind"] for line in lines)
    assert json.loads(report.read_text())["exploited_flaws"] == ["F1.1", "F1.3", "F3", "F4"]


def test_seed_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("PHANTOMLAB_SEED", "42")
    _, out, _ = run(capsys, "run", "--profile", "Alink", "--attack", "dos")
    assert "(seed 42)" in out
    monkeypatch.setenv("PHANTOMLAB_SEED", "x")
    code, _, err = run(capsys, "run", "--profile", "Alink", "--attack", "dos")
    assert code == 2 and "PHANTOMLAB_SEED" in err


def test_scenario_file(capsys, tmp_path):
    f = tmp_path / "s.yaml"
    f.write_text("profile: MIJIA\nattack: hijacking\nmitigations: [M2]\nexpect: failure\n")
    code, out, _ = run(capsys, "run", "--scenario", str(f))
    assert code == 0 and "MIJIA / Hijacking" in out
    bad = tmp_path / "b.json"
    bad.write_text('{"profile": "MIJIA", "colour": 1}')
    code, _, err = run(capsys, "run", "--scenario", str(bad))
    assert code == 2 and "colour" in err


def test_list_profiles(capsys):
    code, out, _ = run(capsys, "list-profiles")
    assert code == 0
    assert [line.split()[0] for line in out.splitlines() if not line.startswith(" ")] == \
        ["Alink", "Joylink", "KASA", "MIJIA", "SmartThings"]
