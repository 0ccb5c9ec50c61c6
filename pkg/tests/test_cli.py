import dataclasses
import filecmp
import runpy
import shutil
from pathlib import Path

import pytest

from leosched import cli
from leosched.estimator import read_telemetry
from leosched.orchestrator import BACKUP, EXECUTED, read_runlog
from leosched.scheduler import read_schedule, read_trace

ROOT = Path(__file__).resolve().parent.parent
SCEN = ROOT / "scenarios"
TD = SCEN / "twoday"


def leosched(*argv):
    return cli.main([str(a) for a in argv])


def tree_bytes(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


class TestValidate:
    @pytest.mark.parametrize("name", ["twoday", "gomx4", "oracle12", "empty"])
    def test_fixtures_ok(self, name, capsys):
        assert leosched("validate", "--scenario-dir", SCEN / name) == 0
        assert "ok" in capsys.readouterr().out

    def test_with_fail_script(self, capsys):
        assert leosched("validate", "--scenario-dir", TD, "--fail-script", TD / "fail.csv") == 0
        assert "1 failing passes" in capsys.readouterr().out

    def test_malformed_row_reports_location(self, tmp_path, capsys):
        d = tmp_path / "sc"
        shutil.copytree(TD, d)
        lines = (d / "windows.csv").read_text().splitlines()
        lines[3] = lines[3].replace(",isl,", ",isl,abc,", 1)
        (d / "windows.csv").write_text("\n".join(lines) + "\n")
        assert leosched("validate", "--scenario-dir", d) == 1
        err = capsys.readouterr().err
        assert "windows.csv:4" in err

    def test_missing_file_named(self, tmp_path, capsys):
        d = tmp_path / "sc"
        shutil.copytree(TD, d)
        (d / "sunlight.csv").unlink()
        assert leosched("validate", "--scenario-dir", d) == 1
        assert "sunlight.csv" in capsys.readouterr().err

    def test_missing_battery(self, tmp_path, capsys):
        assert leosched("validate", "--scenario-dir", TD, "--battery", tmp_path / "nope.ini") == 1
        assert "nope.ini" in capsys.readouterr().err


class TestPlan:
    def test_empty_scenario(self, tmp_path, capsys):
        assert leosched("plan", "--scenario-dir", SCEN / "empty", "--out", tmp_path) == 0
        assert "total reward 0," in capsys.readouterr().out
        assert read_schedule(tmp_path / "schedule.csv") == []
        assert len(read_trace(tmp_path / "trace.csv")) >= 2

    def test_oracle12_reward(self, tmp_path, capsys):
        assert leosched("plan", "--scenario-dir", SCEN / "oracle12", "--horizon-h", 6, "--out", tmp_path) == 0
        assert "total reward 36," in capsys.readouterr().out
        ids = {t.window_id for t in read_schedule(tmp_path / "schedule.csv")}
        assert ids == {
            "isl-000n.1", "isl-000n.2", "isl-000n.3", "isl-001n.1", "isl-001n.3",
            "cam-001", "cam-002", "adsb-001", "hsl-svb-002",
        }

    def test_gomx4_two_days(self, tmp_path, capsys):
        assert leosched("plan", "--scenario-dir", SCEN / "gomx4", "--horizon-h", 48, "--out", tmp_path) == 0
        out = capsys.readouterr()
        assert "planned" in out.err and "total reward" in out.out
        trace = read_trace(tmp_path / "trace.csv")
        assert min(s.total for s in trace) >= 0.6 * 36000.0 - 1e-6

    def test_infeasible_exit_2(self, tmp_path, capsys):
        assert leosched("plan", "--scenario-dir", TD, "--soc-floor", 0.9, "--out", tmp_path) == 2
        assert "error" in capsys.readouterr().err

    def test_check_failure_exit_3(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(cli, "plausibility_check", lambda *a, **k: "window at t=0: forced")
        assert leosched("plan", "--scenario-dir", TD, "--out", tmp_path) == 3
        assert "internal error" in capsys.readouterr().err

    def test_bad_horizon(self, tmp_path):
        assert leosched("plan", "--scenario-dir", TD, "--horizon-h", 0, "--out", tmp_path) == 1


class TestRun:
    def test_twoday(self, tmp_path, capsys):
        code = leosched("run", "--scenario-dir", TD, "--fail-script", TD / "fail.csv", "--out", tmp_path)
        assert code == 0
        recs = read_runlog(tmp_path / "runlog.csv")
        assert [r.outcome for r in recs] == [EXECUTED] * 4 + [BACKUP]
        assert 0.03 <= recs[0].correction <= 0.07
        assert "BackupPlan" in capsys.readouterr().out
        assert (tmp_path / "plans" / "plan_005_schedule.csv").is_file()
        assert len(read_telemetry(tmp_path / "telemetry.csv")) > 1000
        assert read_trace(tmp_path / "truth_trace.csv")
        assert read_schedule(tmp_path / "executed.csv")

    def test_exact_truth_needs_no_correction(self, tmp_path):
        assert leosched("run", "--scenario-dir", TD, "--truth", TD / "truth_exact.ini", "--out", tmp_path) == 0
        assert all(abs(r.correction) < 1e-6 for r in read_runlog(tmp_path / "runlog.csv"))

    def test_rerun_is_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert leosched("run", "--scenario-dir", TD, "--fail-script", TD / "fail.csv", "--out", tmp_path / d) == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_seed_changes_telemetry(self, tmp_path):
        for d, seed in (("a", 1), ("b", 2)):
            assert leosched("run", "--scenario-dir", TD, "--seed", seed, "--out", tmp_path / d) == 0
        assert not filecmp.cmp(tmp_path / "a" / "telemetry.csv", tmp_path / "b" / "telemetry.csv", shallow=False)

    def test_without_truth(self, tmp_path, capsys):
        assert leosched("run", "--scenario-dir", SCEN / "oracle12", "--out", tmp_path) == 1
        assert "truth" in capsys.readouterr().err

    def test_ground_log_disagrees_exit_3(self, tmp_path, monkeypatch):
        real = cli.run

        def forged(*a, **k):
            log = real(*a, **k)
            log.records[0] = dataclasses.replace(log.records[0], plan_id=None, outcome=BACKUP)
            return log

        monkeypatch.setattr(cli, "run", forged)
        assert leosched("run", "--scenario-dir", TD, "--out", tmp_path) == 3


class TestCompare:
    def test_empty(self, tmp_path, capsys):
        assert leosched("compare", "--scenario-dir", SCEN / "empty", "--span-h", 24, "--out", tmp_path) == 0
        assert (tmp_path / "compare.csv").read_text().strip() == ",".join(cli.COMPARE_HEADER)
        assert "receding reward 0 " in capsys.readouterr().out

    def test_twoday(self, tmp_path, capsys):
        assert leosched("compare", "--scenario-dir", TD, "--fail-script", TD / "fail.csv", "--out", tmp_path) == 0
        rows = (tmp_path / "compare_totals.csv").read_text().splitlines()[1:]
        rec = sum(float(r.split(",")[2]) for r in rows)
        mono = sum(float(r.split(",")[4]) for r in rows)
        assert rec >= mono > 0
        assert read_schedule(tmp_path / "monolithic_schedule.csv")


def test_module_entry_point(tmp_path, monkeypatch):
    monkeypatch.setattr("sys.argv", ["leosched", "validate", "--scenario-dir", str(SCEN / "empty")])
    with pytest.raises(SystemExit) as exc:
        runpy.run_module("leosched", run_name="__main__")
    assert exc.value.code == 0


def test_fixtures_regenerate_identically(tmp_path):
    build = runpy.run_path(str(ROOT / "scripts" / "build_fixtures.py"))["build"]
    build(tmp_path)
    assert tree_bytes(tmp_path) == tree_bytes(SCEN)
