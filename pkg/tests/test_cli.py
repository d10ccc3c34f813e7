"""CLI behavior: exit codes, printed reports, config resolution."""

import json

import pytest

from momasim import cli, service
from momasim.fixtures import data_path, suite_path, wipe_demo_paths
from momasim.records import DemonstrationRecord
from momasim.scripting import load_script, save_script


def world(name):
    return str(data_path(f"worlds/{name}.json"))


def script(name):
    return str(data_path(f"scripts/{name}.jsonl"))


def record(name):
    return str(data_path(f"records/{name}.jsonl"))


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_bundled_case_succeeds(capsys):
    code, out, _ = run_cli(capsys, "run", world("door_arc"), script("door_arc"))
    report = json.loads(out)
    assert code == 0 and report["success"] is True
    assert report["collision_ticks"] == 0


def test_run_truncated_script_fails(capsys, tmp_path):
    stub = tmp_path / "stub.jsonl"
    save_script(stub, load_script(script("door_arc"))[:5])
    code, out, _ = run_cli(capsys, "run", world("door_arc"), str(stub))
    assert code == 1
    assert json.loads(out)["success"] is False


def test_replay_bundled_record(capsys):
    code, out, _ = run_cli(capsys, "replay", record("clean_table"))
    report = json.loads(out)
    assert code == 0 and report["ok"] is True
    assert report["max_position_error"] < 1e-6
    assert report["first_divergence"] is None


def test_replay_detects_tampering(capsys, tmp_path):
    rec = DemonstrationRecord.load(record("door_arc"))
    rec.rows[40]["ee"]["p"][0] += 1e-3
    bad = tmp_path / "tampered.jsonl"
    rec.save(bad)
    code, out, _ = run_cli(capsys, "replay", str(bad))
    report = json.loads(out)
    assert code == 1 and report["ok"] is False
    assert report["first_divergence"] == 40
    assert report["max_position_error"] == pytest.approx(1e-3, rel=1e-6)


def test_fit_requires_two_demos(capsys, tmp_path):
    code, _, err = run_cli(
        capsys,
        "fit",
        record("wipe_demo_0"),
        "--task",
        world("wipe_table"),
        "-o",
        str(tmp_path / "m.json"),
    )
    assert code == 2
    assert "2 demos required" in err


def test_fit_then_rollout_both_policies(capsys, tmp_path):
    model = tmp_path / "wipe.json"
    demos = [str(p) for p in wipe_demo_paths()]
    code, out, _ = run_cli(
        capsys, "fit", *demos, "--task", world("wipe_table"), "-o", str(model)
    )
    assert code == 0
    summary = json.loads(out)
    assert summary["frames"] == ["table"] and model.exists()
    for policy in ("ee-agent", "whole-body"):
        code, out, _ = run_cli(
            capsys, "rollout", str(model), world("wipe_table"), "--policy", policy
        )
        assert code == 0, (policy, out)
        assert json.loads(out)["success"] is True


def test_eval_bundled_suite_passes(capsys):
    code, out, _ = run_cli(capsys, "eval", str(suite_path()))
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 4  # header + three cases
    assert all("pass" in line for line in lines[1:])


def test_eval_flags_failures(capsys, tmp_path):
    suite = {
        "cases": [
            {
                "name": "impossible",
                "world": world("door_arc"),
                "script": script("door_arc"),
                "require": {"max_rms": 1e-9},
            }
        ]
    }
    p = tmp_path / "suite.json"
    p.write_text(json.dumps(suite))
    code, out, _ = run_cli(capsys, "eval", str(p))
    assert code == 1 and "FAIL" in out


@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        ["replay", "--frobnicate", "x"],
        ["rollout", "m.json", "w.json", "--policy", "sideways"],
        [],
    ],
)
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_sim_reads_config_from_env(capsys, tmp_path, monkeypatch):
    captured = {}
    monkeypatch.setattr(service, "serve", lambda cfg: captured.update(cfg=cfg))
    cfg_path = tmp_path / "session.json"
    cfg_path.write_text(json.dumps({"world": world("clean_table"), "tick_hz": 120.0}))
    monkeypatch.setenv("MOMA_CONFIG", str(cfg_path))
    assert cli.main(["sim"]) == 0
    assert captured["cfg"].tick_hz == 120.0
    assert captured["cfg"].world == world("clean_table")
    # explicit flags win over the config file
    assert cli.main(["sim", "--tick-hz", "80"]) == 0
    assert captured["cfg"].tick_hz == 80.0


def test_sim_rejects_invalid_config(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr(service, "serve", lambda cfg: None)
    cfg_path = tmp_path / "session.json"
    cfg_path.write_text(json.dumps({"tick_hz": 5.0}))
    code, _, err = run_cli(capsys, "sim", "--config", str(cfg_path))
    assert code == 2 and "tick" in err
