"""Command-line behaviour and exit codes."""

import json

import pytest

from skillforge import cli, sac
from skillforge.numerics import ParamStore

FORWARD = "Move forward: travel as far as possible in the positive x direction."
STILL = "Stand still: keep the mass at the origin without moving."


def write_config(path, tiny_sac, **kw):
    doc = {"task": STILL, "env": "pointmass", "max_iterations": 2, "sac": tiny_sac,
           "llm": {"mode": "stub:happy_path"}, "run_dir": "run"}
    doc.update(kw)
    path.write_text(json.dumps(doc, indent=2))
    return path


@pytest.fixture
def finished_run(tmp_path, tiny_sac):
    cfg = write_config(tmp_path / "cfg.json", tiny_sac)
    assert cli.main(["run", str(cfg), "-q"]) == 0
    return tmp_path / "run"


def test_run_satisfied_exits_zero(tmp_path, tiny_sac, capsys):
    cfg = write_config(tmp_path / "cfg.json", tiny_sac)
    assert cli.main(["run", str(cfg), "-q"]) == 0
    assert "status: satisfied after 1 iteration(s)" in capsys.readouterr().out
    cfg = json.loads((tmp_path / "run" / "config.json").read_text())
    assert cfg["task"]["task"] == STILL and cfg["llm"]["mode"] == "stub:happy_path"


def test_run_exhausted_exits_two(tmp_path, tiny_sac):
    cfg = write_config(tmp_path / "cfg.json", tiny_sac, task=FORWARD, llm={"mode": "stub:always_unsatisfied"})
    assert cli.main(["run", str(cfg), "-q"]) == 2


def test_run_failed_exits_one(tmp_path, tiny_sac, capsys):
    cfg = write_config(tmp_path / "cfg.json", tiny_sac, max_attempts=1, llm={"mode": "stub:garbage"})
    assert cli.main(["run", str(cfg), "-q"]) == 1
    assert "stage rfg" in capsys.readouterr().out


def test_config_errors_exit_64_with_location(tmp_path, tiny_sac, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n  "task": "t",\n  "env": "pointmass",\n  "bogus": 1\n}')
    assert cli.main(["run", str(cfg)]) == 64
    assert f"{cfg}:4:3: bogus: unknown key" in capsys.readouterr().err
    cfg.write_text('{"task": "t", "env": "pendulum"}')
    assert cli.main(["run", str(cfg)]) == 64
    cfg.write_text('{"task": "t", "env": "pointmass", "sac": {"seed": 1}}')
    assert cli.main(["run", str(cfg)]) == 64
    assert "derived from the run seed" in capsys.readouterr().err
    cfg.write_text('{"task": "t", "env": "pointmass", "llm": {"mode": "live"}}')
    assert cli.main(["run", str(cfg)]) == 64
    cfg.write_text('{"task": "t",')
    assert cli.main(["run", str(cfg)]) == 64
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 64
    assert cli.main(["frobnicate"]) == 64


def test_second_run_into_same_dir_is_refused(finished_run, tmp_path, tiny_sac):
    assert cli.main(["run", str(tmp_path / "cfg.json"), "-q"]) == 64


def test_replay_identical_and_tampered(finished_run, capsys):
    assert cli.main(["replay", str(finished_run), "-q"]) == 0
    assert "replay identical" in capsys.readouterr().out
    assert not (finished_run / ".replay").exists()
    prog = finished_run / "iter_000" / "reward_program.rdsl"
    prog.write_text(prog.read_text().replace("0.1", "0.2"))
    assert cli.main(["replay", str(finished_run), "-q"]) == 1
    out = capsys.readouterr().out
    assert "replay diverged" in out and "reward_program.rdsl differs at byte" in out


def test_replay_without_cassette_is_usage_error(finished_run):
    (finished_run / "cassette.jsonl").unlink()
    assert cli.main(["replay", str(finished_run)]) == 64


def test_first_divergence_offsets(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    (a / "f.txt").write_text("hello")
    (b / "f.txt").write_text("help!")
    assert cli.first_divergence(a, b) == ("f.txt", 3)
    (b / "f.txt").write_text("hello")
    assert cli.first_divergence(a, b) is None
    (b / "g.txt").write_text("x")
    assert cli.first_divergence(a, b) == ("g.txt", 0)


def test_inspect_table_json_and_plots(finished_run, capsys):
    assert cli.main(["inspect", str(finished_run)]) == 0
    out = capsys.readouterr().out
    assert "status satisfied" in out and "mean_abs_x =" in out
    assert (finished_run / "iter_000" / "training_curve.svg").read_text().startswith("<svg")
    assert cli.main(["inspect", str(finished_run), "--json", "--no-plots"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["iterations"][0]["attempts"] == {"ee": 1, "rfg": 1, "efg": 1, "pe": 1}
    assert report["iterations"][0]["satisfied"] is True


def test_inspect_non_run_dir(tmp_path):
    assert cli.main(["inspect", str(tmp_path)]) == 64


def test_resume_finished_run(finished_run, capsys):
    assert cli.main(["resume", str(finished_run), "-q"]) == 0
    assert cli.main(["resume", str(finished_run.parent / "nope")]) == 64


def test_bench_rates_and_outputs(tmp_path, tiny_sac, capsys):
    tasks = tmp_path / "tasks.json"
    tasks.write_text(json.dumps({"max_iterations": 1, "sac": tiny_sac, "tasks": [
        {"task": STILL, "env": "pointmass"},
        {"task": FORWARD, "env": "pointmass"},
    ]}))
    code = cli.main(["bench", str(tasks), "--out", str(tmp_path / "out"), "--json"])
    summary = json.loads(capsys.readouterr().out)
    rows = summary["rows"]
    assert rows[0]["status"] == "satisfied" and rows[0]["headline_metric"] == "mean_abs_x"
    assert rows[1]["oracle_value"] == pytest.approx(16.1, abs=0.2)
    assert rows[1]["baseline_value"] is not None
    expected = sum(r["status"] == "satisfied" for r in rows) / 2
    assert summary["success_rate"] == expected
    assert code == (0 if expected == 1.0 else 2)
    assert (tmp_path / "out" / "summary.csv").read_text().startswith("task,env,status")
    assert "success rate:" in (tmp_path / "out" / "summary.txt").read_text()


def test_bench_usage_errors(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text('{"tasks": []}')
    assert cli.main(["bench", str(empty)]) == 64
    empty.write_text("")
    assert cli.main(["bench", str(empty)]) == 64
    assert cli.main(["bench"]) == 64
    assert cli.main(["bench", "--suite", "huge"]) == 64
    assert cli.main(["bench", "--suite", "desk", "--provider", "replay"]) == 64


def test_check_pristine_and_injected_bug(monkeypatch, capsys):
    assert cli.main(["check", "-v"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "5/5 checks passed" in out

    real = sac.critic_loss_and_grad

    def wrong(critic, obs, act, target):
        loss, g = real(critic, obs, act, target)
        return loss, ParamStore(g.spec, 1.5 * g.flat)

    monkeypatch.setattr(sac, "critic_loss_and_grad", wrong)
    assert cli.main(["check"]) == 1
    out = capsys.readouterr().out
    assert "FAIL  gradients" in out and "critic relative error" in out
