import csv
import json

import pytest

from toolsim import cli
from toolsim.demo import demo_helper
from toolsim.llm import ScriptedBackend


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    assert cli.main(["demo", "--out", str(out)]) == 0
    return out


def run_args(demo, out, *extra):
    return ["run", "--tasks", str(demo / "tasks.json"), "--fixtures", str(demo / "fixtures.jsonl"), "--out", str(out), *extra]


def test_demo_layout(demo):
    assert (demo / "manifest.json").exists() and (demo / "fixtures.jsonl").exists()
    assert len(list((demo / "tools").glob("*.json"))) == 7
    assert len(json.loads((demo / "tasks.json").read_text())) == 15


def test_run_is_byte_identical_under_replay(demo, tmp_path, capsys):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(run_args(demo, first, "--figures", str(tmp_path / "figs"))) == 0
    assert cli.main(run_args(demo, second)) == 0
    assert first.read_bytes() == second.read_bytes()
    summary = json.loads(first.read_text())["summary"]
    assert summary["oracle_passes"] == summary["tasks"] == 15
    assert (tmp_path / "figs" / "attempts.png").stat().st_size > 0
    assert "15/15 tasks passed" in capsys.readouterr().out


def test_run_budget_zero_and_timings(demo, tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(run_args(demo, out, "--max-retries", "0", "--timings")) == 0
    data = json.loads(out.read_text())
    assert all(len(r["attempts"]) == 1 and r["restores"] == 0 for r in data["results"])
    assert all("wall_time" in r for r in data["results"])
    assert data["summary"]["accuracy"] < 1.0


def test_sweep_writes_csv_and_figure(demo, tmp_path):
    out = tmp_path / "sweep.csv"
    assert cli.main(["sweep", "--tasks", str(demo / "tasks.json"), "--fixtures", str(demo / "fixtures.jsonl"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    accuracy = [float(r["accuracy"]) for r in rows]
    assert [int(r["retries"]) for r in rows] == [0, 1, 2, 3]
    assert accuracy == sorted(accuracy) and accuracy[-1] == 1.0
    assert out.with_suffix(".png").stat().st_size > 0


def test_missing_fixture_is_reported(demo, tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code = cli.main(["run", "--tasks", str(demo / "tasks.json"), "--fixtures", str(empty), "--out", str(tmp_path / "x.json")])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_check(demo, tmp_path, capsys):
    good = demo / "tools" / "add_to_cart.json"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"openapi": "3.1.0"}))
    assert cli.main(["check", str(good)]) == 0
    assert cli.main(["check", str(good), str(bad)]) == 1
    out = capsys.readouterr().out
    assert f"{good}: valid" in out and f"{bad}:" in out and "violation" in out


def test_convert(tmp_path, monkeypatch, capsys):
    raw = tmp_path / "raw"
    raw.mkdir()
    (raw / "tools.py").write_text('def book_table(restaurant: str, party_size: int = 2) -> dict:\n    """Reserve a table."""\n')
    monkeypatch.setattr(cli, "_backend", lambda args: ScriptedBackend(demo_helper()))
    manifest = tmp_path / "out" / "manifest.json"
    assert cli.main(["convert", "--in", str(raw), "--out", str(tmp_path / "out" / "tools"), "--manifest", str(manifest)]) == 0
    assert "converted 1 tool(s)" in capsys.readouterr().out
    assert cli.main(["check", str(tmp_path / "out" / "tools" / "book_table.json")]) == 0
    assert json.loads(manifest.read_text())
