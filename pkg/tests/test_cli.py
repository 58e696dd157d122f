import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from quasinoise.cli import TASKS, dumps, load_schema, main, validate_document

ROOT = Path(__file__).resolve().parents[1]
TABLE1 = ROOT / "scenarios" / "table1.json"
LONG = ROOT / "scenarios" / "long_sequence.json"


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "quasinoise", *map(str, args)], capture_output=True, text=True)


def scenario_for(task):
    return LONG if task == "long-sequence" else TABLE1


@pytest.mark.parametrize("task", [t for t in TASKS if t != "long-sequence"])
def test_every_task_emits_valid_json(task, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["--scenario", str(scenario_for(task)), "--task", task, "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    validate_document(report, "report")
    assert report["task"] == task


def test_long_sequence_task(tmp_path):
    out = tmp_path / "r.json"
    assert main(["--scenario", str(LONG), "--task", "long-sequence", "--out", str(out)]) == 0
    res = json.loads(out.read_text())["result"]
    assert res["independent"]["n_fail"] == 3
    assert res["delta_correlated"]["value"] < 0


@pytest.mark.parametrize("task", ["quasi", "positivity", "calibrate", "weak-limit", "moments"])
def test_deterministic_bytes(task, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for fmt in ("json", "csv"):
        for path in (a, b):
            assert main(["--scenario", str(TABLE1), "--task", task, "--out", str(path), "--format", fmt]) == 0
        assert a.read_bytes() == b.read_bytes()


def test_table1_demo_csv_needs_no_scenario(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["--task", "table1-demo", "--format", "csv", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "a,b,q"
    assert "0,-1,-0.5" in lines and len(lines) == 7


def test_noise_floor_defaults(tmp_path):
    out = tmp_path / "n.json"
    assert main(["--task", "noise-floor", "--out", str(out)]) == 0
    res = json.loads(out.read_text())["result"]
    assert 1e41 < res["n_macro"] < 1e42


def test_calibrate_reports_positive_variance(tmp_path):
    out = tmp_path / "c.json"
    assert main(["--scenario", str(TABLE1), "--task", "calibrate", "--out", str(out)]) == 0
    res = json.loads(out.read_text())["result"]
    assert res["D"] == 3 and res["variance"] > 0


def test_json_float_precision():
    assert dumps({"x": 0.1}).strip() == '{\n  "x": 0.10000000000000001\n}'
    assert dumps([float("nan")]).strip() == "[null]"
    assert dumps({"k": [1, 2.5, True, None]}).count("true") == 1


def _error(capsys):
    err = json.loads(capsys.readouterr().err)
    jsonschema.validate(err, load_schema("error"))
    return err["error"]


def test_unknown_task(capsys):
    assert main(["--scenario", str(TABLE1), "--task", "nope"]) == 1
    assert _error(capsys)["path"] == "--task"


def test_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["--scenario", str(bad), "--task", "quasi"]) == 1
    assert "malformed JSON" in _error(capsys)["message"]


def test_validation_error_names_json_path(tmp_path, capsys):
    doc = json.loads(TABLE1.read_text())
    doc["observables"]["A"][0][1] = [1, 1]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["--scenario", str(bad), "--task", "quasi"]) == 1
    assert _error(capsys)["path"] == "$.observables.A"


def test_schema_error_path(tmp_path, capsys):
    doc = json.loads(TABLE1.read_text())
    doc["schedule"][1]["time"] = "late"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["--scenario", str(bad), "--task", "quasi"]) == 1
    assert _error(capsys)["path"] == "$.schedule[1].time"


def test_unknown_observable(tmp_path, capsys):
    doc = json.loads(TABLE1.read_text())
    doc["schedule"][0]["observable"] = "C"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["--scenario", str(bad), "--task", "quasi"]) == 1
    assert _error(capsys)["path"] == "$.schedule[0].observable"


def test_missing_section(capsys):
    assert main(["--scenario", str(LONG), "--task", "quasi"]) == 1
    assert _error(capsys)["path"] == "$.schedule"


def test_resource_limit_exit_code(capsys):
    assert main(["--scenario", str(TABLE1), "--task", "quasi", "--limits", "atoms=2"]) == 2
    assert _error(capsys)["type"] == "resource"


def test_point_limit_exit_code(capsys):
    assert main(["--scenario", str(TABLE1), "--task", "positivity", "--limits", "points=50"]) == 2


def test_bad_limits(capsys):
    assert main(["--scenario", str(TABLE1), "--task", "quasi", "--limits", "nodes=5"]) == 1
    assert _error(capsys)["path"] == "--limits"


def test_threads_flag(tmp_path):
    out = tmp_path / "p.json"
    assert main(["--scenario", str(TABLE1), "--task", "convolve-eval", "--threads", "1", "--out", str(out)]) == 0


def test_subprocess_entry_point():
    proc = run_cli("--task", "table1-demo", "--format", "csv")
    assert proc.returncode == 0 and proc.stdout.startswith("a,b,q")
    proc = run_cli("--task", "quasi")
    assert proc.returncode == 1 and json.loads(proc.stderr)["error"]["path"] == "--scenario"


def test_scenario_schema_accepts_shipped_examples():
    for path in (TABLE1, LONG):
        validate_document(json.loads(path.read_text()), "scenario")
